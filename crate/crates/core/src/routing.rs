//! Dynamic truck repositioning on a time-expanded network.
//!
//! Vertices are `(station, step)` pairs on a 5-minute grid. Each vertex
//! carries the predicted fill level; arcs are truck journeys whose length
//! is the effective journey time including handling. A truck route is
//! grown as a tree of promising candidates, each leaf's load actions are
//! refined with a small QP, and trucks are planned one after another with
//! collision repair.

use serde::{Deserialize, Serialize};

use crate::demand::Geometry;
use crate::qp::{self, QpInstance, QpSettings, QpStatus};
use crate::utility::{saturate, utility_fast, Plateau};

pub const STEP_MINUTES: i64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    /// Truck capacity in bikes.
    pub max_load: u32,
    /// Stations per planned route.
    pub max_stops: usize,
    /// A route is complete once it spans this many minutes.
    pub min_plan_minutes: i64,
    /// Actions starting within this many minutes of a tick are committed.
    pub implementation_minutes: i64,
    pub truck_speed_kmh: f64,
    pub handling_minutes: i64,
    /// Children per tree node chosen by utility rate.
    pub branching: usize,
    /// Cap on bikes stored at or fetched from an intermittent depot.
    pub depot_cap: u32,
    pub window_start_minute: i64,
    pub window_end_minute: i64,
    /// Depot station; the station nearest the network centroid when unset.
    pub depot: Option<usize>,
    /// Divisor of the squared-move penalty in the refinement QP.
    pub penalty_q: f64,
    /// Bound on sequential planning rounds per tick.
    pub max_planning_rounds: usize,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        let max_load = 20;
        RoutingConfig {
            max_load,
            max_stops: 4,
            min_plan_minutes: 40,
            implementation_minutes: 30,
            truck_speed_kmh: 15.0,
            handling_minutes: 5,
            branching: 3,
            depot_cap: 10,
            window_start_minute: 8 * 60,
            window_end_minute: 22 * 60,
            depot: None,
            penalty_q: 10.0 * (2.0 * (max_load as f64).powi(2) + 1.0),
            max_planning_rounds: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RoutingError {
    #[error("invalid routing config: {0}")]
    Config(&'static str),
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<(), RoutingError> {
        if self.branching == 0 {
            return Err(RoutingError::Config("branching must be at least 1"));
        }
        if self.depot_cap == 0 || self.depot_cap > self.max_load {
            return Err(RoutingError::Config("depot cap must lie in 1..=max_load"));
        }
        if self.implementation_minutes > self.min_plan_minutes {
            return Err(RoutingError::Config("implementation horizon exceeds planning horizon"));
        }
        if self.truck_speed_kmh <= 0.0 || self.window_end_minute <= self.window_start_minute {
            return Err(RoutingError::Config("speed and operating window must be positive"));
        }
        Ok(())
    }

    /// Kilometres covered in one grid step.
    fn km_per_step(&self) -> f64 {
        self.truck_speed_kmh * STEP_MINUTES as f64 / 60.0
    }
}

/// Steps to drive `distance_km` and handle bikes at the destination.
pub fn effective_journey_time(distance_km: f64, config: &RoutingConfig) -> usize {
    let handling = (config.handling_minutes + STEP_MINUTES - 1) / STEP_MINUTES;
    (distance_km / config.km_per_step()).ceil() as usize + handling as usize
}

/// Greedy move toward the plateau, limited by the truck's load and free
/// space. Positive values drop bikes at the station.
pub fn greedy_best_action(fill: f64, plateau: &Plateau<f64>, load: i32, max_load: i32) -> i32 {
    if fill > plateau.upper {
        (load - max_load).max((plateau.upper - fill).ceil() as i32)
    } else if fill < plateau.lower {
        load.min((plateau.lower - fill).floor() as i32)
    } else {
        0
    }
}

/// Station depot nearest the centroid of the station positions.
pub fn default_depot(geometry: &Geometry) -> usize {
    let n = geometry.len().max(1) as f64;
    let cx = geometry.positions.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = geometry.positions.iter().map(|p| p.1).sum::<f64>() / n;
    (0..geometry.len())
        .min_by(|&a, &b| {
            let da = (geometry.positions[a].0 - cx).hypot(geometry.positions[a].1 - cy);
            let db = (geometry.positions[b].0 - cx).hypot(geometry.positions[b].1 - cy);
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .unwrap_or(0)
}

/// Predicted net change and plateau bounds, supplied by the caller.
pub trait Forecaster {
    /// Expected net change per minute at `station` during `minute`.
    fn net_change(&self, station: usize, minute: i64) -> f64;
    fn plateau(&self, station: usize, minute: i64) -> Plateau<f64>;
}

/// One repositioning action of a truck plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub truck: usize,
    pub station: usize,
    /// Arrival minute at the station.
    pub minute: i64,
    /// Bikes moved into the station; negative for pickups.
    pub delta: i32,
    /// Truck load after the action.
    pub load_after: i32,
}

/// Where a truck is free to start its next route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruckState {
    pub id: usize,
    pub station: usize,
    pub minute: i64,
    pub load: i32,
}

/// Stations × 5-minute steps with predicted fills and an undoable
/// overlay of planned actions.
#[derive(Debug, Clone)]
pub struct TimeExpandedNetwork {
    start_minute: i64,
    steps: usize,
    depot: usize,
    capacities: Vec<f64>,
    /// Row-major effective journey times in steps.
    journey: Vec<usize>,
    /// Per station, net change for each minute after `start_minute`.
    eta: Vec<Vec<f64>>,
    /// Per station, fill at each step before any action there.
    fills: Vec<Vec<f64>>,
    plateaus: Vec<Vec<Plateau<f64>>>,
}

impl TimeExpandedNetwork {
    /// Build the network for the grid from the first step at or after
    /// `now` up to `window_end`. `committed` actions at or after `now` are
    /// folded into the predicted fills.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        geometry: &Geometry,
        capacities: &[u32],
        fills: &[f64],
        forecaster: &dyn Forecaster,
        config: &RoutingConfig,
        depot: usize,
        now: i64,
        window_end: i64,
        committed: &[PlannedAction],
    ) -> Self {
        let n = geometry.len();
        let start_minute = now.div_euclid(STEP_MINUTES) * STEP_MINUTES
            + if now.rem_euclid(STEP_MINUTES) == 0 { 0 } else { STEP_MINUTES };
        let steps = if window_end >= start_minute {
            ((window_end - start_minute) / STEP_MINUTES + 1) as usize
        } else {
            0
        };
        let mut journey = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                journey[i * n + j] = effective_journey_time(geometry.distance(i, j), config);
            }
        }
        let minutes = steps.saturating_sub(1) * STEP_MINUTES as usize;
        let caps: Vec<f64> = capacities.iter().map(|&c| c as f64).collect();
        let mut eta = Vec::with_capacity(n);
        let mut trajectories = Vec::with_capacity(n);
        let mut plateaus = Vec::with_capacity(n);
        for s in 0..n {
            let mut f = fills[s].clamp(0.0, caps[s]);
            for m in now..start_minute {
                f = saturate(f, forecaster.net_change(s, m), caps[s]);
            }
            let e: Vec<f64> = (0..minutes as i64).map(|m| forecaster.net_change(s, start_minute + m)).collect();
            let mut traj = vec![0.0; steps];
            if steps > 0 {
                traj[0] = f;
            }
            eta.push(e);
            trajectories.push(traj);
            plateaus.push(
                (0..steps)
                    .map(|k| forecaster.plateau(s, start_minute + k as i64 * STEP_MINUTES))
                    .collect(),
            );
        }
        let mut net = TimeExpandedNetwork {
            start_minute,
            steps,
            depot,
            capacities: caps,
            journey,
            eta,
            fills: trajectories,
            plateaus,
        };
        for s in 0..n {
            if steps > 0 {
                net.repropagate(s, 0, net.fills[s][0]);
            }
        }
        for a in committed {
            if let Some(k) = net.step_of(a.minute) {
                net.apply(a.station, k, a.delta as f64);
            }
        }
        net
    }

    pub fn start_minute(&self) -> i64 {
        self.start_minute
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn stations(&self) -> usize {
        self.capacities.len()
    }

    pub fn depot(&self) -> usize {
        self.depot
    }

    pub fn minute_of(&self, step: usize) -> i64 {
        self.start_minute + step as i64 * STEP_MINUTES
    }

    /// Grid step of an on-grid minute inside the network.
    pub fn step_of(&self, minute: i64) -> Option<usize> {
        let off = minute - self.start_minute;
        if off < 0 || off % STEP_MINUTES != 0 {
            return None;
        }
        let k = (off / STEP_MINUTES) as usize;
        (k < self.steps).then_some(k)
    }

    pub fn journey(&self, from: usize, to: usize) -> usize {
        self.journey[from * self.stations() + to]
    }

    pub fn capacity(&self, s: usize) -> f64 {
        self.capacities[s]
    }

    /// Predicted fill at a vertex, before any action there.
    pub fn fill(&self, s: usize, step: usize) -> f64 {
        self.fills[s][step]
    }

    pub fn plateau(&self, s: usize, step: usize) -> &Plateau<f64> {
        &self.plateaus[s][step]
    }

    /// A vertex is live when a truck there can still reach the depot
    /// within the window.
    pub fn is_live(&self, s: usize, step: usize) -> bool {
        if step >= self.steps {
            return false;
        }
        s == self.depot || step + self.journey(s, self.depot) < self.steps
    }

    fn repropagate(&mut self, s: usize, step: usize, start_fill: f64) {
        let cap = self.capacities[s];
        let mut f = start_fill;
        for k in step + 1..self.steps {
            for m in (k - 1) * STEP_MINUTES as usize..k * STEP_MINUTES as usize {
                f = saturate(f, self.eta[s][m], cap);
            }
            self.fills[s][k] = f;
        }
    }

    /// Fold an action at `(s, step)` into the later fills of `s`. Returns
    /// the previous tail for [`TimeExpandedNetwork::undo`].
    pub fn apply(&mut self, s: usize, step: usize, delta: f64) -> Vec<f64> {
        let saved = self.fills[s][step..].to_vec();
        if delta != 0.0 {
            let after = (self.fills[s][step] + delta).clamp(0.0, self.capacities[s]);
            self.repropagate(s, step, after);
        }
        saved
    }

    pub fn undo(&mut self, s: usize, step: usize, saved: Vec<f64>) {
        self.fills[s][step..].copy_from_slice(&saved);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopKind {
    Regular,
    /// Intermittent depot for dropping surplus bikes.
    Store,
    /// Intermittent depot for fetching bikes.
    Pick,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub station: usize,
    pub step: usize,
    pub kind: StopKind,
    pub delta: i32,
}

/// Inputs of one stop of the refinement problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteStop {
    pub fill: f64,
    pub capacity: f64,
    pub plateau: Plateau<f64>,
    /// Bound on `|Δf|` at intermittent depots.
    pub move_cap: Option<u32>,
}

impl RouteStop {
    fn delta_range(&self) -> (f64, f64) {
        let mut lo = -self.fill;
        let mut hi = self.capacity - self.fill;
        if let Some(c) = self.move_cap {
            lo = lo.max(-(c as f64));
            hi = hi.min(c as f64);
        }
        (lo, hi)
    }

    fn integer_range(&self) -> (i32, i32) {
        let (lo, hi) = self.delta_range();
        ((lo - 1e-9).ceil() as i32, (hi + 1e-9).floor() as i32)
    }
}

/// Utility of a set of moves minus the quadratic move penalty.
pub fn route_objective(stops: &[RouteStop], deltas: &[i32], q: f64) -> f64 {
    stops
        .iter()
        .zip(deltas)
        .map(|(s, &d)| {
            let d = d as f64;
            utility_fast(&s.plateau, s.fill, d) - d * d / q
        })
        .sum()
}

/// Station bounds, depot caps and the load chain `0 ≤ l ≤ l_max`.
pub fn route_feasible(stops: &[RouteStop], deltas: &[i32], load: i32, max_load: i32) -> bool {
    let mut l = load;
    for (s, &d) in stops.iter().zip(deltas) {
        let (lo, hi) = s.integer_range();
        if d < lo || d > hi {
            return false;
        }
        l -= d;
        if l < 0 || l > max_load {
            return false;
        }
    }
    true
}

/// Result of [`refine_actions`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub deltas: Vec<i32>,
    pub objective: f64,
    /// Objective of the continuous relaxation.
    pub relaxed_objective: f64,
    pub relaxed: Vec<f64>,
}

/// Optimal load actions for a fixed route.
///
/// The continuous relaxation maximises the plateau utility minus
/// `Σ Δf²/q` under the truck load chain and station bounds, written with
/// auxiliary shortfall and excess variables. Its solution is rounded by
/// trying every floor/ceil combination, repaired if needed, and polished
/// with unit moves. Returns `None` when the relaxation is infeasible.
pub fn refine_actions(stops: &[RouteStop], load: i32, max_load: i32, q: f64) -> Option<Refinement> {
    let m = stops.len();
    if m == 0 {
        return Some(Refinement {
            deltas: vec![],
            objective: 0.0,
            relaxed_objective: 0.0,
            relaxed: vec![],
        });
    }
    // x = [Δ (m), shortfall (m), excess (m)]
    let mut prob = QpInstance::<f64>::new(3 * m);
    for (i, s) in stops.iter().enumerate() {
        prob.add_hessian(i, i, 2.0 / q);
        prob.add_linear(m + i, 1.0);
        prob.add_linear(2 * m + i, 1.0);
        // shortfall ≥ lower − f − Δ ; excess ≥ f + Δ − upper
        prob.add_inequality(&[(i, -1.0), (m + i, -1.0)], s.fill - s.plateau.lower);
        prob.add_inequality(&[(i, 1.0), (2 * m + i, -1.0)], s.plateau.upper - s.fill);
        let (lo, hi) = s.delta_range();
        prob.set_bounds(i, lo, hi);
        prob.set_bounds(m + i, 0.0, f64::INFINITY);
        prob.set_bounds(2 * m + i, 0.0, f64::INFINITY);
        let prefix: Vec<(usize, f64)> = (0..=i).map(|k| (k, 1.0)).collect();
        prob.add_inequality(&prefix, load as f64);
        let neg: Vec<(usize, f64)> = (0..=i).map(|k| (k, -1.0)).collect();
        prob.add_inequality(&neg, (max_load - load) as f64);
    }
    let sol = qp::solve(&prob, &QpSettings::default());
    if sol.status == QpStatus::Infeasible {
        return None;
    }
    let relaxed: Vec<f64> = sol.x[..m].to_vec();
    let relaxed_objective = stops
        .iter()
        .zip(&relaxed)
        .map(|(s, &d)| utility_fast(&s.plateau, s.fill, d) - d * d / q)
        .sum();

    let mut best: Option<(Vec<i32>, f64)> = None;
    for mask in 0..(1u32 << m) {
        let cand: Vec<i32> = relaxed
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let r = x.round();
                if (x - r).abs() < 1e-7 {
                    r as i32
                } else if mask & (1 << i) != 0 {
                    x.ceil() as i32
                } else {
                    x.floor() as i32
                }
            })
            .collect();
        if route_feasible(stops, &cand, load, max_load) {
            let obj = route_objective(stops, &cand, q);
            if best.as_ref().is_none_or(|b| obj > b.1) {
                best = Some((cand, obj));
            }
        }
    }
    let start = match best {
        Some((d, _)) => d,
        None => repair_chain(stops, &relaxed, load, max_load)?,
    };
    let deltas = polish(stops, start, load, max_load, q);
    let objective = route_objective(stops, &deltas, q);
    Some(Refinement {
        deltas,
        objective,
        relaxed_objective,
        relaxed,
    })
}

/// Round toward zero, then walk the stops and shrink moves that break the
/// load chain.
fn repair_chain(stops: &[RouteStop], relaxed: &[f64], load: i32, max_load: i32) -> Option<Vec<i32>> {
    let mut l = load;
    let mut out = Vec::with_capacity(stops.len());
    for (s, &x) in stops.iter().zip(relaxed) {
        let (lo, hi) = s.integer_range();
        let mut d = (x.trunc() as i32).clamp(lo, hi);
        d = d.clamp(l - max_load, l);
        if d < lo || d > hi {
            d = 0.clamp(lo, hi);
        }
        l -= d;
        out.push(d);
    }
    route_feasible(stops, &out, load, max_load).then_some(out)
}

/// Hill-climb with single unit moves and unit transfers between stops.
fn polish(stops: &[RouteStop], mut deltas: Vec<i32>, load: i32, max_load: i32, q: f64) -> Vec<i32> {
    let m = deltas.len();
    let mut current = route_objective(stops, &deltas, q);
    loop {
        let mut best: Option<(Vec<i32>, f64)> = None;
        let mut consider = |cand: Vec<i32>| {
            if route_feasible(stops, &cand, load, max_load) {
                let obj = route_objective(stops, &cand, q);
                if obj > current + 1e-12 && best.as_ref().is_none_or(|b| obj > b.1) {
                    best = Some((cand, obj));
                }
            }
        };
        for i in 0..m {
            for step in [-1, 1] {
                let mut c = deltas.clone();
                c[i] += step;
                consider(c);
            }
            for j in 0..m {
                if i != j {
                    let mut c = deltas.clone();
                    c[i] += 1;
                    c[j] -= 1;
                    consider(c);
                }
            }
        }
        match best {
            Some((d, obj)) => {
                deltas = d;
                current = obj;
            }
            None => return deltas,
        }
    }
}

/// Planned route of one truck.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub stops: Vec<Stop>,
    pub objective: f64,
    pub root_step: usize,
}

impl Route {
    pub fn end_step(&self) -> usize {
        self.stops.last().map_or(self.root_step, |s| s.step)
    }
}

/// Remaining route budget of a truck.
#[derive(Debug, Clone, Copy)]
struct Budget {
    stops: usize,
    steps: usize,
}

struct Leaf {
    stops: Vec<Stop>,
    greedy: Vec<i32>,
    upper_bound: f64,
}

struct TreeSearch<'a> {
    config: &'a RoutingConfig,
    root_step: usize,
    budget: Budget,
    visited: Vec<bool>,
    path: Vec<Stop>,
    greedy: Vec<i32>,
    leaves: Vec<Leaf>,
}

impl TreeSearch<'_> {
    fn expand(&mut self, net: &mut TimeExpandedNetwork, station: usize, step: usize, load: i32) {
        let depth = self.path.len();
        let elapsed = step - self.root_step;
        if depth >= self.budget.stops || (depth > 0 && elapsed >= self.budget.steps) {
            self.record_leaf(net);
            return;
        }
        let children = candidates(net, self.config, &self.visited, station, step, load);
        if children.is_empty() {
            if depth > 0 {
                self.record_leaf(net);
            }
            return;
        }
        for child in children {
            let saved = net.apply(child.station, child.step, child.delta as f64);
            self.visited[child.station] = true;
            self.path.push(child);
            self.greedy.push(child.delta);
            self.expand(net, child.station, child.step, load - child.delta);
            self.greedy.pop();
            self.path.pop();
            self.visited[child.station] = false;
            net.undo(child.station, child.step, saved);
        }
    }

    fn record_leaf(&mut self, net: &TimeExpandedNetwork) {
        let upper_bound = self
            .path
            .iter()
            .map(|s| {
                let f = net.fill(s.station, s.step);
                let p = net.plateau(s.station, s.step);
                (p.lower - f).max(0.0) + (f - p.upper).max(0.0)
            })
            .sum();
        self.leaves.push(Leaf {
            stops: self.path.clone(),
            greedy: self.greedy.clone(),
            upper_bound,
        });
    }
}

/// Children of a tree node: the `branching` best stations by greedy move
/// per step, then the nearest vertices able to store or supply bikes at
/// no utility loss. Depot children move their plateau slack, capped at
/// the depot size, so that later stops see the changed load. Ties prefer
/// shorter journeys, then lower station index.
fn candidates(
    net: &TimeExpandedNetwork,
    config: &RoutingConfig,
    visited: &[bool],
    station: usize,
    step: usize,
    load: i32,
) -> Vec<Stop> {
    let max_load = config.max_load as i32;
    let mut regular: Vec<(f64, usize, Stop)> = Vec::new();
    let mut reachable: Vec<(usize, usize, usize)> = Vec::new();
    for s in 0..net.stations() {
        if s == station || visited[s] {
            continue;
        }
        let d = net.journey(station, s);
        let k = step + d;
        if !net.is_live(s, k) {
            continue;
        }
        let f = net.fill(s, k);
        let delta = greedy_best_action(f, net.plateau(s, k), load, max_load);
        if delta != 0 {
            let stop = Stop {
                station: s,
                step: k,
                kind: StopKind::Regular,
                delta,
            };
            regular.push((delta.abs() as f64 / d as f64, d, stop));
        }
        reachable.push((d, s, k));
    }
    regular.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.station.cmp(&b.2.station))
    });
    regular.truncate(config.branching);
    let mut out: Vec<Stop> = regular.into_iter().map(|r| r.2).collect();

    reachable.sort();
    let taken = |out: &[Stop], s: usize| out.iter().any(|c| c.station == s);
    let cap = config.depot_cap as i32;
    let store_room = |s: usize, k: usize| ((net.plateau(s, k).upper - net.fill(s, k)).floor() as i32).min(cap).min(load);
    let pick_room = |s: usize, k: usize| {
        ((net.fill(s, k) - net.plateau(s, k).lower).floor() as i32)
            .min(cap)
            .min(max_load - load)
    };
    if let Some(&(_, s, k)) = reachable.iter().find(|&&(_, s, k)| !taken(&out, s) && store_room(s, k) >= 1) {
        out.push(Stop {
            station: s,
            step: k,
            kind: StopKind::Store,
            delta: store_room(s, k),
        });
    }
    if let Some(&(_, s, k)) = reachable.iter().find(|&&(_, s, k)| !taken(&out, s) && pick_room(s, k) >= 1) {
        out.push(Stop {
            station: s,
            step: k,
            kind: StopKind::Pick,
            delta: -pick_room(s, k),
        });
    }
    out
}

fn route_stops(net: &TimeExpandedNetwork, stops: &[Stop], config: &RoutingConfig) -> Vec<RouteStop> {
    stops
        .iter()
        .map(|s| RouteStop {
            fill: net.fill(s.station, s.step),
            capacity: net.capacity(s.station),
            plateau: *net.plateau(s.station, s.step),
            move_cap: (s.kind != StopKind::Regular).then_some(config.depot_cap),
        })
        .collect()
}

/// Best route for a truck at `(station, step)` holding `load` bikes, or
/// `None` when no route improves utility.
pub fn best_route(
    net: &mut TimeExpandedNetwork,
    config: &RoutingConfig,
    station: usize,
    step: usize,
    load: i32,
) -> Option<Route> {
    let budget = Budget {
        stops: config.max_stops,
        steps: (config.min_plan_minutes / STEP_MINUTES) as usize,
    };
    search_with_budget(net, config, station, step, load, budget)
}

fn search_with_budget(
    net: &mut TimeExpandedNetwork,
    config: &RoutingConfig,
    station: usize,
    step: usize,
    load: i32,
    budget: Budget,
) -> Option<Route> {
    if budget.stops == 0 || !net.is_live(station, step) {
        return None;
    }
    let mut search = TreeSearch {
        config,
        root_step: step,
        budget,
        visited: vec![false; net.stations()],
        path: Vec::new(),
        greedy: Vec::new(),
        leaves: Vec::new(),
    };
    search.visited[station] = true;
    search.expand(net, station, step, load);
    let mut leaves = search.leaves;
    let duration = |stops: &[Stop]| ((stops.last().map_or(step, |s| s.step) - step).max(1) as i64 * STEP_MINUTES) as f64;
    leaves.sort_by(|a, b| {
        (b.upper_bound / duration(&b.stops))
            .total_cmp(&(a.upper_bound / duration(&a.stops)))
            .then(a.stops.last().map(|s| s.step).cmp(&b.stops.last().map(|s| s.step)))
    });

    let q = config.penalty_q;
    let max_load = config.max_load as i32;
    let mut best: Option<(Vec<Stop>, f64, f64)> = None;
    for leaf in &leaves {
        let bound = leaf.upper_bound / duration(&leaf.stops);
        if let Some((_, _, score)) = &best {
            if bound <= *score {
                break;
            }
        }
        let inputs = route_stops(net, &leaf.stops, config);
        let greedy_obj = route_objective(&inputs, &leaf.greedy, q);
        let mut deltas = leaf.greedy.clone();
        let mut objective = greedy_obj;
        if let Some(r) = refine_actions(&inputs, load, max_load, q) {
            if r.objective > greedy_obj {
                deltas = r.deltas;
                objective = r.objective;
            }
        }
        let mut stops = leaf.stops.clone();
        for (s, d) in stops.iter_mut().zip(&deltas) {
            s.delta = *d;
        }
        while stops.last().is_some_and(|s| s.delta == 0) {
            stops.pop();
        }
        if stops.is_empty() || objective <= 1e-9 {
            continue;
        }
        let score = objective / duration(&stops);
        let better = match &best {
            None => true,
            Some((b, _, bs)) => score > *bs || (score == *bs && stops.last().unwrap().step < b.last().unwrap().step),
        };
        if better {
            best = Some((stops, objective, score));
        }
    }
    best.map(|(stops, objective, _)| Route {
        stops,
        objective,
        root_step: step,
    })
}

/// Actions of one truck for the current tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruckPlan {
    pub truck: usize,
    pub actions: Vec<PlannedAction>,
    /// Length of the committed prefix.
    pub committed: usize,
}

impl TruckPlan {
    pub fn committed_actions(&self) -> &[PlannedAction] {
        &self.actions[..self.committed]
    }
}

/// Per-truck planning state during sequential planning.
struct Planner {
    root: (usize, usize, i32),
    stops: Vec<Stop>,
    last_search: usize,
    saved: Vec<Vec<f64>>,
    done: bool,
}

impl Planner {
    fn end(&self) -> (usize, usize, i32) {
        let (mut s, mut k, mut l) = self.root;
        for stop in &self.stops {
            s = stop.station;
            k = stop.step;
            l -= stop.delta;
        }
        (s, k, l)
    }
}

/// Root vertex of a truck in the network, if it is still inside it.
fn truck_root(net: &TimeExpandedNetwork, truck: &TruckState) -> Option<usize> {
    let off = (truck.minute - net.start_minute()).max(0);
    let k = ((off + STEP_MINUTES - 1) / STEP_MINUTES) as usize;
    (k < net.steps()).then_some(k)
}

/// Plan all trucks sequentially. The truck whose plan ends earliest is
/// extended next, with the other trucks' actions folded into the fills.
/// When a new route visits a station that another truck visits at a later
/// or equal time, that truck loses its latest search and the new route is
/// cut to its first stop.
pub fn plan_all_trucks(net: &mut TimeExpandedNetwork, trucks: &[TruckState], config: &RoutingConfig) -> Vec<TruckPlan> {
    let target_steps = (config.min_plan_minutes / STEP_MINUTES) as usize;
    let mut planners: Vec<Planner> = trucks
        .iter()
        .map(|t| {
            let root = truck_root(net, t);
            Planner {
                root: (t.station, root.unwrap_or(0), t.load),
                stops: Vec::new(),
                last_search: 0,
                saved: Vec::new(),
                done: root.is_none_or(|k| !net.is_live(t.station, k)),
            }
        })
        .collect();

    for _ in 0..config.max_planning_rounds.max(1) {
        let Some(r) = (0..planners.len())
            .filter(|&r| !planners[r].done)
            .min_by_key(|&r| (planners[r].end().1, r))
        else {
            break;
        };
        let (station, step, load) = planners[r].end();
        let budget = Budget {
            stops: config.max_stops.saturating_sub(planners[r].stops.len()),
            steps: target_steps.saturating_sub(step - planners[r].root.1),
        };
        let route = if budget.steps == 0 {
            None
        } else {
            search_with_budget(net, config, station, step, load, budget)
        };
        let Some(route) = route else {
            planners[r].done = true;
            continue;
        };

        let mut stops = route.stops;
        let mut collided = false;
        for other in 0..planners.len() {
            if other == r {
                continue;
            }
            let hit = stops.iter().any(|s| {
                planners[other]
                    .stops
                    .iter()
                    .any(|o| o.station == s.station && o.step >= s.step)
            });
            if hit {
                collided = true;
                let p = &mut planners[other];
                while p.stops.len() > p.last_search {
                    let stop = p.stops.pop().unwrap();
                    let saved = p.saved.pop().unwrap();
                    net.undo(stop.station, stop.step, saved);
                }
                p.done = false;
            }
        }
        if collided {
            stops.truncate(1);
        }
        let p = &mut planners[r];
        p.last_search = p.stops.len();
        for s in stops {
            p.saved.push(net.apply(s.station, s.step, s.delta as f64));
            p.stops.push(s);
        }
        let (_, end, _) = p.end();
        if p.stops.len() >= config.max_stops || end - p.root.1 >= target_steps {
            p.done = true;
        }
    }

    let implementation_end = net.start_minute() + config.implementation_minutes;
    trucks
        .iter()
        .zip(&planners)
        .map(|(t, p)| {
            let mut load = p.root.2;
            let actions: Vec<PlannedAction> = p
                .stops
                .iter()
                .map(|s| {
                    load -= s.delta;
                    PlannedAction {
                        truck: t.id,
                        station: s.station,
                        minute: net.minute_of(s.step),
                        delta: s.delta,
                        load_after: load,
                    }
                })
                .collect();
            let committed = actions.iter().take_while(|a| a.minute < implementation_end).count();
            TruckPlan {
                truck: t.id,
                actions,
                committed,
            }
        })
        .collect()
}

/// Inputs of one re-planning tick.
pub struct TickInput<'a> {
    pub geometry: &'a Geometry,
    pub capacities: &'a [u32],
    pub fills: &'a [f64],
    pub forecaster: &'a dyn Forecaster,
    pub trucks: &'a [TruckState],
    /// Earlier commitments not yet executed.
    pub pending: &'a [PlannedAction],
    pub now: i64,
    pub window_end: i64,
    pub depot: usize,
}

/// Re-plan every truck and return the plans with their committed prefixes,
/// which are the actions starting before `now + T_impl`.
pub fn replan_tick(input: &TickInput<'_>, config: &RoutingConfig) -> Vec<TruckPlan> {
    let mut net = TimeExpandedNetwork::build(
        input.geometry,
        input.capacities,
        input.fills,
        input.forecaster,
        config,
        input.depot,
        input.now,
        input.window_end,
        input.pending,
    );
    let mut plans = plan_all_trucks(&mut net, input.trucks, config);
    let horizon = input.now + config.implementation_minutes;
    for p in &mut plans {
        p.committed = p.actions.iter().take_while(|a| a.minute < horizon).count();
    }
    plans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::GeometryConfig;

    #[test]
    fn journey_time_table() {
        let c = RoutingConfig::default();
        assert_eq!(effective_journey_time(0.0, &c), 1);
        assert_eq!(effective_journey_time(1.25, &c), 2);
        assert_eq!(effective_journey_time(3.0, &c), 4);
    }

    #[test]
    fn greedy_cases() {
        let p = |lower, upper| Plateau {
            lower,
            upper,
            degenerate: false,
        };
        assert_eq!(greedy_best_action(12.0, &p(4.0, 8.0), 5, 20), -4);
        assert_eq!(greedy_best_action(2.0, &p(6.0, 9.0), 3, 20), 3);
        assert_eq!(greedy_best_action(5.0, &p(4.0, 8.0), 5, 20), 0);
        // truck space limits the pickup
        assert_eq!(greedy_best_action(20.0, &p(4.0, 8.0), 17, 20), -3);
    }

    #[test]
    fn single_stop_inside_plateau_moves_nothing() {
        let stop = RouteStop {
            fill: 5.0,
            capacity: 20.0,
            plateau: Plateau {
                lower: 3.0,
                upper: 9.0,
                degenerate: false,
            },
            move_cap: None,
        };
        let r = refine_actions(&[stop], 0, 20, 8010.0).unwrap();
        assert_eq!(r.deltas, vec![0]);
    }

    #[test]
    fn refinement_uses_slack_to_carry_bikes() {
        // stop 1 can give 5 bikes without loss; stop 2 needs 5
        let stops = [
            RouteStop {
                fill: 10.0,
                capacity: 20.0,
                plateau: Plateau {
                    lower: 5.0,
                    upper: 10.0,
                    degenerate: false,
                },
                move_cap: None,
            },
            RouteStop {
                fill: 0.0,
                capacity: 20.0,
                plateau: Plateau {
                    lower: 5.0,
                    upper: 12.0,
                    degenerate: false,
                },
                move_cap: None,
            },
        ];
        let r = refine_actions(&stops, 0, 20, 8010.0).unwrap();
        assert_eq!(r.deltas, vec![-5, 5]);
        assert!((r.objective - (5.0 - 50.0 / 8010.0)).abs() < 1e-9);
    }

    struct Flat {
        plateau: Plateau<f64>,
    }

    impl Forecaster for Flat {
        fn net_change(&self, _: usize, _: i64) -> f64 {
            0.0
        }
        fn plateau(&self, _: usize, _: i64) -> Plateau<f64> {
            self.plateau
        }
    }

    fn triangle() -> Geometry {
        Geometry::from_points(
            vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)],
            &[],
            &GeometryConfig {
                neighbor_count: 2,
                bbox_margin_km: 0.5,
            },
        )
        .unwrap()
    }

    #[test]
    fn window_end_kills_vertices() {
        let g = triangle();
        let f = Flat {
            plateau: Plateau::full_range(10.0),
        };
        let cfg = RoutingConfig::default();
        let net = TimeExpandedNetwork::build(&g, &[10, 10, 10], &[5.0; 3], &f, &cfg, 0, 600, 600, &[]);
        assert_eq!(net.steps(), 1);
        assert!(net.is_live(0, 0));
        assert!(!net.is_live(1, 0));
        assert!(!net.is_live(2, 0));
    }

    #[test]
    fn overlay_push_pop_restores_fills() {
        let g = triangle();
        struct Drain;
        impl Forecaster for Drain {
            fn net_change(&self, _: usize, _: i64) -> f64 {
                -0.1
            }
            fn plateau(&self, _: usize, _: i64) -> Plateau<f64> {
                Plateau::full_range(10.0)
            }
        }
        let cfg = RoutingConfig::default();
        let mut net = TimeExpandedNetwork::build(&g, &[10, 10, 10], &[5.0; 3], &Drain, &cfg, 0, 480, 600, &[]);
        let before: Vec<f64> = (0..net.steps()).map(|k| net.fill(1, k)).collect();
        assert!((net.fill(1, 1) - 4.5).abs() < 1e-12);
        let saved = net.apply(1, 2, 3.0);
        assert!((net.fill(1, 3) - (net.fill(1, 2) + 3.0 - 0.5)).abs() < 1e-12);
        net.undo(1, 2, saved);
        let after: Vec<f64> = (0..net.steps()).map(|k| net.fill(1, k)).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn single_deficit_gets_served() {
        let g = triangle();
        struct Needy;
        impl Forecaster for Needy {
            fn net_change(&self, _: usize, _: i64) -> f64 {
                0.0
            }
            fn plateau(&self, s: usize, _: i64) -> Plateau<f64> {
                match s {
                    2 => Plateau {
                        lower: 8.0,
                        upper: 10.0,
                        degenerate: false,
                    },
                    _ => Plateau::full_range(10.0),
                }
            }
        }
        let cfg = RoutingConfig::default();
        let mut net = TimeExpandedNetwork::build(&g, &[10, 10, 10], &[5.0, 10.0, 0.0], &Needy, &cfg, 0, 480, 600, &[]);
        let trucks = [TruckState {
            id: 0,
            station: 0,
            minute: 480,
            load: 0,
        }];
        let plans = plan_all_trucks(&mut net, &trucks, &cfg);
        let acts = &plans[0].actions;
        assert_eq!(acts.last().unwrap().station, 2);
        assert_eq!(acts.iter().map(|a| a.delta).sum::<i32>(), 0);
        assert_eq!(acts.iter().filter(|a| a.station == 2).map(|a| a.delta).sum::<i32>(), 8);
    }
}
