//! Closed-loop Monte-Carlo simulation.
//!
//! The world advances one minute at a time. Each minute the controllers
//! run on their cadences, committed truck actions are executed, new
//! departures are drawn from the rate model, and rides due at their
//! destination are resolved with the ground-truth customer model.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::customer::{
    choose, fit_linear_response, overflow_walk, CostSampler, LinearResponse, ResponseFitConfig, UniformCost,
};
use crate::demand::{
    fit_rates, DayType, FlowTable, Geometry, GeometryConfig, GeometryError, RateModel, MINUTES_PER_DAY,
};
use crate::pricing::{build_mpc, MpcConfig, MpcState, MpcStep, PriceController};
use crate::routing::{default_depot, replan_tick, Forecaster, PlannedAction, RoutingConfig, TickInput, TruckState};
use crate::seed::{streams, stream_rng};
use crate::utility::{Plateau, PlateauTable, UTILITY_HORIZON_MINUTES};

/// Stride of the shared plateau table in minutes.
pub const PLATEAU_STRIDE: usize = 5;

/// Fitted inputs of a simulation, shared read-only between runs.
#[derive(Debug, Clone)]
pub struct SimModels {
    pub capacities: Vec<u32>,
    pub initial_fill: Vec<u32>,
    pub geometry: Geometry,
    pub rates: RateModel,
    pub flows: FlowTable,
    pub response: LinearResponse,
    pub c_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitParams {
    pub geometry: GeometryConfig,
    pub response: ResponseFitConfig,
    pub c_max: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            geometry: GeometryConfig::default(),
            response: ResponseFitConfig::default(),
            c_max: crate::customer::DEFAULT_C_MAX,
        }
    }
}

impl SimModels {
    /// Fit rates, geometry and customer response from a corpus.
    pub fn fit(corpus: &Corpus, params: &FitParams) -> Result<Self, GeometryError> {
        let rates = fit_rates(&corpus.rides, &corpus.stations, &corpus.calendar, &corpus.epoch);
        let geometry = Geometry::build(&corpus.stations, &corpus.rides, &params.geometry)?;
        let response = fit_linear_response(&geometry, &UniformCost { c_max: params.c_max }, &params.response);
        Ok(SimModels::from_parts(
            corpus.stations.capacities(),
            corpus.snapshot.dense(&corpus.stations),
            geometry,
            rates,
            response,
            params.c_max,
        ))
    }

    pub fn from_parts(
        capacities: Vec<u32>,
        initial_fill: Vec<u32>,
        geometry: Geometry,
        rates: RateModel,
        response: LinearResponse,
        c_max: f64,
    ) -> Self {
        let flows = FlowTable::new(&rates);
        SimModels {
            capacities,
            initial_fill,
            geometry,
            rates,
            flows,
            response,
            c_max,
        }
    }

    pub fn stations(&self) -> usize {
        self.capacities.len()
    }

    pub fn fleet(&self) -> u64 {
        self.initial_fill.iter().map(|&f| f as u64).sum()
    }
}

/// Serializable form of [`SimModels`]; the flow table is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub capacities: Vec<u32>,
    pub initial_fill: Vec<u32>,
    pub geometry: Geometry,
    pub rates: RateModel,
    pub response: LinearResponse,
    pub c_max: f64,
}

impl From<&SimModels> for ModelFile {
    fn from(m: &SimModels) -> Self {
        ModelFile {
            capacities: m.capacities.clone(),
            initial_fill: m.initial_fill.clone(),
            geometry: m.geometry.clone(),
            rates: m.rates.clone(),
            response: m.response.clone(),
            c_max: m.c_max,
        }
    }
}

impl From<ModelFile> for SimModels {
    fn from(f: ModelFile) -> Self {
        SimModels::from_parts(f.capacities, f.initial_fill, f.geometry, f.rates, f.response, f.c_max)
    }
}

/// Day types of a run, repeating the last entry past the end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaySequence(pub Vec<DayType>);

impl DaySequence {
    /// One burn-in day followed by three measured days of `kind`.
    pub fn standard(kind: DayType) -> Self {
        DaySequence(vec![kind; 4])
    }

    pub fn at(&self, minute: i64) -> DayType {
        let day = minute.div_euclid(MINUTES_PER_DAY as i64).max(0) as usize;
        *self.0.get(day).or(self.0.last()).unwrap_or(&DayType::Weekday)
    }

    pub fn minutes(&self) -> i64 {
        (self.0.len() * MINUTES_PER_DAY) as i64
    }
}

/// Plateaus for every station on a 5-minute grid across a run, built once
/// per model and day sequence.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub models: Arc<SimModels>,
    pub days: DaySequence,
    pub plateaus: Arc<PlateauTable<f64>>,
}

impl Prepared {
    pub fn new(models: Arc<SimModels>, days: DaySequence) -> Self {
        let caps: Vec<f64> = models.capacities.iter().map(|&c| c as f64).collect();
        let steps = days.minutes() as usize / PLATEAU_STRIDE + 1;
        let plateaus = {
            let m = &models;
            let d = &days;
            PlateauTable::build(&caps, 0, steps, PLATEAU_STRIDE, UTILITY_HORIZON_MINUTES, |s, minute| {
                net_change(m, d, s, minute)
            })
        };
        Prepared {
            models,
            days,
            plateaus: Arc::new(plateaus),
        }
    }

    fn forecaster(&self) -> SimForecaster<'_> {
        SimForecaster { prepared: self }
    }
}

fn net_change(models: &SimModels, days: &DaySequence, station: usize, minute: i64) -> f64 {
    let w = days.at(minute);
    let mod_day = minute.rem_euclid(MINUTES_PER_DAY as i64) as usize;
    models.flows.get(w, mod_day).eta[station]
}

struct SimForecaster<'a> {
    prepared: &'a Prepared,
}

impl Forecaster for SimForecaster<'_> {
    fn net_change(&self, station: usize, minute: i64) -> f64 {
        net_change(&self.prepared.models, &self.prepared.days, station, minute)
    }

    fn plateau(&self, station: usize, minute: i64) -> Plateau<f64> {
        *self.prepared.plateaus.get(station, minute)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub trucks: usize,
    /// Payout weight; `None` disables prices.
    pub alpha: Option<f64>,
    pub seed: u64,
    pub burn_in_minutes: i64,
    pub routing: RoutingConfig,
    pub mpc: MpcConfig,
    /// Count a diverted customer who finds the new station full as a full
    /// event.
    pub count_diverted_full: bool,
    pub record_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            trucks: 0,
            alpha: None,
            seed: 1,
            burn_in_minutes: MINUTES_PER_DAY as i64,
            routing: RoutingConfig::default(),
            mpc: MpcConfig::default(),
            count_diverted_full: true,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Empty,
    Full,
}

/// A customer who was not served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoServiceEvent {
    pub minute: i64,
    pub station: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trucks: usize,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub day_type: DayType,
    pub potential: u64,
    pub empty_events: u64,
    pub full_events: u64,
    pub payout_total: f64,
    /// Hours trucks spent driving and handling.
    pub truck_hours: f64,
    pub diverted: u64,
    pub station_empty: Vec<u64>,
    pub station_full: Vec<u64>,
    pub price_solver_failures: usize,
    pub events: Vec<NoServiceEvent>,
}

impl SimReport {
    /// Share of potential customers served; 1 when there were none.
    pub fn service_level(&self) -> f64 {
        if self.potential == 0 {
            return 1.0;
        }
        (self.potential - self.empty_events - self.full_events) as f64 / self.potential as f64
    }
}

pub const REPORT_HEADER: [&str; 11] = [
    "run_id",
    "R",
    "alpha",
    "seed",
    "day_type",
    "potential",
    "empty_events",
    "full_events",
    "service_level",
    "payout_total",
    "truck_hours",
];

pub fn format_alpha(alpha: Option<f64>) -> String {
    match alpha {
        None => "inf".to_string(),
        Some(a) => format!("{a}"),
    }
}

/// Write report rows as CSV with the fixed header.
pub fn write_reports<W: Write>(out: W, rows: &[(String, SimReport)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for (id, r) in rows {
        w.write_record([
            id.clone(),
            r.trucks.to_string(),
            format_alpha(r.alpha),
            r.seed.to_string(),
            r.day_type.to_string(),
            r.potential.to_string(),
            r.empty_events.to_string(),
            r.full_events.to_string(),
            format!("{:.6}", r.service_level()),
            format!("{:.4}", r.payout_total),
            format!("{:.4}", r.truck_hours),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Field { line: u64, message: String },
}

/// Read rows written by [`write_reports`]. Per-station counts and events
/// are not part of the CSV and come back empty.
pub fn read_reports<R: std::io::Read>(input: R) -> Result<Vec<(String, SimReport)>, ReportError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(REPORT_HEADER.iter().copied()) {
        return Err(ReportError::Field {
            line: 1,
            message: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |name: &str| ReportError::Field {
            line,
            message: format!("invalid {name} {:?}", field(REPORT_HEADER.iter().position(|h| *h == name).unwrap())),
        };
        let alpha = match field(2) {
            "inf" => None,
            a => Some(a.parse::<f64>().map_err(|_| bad("alpha"))?),
        };
        let report = SimReport {
            trucks: field(1).parse().map_err(|_| bad("R"))?,
            alpha,
            seed: field(3).parse().map_err(|_| bad("seed"))?,
            day_type: field(4).parse().map_err(|_| bad("day_type"))?,
            potential: field(5).parse().map_err(|_| bad("potential"))?,
            empty_events: field(6).parse().map_err(|_| bad("empty_events"))?,
            full_events: field(7).parse().map_err(|_| bad("full_events"))?,
            payout_total: field(9).parse().map_err(|_| bad("payout_total"))?,
            truck_hours: field(10).parse().map_err(|_| bad("truck_hours"))?,
            diverted: 0,
            station_empty: Vec::new(),
            station_full: Vec::new(),
            price_solver_failures: 0,
            events: Vec::new(),
        };
        rows.push((field(0).to_string(), report));
    }
    Ok(rows)
}

/// Stable identifier of a run.
pub fn run_id(trucks: usize, alpha: Option<f64>, seed: u64, day_type: DayType) -> String {
    format!("R{trucks}-a{}-s{seed}-{day_type}", format_alpha(alpha))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ride {
    arrival: i64,
    seq: u64,
    destination: usize,
    diverted: bool,
}

impl Eq for Ride {}

impl Ord for Ride {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.arrival, self.seq).cmp(&(other.arrival, other.seq))
    }
}

impl PartialOrd for Ride {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct Truck {
    station: usize,
    free_minute: i64,
    load: i32,
    pending: VecDeque<PlannedAction>,
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub clock: i64,
    pub fills: Vec<u32>,
    riding: BinaryHeap<Reverse<Ride>>,
    trucks: Vec<Truck>,
    /// Issued payouts per station and neighbor, if prices are active.
    pub prices: Option<Vec<Vec<f64>>>,
    rng: ChaCha8Rng,
    seq: u64,
    fleet: u64,
}

impl WorldState {
    pub fn new(models: &SimModels, trucks: usize, depot: usize, seed: u64) -> Self {
        WorldState {
            clock: 0,
            fills: models.initial_fill.clone(),
            riding: BinaryHeap::new(),
            trucks: (0..trucks)
                .map(|_| Truck {
                    station: depot,
                    free_minute: 0,
                    load: 0,
                    pending: VecDeque::new(),
                })
                .collect(),
            prices: None,
            rng: stream_rng(seed, streams::DEMAND),
            seq: 0,
            fleet: models.fleet(),
        }
    }

    /// Return every truck to the depot and dock its load there, spilling
    /// to the nearest stations with free docks.
    fn unload_trucks(&mut self, models: &SimModels, depot: usize) {
        let order = models.geometry.nearest_order(depot);
        for t in &mut self.trucks {
            t.pending.clear();
            t.station = depot;
            for &s in std::iter::once(&depot).chain(&order) {
                if t.load == 0 {
                    break;
                }
                let room = models.capacities[s].saturating_sub(self.fills[s]) as i32;
                let moved = room.min(t.load);
                self.fills[s] += moved as u32;
                t.load -= moved;
            }
        }
    }

    pub fn riding(&self) -> usize {
        self.riding.len()
    }

    pub fn on_trucks(&self) -> u64 {
        self.trucks.iter().map(|t| t.load as u64).sum()
    }

    /// Docked + riding + on trucks.
    pub fn bikes(&self) -> u64 {
        self.fills.iter().map(|&f| f as u64).sum::<u64>() + self.riding.len() as u64 + self.on_trucks()
    }

    pub fn fleet(&self) -> u64 {
        self.fleet
    }

    fn push_ride(&mut self, arrival: i64, destination: usize, diverted: bool) {
        self.seq += 1;
        self.riding.push(Reverse(Ride {
            arrival,
            seq: self.seq,
            destination,
            diverted,
        }));
    }
}

/// Counters accumulated during a run.
#[derive(Debug, Clone, Default)]
pub struct Tally {
    pub potential: u64,
    pub empty: u64,
    pub full: u64,
    pub payout: f64,
    pub truck_minutes: f64,
    pub diverted: u64,
    pub station_empty: Vec<u64>,
    pub station_full: Vec<u64>,
    pub events: Vec<NoServiceEvent>,
}

/// How departure counts are drawn from the per-minute mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Departures {
    #[default]
    Poisson,
    /// Exactly `round(μ)` departures per minute, for hand-checkable replays.
    Fixed,
}

impl Tally {
    pub fn new(stations: usize) -> Self {
        Tally {
            station_empty: vec![0; stations],
            station_full: vec![0; stations],
            ..Tally::default()
        }
    }
}

/// Exogenous inputs used by [`step_minute`].
pub struct StepContext<'a> {
    pub models: &'a SimModels,
    pub days: &'a DaySequence,
    pub sampler: &'a dyn CostSampler,
    pub routing: &'a RoutingConfig,
    pub count_diverted_full: bool,
    /// Events before this minute are not tallied.
    pub measure_from: i64,
    pub record_events: bool,
    pub departures: Departures,
}

fn weighted_pick<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], total: f64) -> usize {
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last = i;
        }
    }
    last
}

fn note(tally: &mut Tally, ctx: &StepContext<'_>, minute: i64, station: usize, kind: EventKind) {
    if minute < ctx.measure_from {
        return;
    }
    match kind {
        EventKind::Empty => {
            tally.empty += 1;
            tally.station_empty[station] += 1;
        }
        EventKind::Full => {
            tally.full += 1;
            tally.station_full[station] += 1;
        }
    }
    if ctx.record_events {
        tally.events.push(NoServiceEvent { minute, station, kind });
    }
}

/// Advance the world by one minute: execute truck actions due now, draw
/// departures, then resolve arrivals. Controllers are run by the caller.
pub fn step_minute(world: &mut WorldState, ctx: &StepContext<'_>, tally: &mut Tally) {
    let now = world.clock;
    let models = ctx.models;
    let n = models.stations();
    let max_load = ctx.routing.max_load as i32;
    let measured = now >= ctx.measure_from;

    for t in 0..world.trucks.len() {
        while world.trucks[t].pending.front().is_some_and(|a| a.minute <= now) {
            let a = world.trucks[t].pending.pop_front().unwrap();
            let from = world.trucks[t].station;
            let truck = &mut world.trucks[t];
            let fill = world.fills[a.station] as i32;
            let cap = models.capacities[a.station] as i32;
            let moved = if a.delta > 0 {
                a.delta.min(truck.load).min(cap - fill)
            } else {
                -(-a.delta).min(max_load - truck.load).min(fill)
            };
            world.fills[a.station] = (fill + moved) as u32;
            truck.load -= moved;
            truck.station = a.station;
            truck.free_minute = a.minute;
            if measured {
                let steps = crate::routing::effective_journey_time(models.geometry.distance(from, a.station), ctx.routing);
                tally.truck_minutes += (steps as i64 * crate::routing::STEP_MINUTES) as f64;
            }
        }
    }

    let w = ctx.days.at(now);
    let minute_of_day = now.rem_euclid(MINUTES_PER_DAY as i64) as usize;
    let k = crate::demand::slice_of(minute_of_day);
    let flows = models.flows.get(w, minute_of_day);
    let matrix = models.rates.departure_matrix(w, k);
    for i in 0..n {
        let mu = flows.mu[i];
        if mu <= 0.0 {
            continue;
        }
        let count = match ctx.departures {
            Departures::Poisson => Poisson::new(mu).map(|p| p.sample(&mut world.rng) as u64).unwrap_or(0),
            Departures::Fixed => mu.round() as u64,
        };
        for _ in 0..count {
            if measured {
                tally.potential += 1;
            }
            if world.fills[i] == 0 {
                note(tally, ctx, now, i, EventKind::Empty);
                continue;
            }
            world.fills[i] -= 1;
            let j = weighted_pick(&mut world.rng, &matrix[i * n..(i + 1) * n], mu);
            let duration = models.geometry.travel_minutes(i, j).max(1) as i64;
            world.push_ride(now + duration, j, false);
        }
    }

    while world.riding.peek().is_some_and(|r| r.0.arrival <= now) {
        let Reverse(ride) = world.riding.pop().unwrap();
        let j = ride.destination;
        let cost = ctx.sampler.sample(&mut world.rng);
        let full = world.fills[j] >= models.capacities[j];
        if !full {
            if !ride.diverted {
                if let Some(prices) = &world.prices {
                    let dist = models.geometry.neighbor_distances(j);
                    if let Some(kx) = choose(&prices[j], &dist, cost, false) {
                        let target = models.geometry.neighbors[j][kx];
                        if measured {
                            tally.payout += prices[j][kx];
                            tally.diverted += 1;
                        }
                        let extra = (60.0 * dist[kx] / models.geometry.median_speed_kmh).round().max(1.0) as i64;
                        world.push_ride(now + extra, target, true);
                        continue;
                    }
                }
            }
            world.fills[j] += 1;
            continue;
        }
        if !ride.diverted || ctx.count_diverted_full {
            note(tally, ctx, now, j, EventKind::Full);
        }
        let fills = &world.fills;
        let caps = &models.capacities;
        let prices = world.prices.as_ref();
        let walk = overflow_walk(
            j,
            &models.geometry,
            |s| fills[s] < caps[s],
            |s| prices.map(|p| p[s].clone()),
            cost,
        )
        .expect("fleet exceeds total dock capacity");
        let dest = walk.destination();
        if let Some(p) = prices {
            let prev = if walk.hops.len() >= 2 { walk.hops[walk.hops.len() - 2] } else { j };
            if let Some(kx) = models.geometry.neighbors[prev].iter().position(|&x| x == dest) {
                if measured && p[prev][kx] > 0.0 {
                    tally.payout += p[prev][kx];
                }
            }
        }
        world.fills[dest] += 1;
    }

    world.clock += 1;
    assert_eq!(world.bikes(), world.fleet, "bike conservation violated at minute {now}");
}

fn mpc_state(prepared: &Prepared, world: &WorldState, cfg: &MpcConfig) -> MpcState {
    let models = &prepared.models;
    let n = models.stations();
    let l = cfg.step_minutes as i64;
    let now = world.clock;
    let steps = (0..cfg.horizon as i64)
        .map(|t| {
            let begin = now + t * l;
            let w = prepared.days.at(begin);
            let flows = models.flows.get(w, begin.rem_euclid(MINUTES_PER_DAY as i64) as usize);
            let mut step = MpcStep::zeros(n);
            for s in 0..n {
                let p = prepared.plateaus.get(s, begin + l);
                step.midpoint[s] = p.midpoint();
                step.width[s] = p.width();
                step.lambda[s] = flows.lambda[s];
                step.eta[s] = flows.eta[s];
            }
            for truck in &world.trucks {
                for a in &truck.pending {
                    if a.minute >= begin && a.minute < begin + l {
                        step.truck[a.station] += a.delta as f64;
                    }
                }
            }
            step
        })
        .collect();
    MpcState {
        fills: world.fills.iter().map(|&f| f as f64).collect(),
        steps,
    }
}

/// Simulate one run and return its report.
pub fn run(prepared: &Prepared, config: &SimConfig) -> SimReport {
    run_observed(prepared, config, |_| {})
}

/// As [`run`], calling `observe` with the world after every minute.
pub fn run_observed(prepared: &Prepared, config: &SimConfig, mut observe: impl FnMut(&WorldState)) -> SimReport {
    let models = &prepared.models;
    let n = models.stations();
    let depot = config.routing.depot.unwrap_or_else(|| default_depot(&models.geometry));
    let mut world = WorldState::new(models, config.trucks, depot, config.seed);
    let sampler = UniformCost { c_max: models.c_max };
    let ctx = StepContext {
        models,
        days: &prepared.days,
        sampler: &sampler,
        routing: &config.routing,
        count_diverted_full: config.count_diverted_full,
        measure_from: config.burn_in_minutes,
        record_events: config.record_events,
        departures: Departures::Poisson,
    };
    let mut tally = Tally::new(n);
    let forecaster = prepared.forecaster();
    let mut controller = PriceController::default();
    let mpc = MpcConfig {
        alpha: config.alpha.unwrap_or(1.0),
        ..config.mpc
    };
    let day = MINUTES_PER_DAY as i64;
    let end = prepared.days.minutes();

    while world.clock < end {
        let now = world.clock;
        let minute_of_day = now.rem_euclid(day);
        let day_start = now - minute_of_day;
        let window = (config.routing.window_start_minute, config.routing.window_end_minute);

        if config.trucks > 0 && minute_of_day == window.0 {
            for t in &mut world.trucks {
                t.station = depot;
                t.free_minute = now;
                t.pending.clear();
            }
        }
        if config.trucks > 0 && minute_of_day == window.1 {
            world.unload_trucks(models, depot);
        }
        if config.trucks > 0
            && minute_of_day >= window.0
            && minute_of_day < window.1
            && (minute_of_day - window.0) % config.routing.implementation_minutes == 0
        {
            let fills: Vec<f64> = world.fills.iter().map(|&f| f as f64).collect();
            let trucks: Vec<TruckState> = world
                .trucks
                .iter()
                .enumerate()
                .map(|(id, t)| TruckState {
                    id,
                    station: t.station,
                    minute: t.free_minute.max(now),
                    load: t.load,
                })
                .collect();
            let pending: Vec<PlannedAction> = world.trucks.iter().flat_map(|t| t.pending.iter().copied()).collect();
            let plans = replan_tick(
                &TickInput {
                    geometry: &models.geometry,
                    capacities: &models.capacities,
                    fills: &fills,
                    forecaster: &forecaster,
                    trucks: &trucks,
                    pending: &pending,
                    now,
                    window_end: day_start + window.1,
                    depot,
                },
                &config.routing,
            );
            for plan in plans {
                world.trucks[plan.truck].pending.extend(plan.committed_actions().iter().copied());
            }
        }
        if config.alpha.is_some() && now % config.mpc.step_minutes as i64 == 0 {
            let state = mpc_state(prepared, &world, &mpc);
            let problem = build_mpc(&state, &models.geometry.neighbors, &models.response, &mpc)
                .expect("validated MPC config");
            let (issued, outcome) = controller.tick(&problem);
            log::debug!(
                "price solve at minute {now}: {:?} after {} iterations, residual {:.3e}",
                outcome.status,
                outcome.iterations,
                outcome.residual
            );
            world.prices = Some(issued);
        }
        step_minute(&mut world, &ctx, &mut tally);
        observe(&world);
    }

    SimReport {
        trucks: config.trucks,
        alpha: config.alpha,
        seed: config.seed,
        day_type: prepared.days.at(end - 1),
        potential: tally.potential,
        empty_events: tally.empty,
        full_events: tally.full,
        payout_total: tally.payout,
        truck_hours: tally.truck_minutes / 60.0,
        diverted: tally.diverted,
        station_empty: tally.station_empty,
        station_full: tally.station_full,
        price_solver_failures: controller.failures,
        events: tally.events,
    }
}

/// Aggregate over seeds of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub trucks: usize,
    pub alpha: Option<f64>,
    pub runs: usize,
    pub mean_service: f64,
    /// Standard error of the mean service level.
    pub se_service: f64,
    pub mean_payout: f64,
    pub mean_empty: f64,
    pub mean_full: f64,
    pub mean_truck_hours: f64,
}

impl SweepRow {
    /// 95% normal confidence interval of the mean service level.
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean_service - 1.96 * self.se_service, self.mean_service + 1.96 * self.se_service)
    }
}

fn alpha_key(a: Option<f64>) -> f64 {
    a.unwrap_or(f64::INFINITY)
}

/// One run of a sweep: trucks, alpha and seed.
pub type Cell = (usize, Option<f64>, u64);

/// Cells of a truck × alpha × seed grid, sorted by (R, α, seed).
pub fn grid_cells(trucks: &[usize], alphas: &[Option<f64>], seeds: &[u64]) -> Vec<Cell> {
    let mut cells: Vec<Cell> = Vec::new();
    for &r in trucks {
        for &a in alphas {
            for &s in seeds {
                cells.push((r, a, s));
            }
        }
    }
    cells.sort_by(|x, y| {
        x.0.cmp(&y.0)
            .then(alpha_key(x.1).total_cmp(&alpha_key(y.1)))
            .then(x.2.cmp(&y.2))
    });
    cells.dedup();
    cells
}

/// Every run of a truck × alpha × seed grid, sorted by (R, α, seed).
pub fn sweep_runs(prepared: &Prepared, base: &SimConfig, trucks: &[usize], alphas: &[Option<f64>], seeds: &[u64]) -> Vec<SimReport> {
    sweep_cells(prepared, base, &grid_cells(trucks, alphas, seeds))
}

/// Run the given cells in parallel; output order follows `cells`.
pub fn sweep_cells(prepared: &Prepared, base: &SimConfig, cells: &[Cell]) -> Vec<SimReport> {
    cells
        .par_iter()
        .map(|&(r, a, s)| {
            let cfg = SimConfig {
                trucks: r,
                alpha: a,
                seed: s,
                ..base.clone()
            };
            run(prepared, &cfg)
        })
        .collect()
}

/// Group reports by (R, α) in sorted order and aggregate.
pub fn aggregate(reports: &[SimReport]) -> Vec<SweepRow> {
    let mut keys: Vec<(usize, Option<f64>)> = reports.iter().map(|r| (r.trucks, r.alpha)).collect();
    keys.sort_by(|x, y| x.0.cmp(&y.0).then(alpha_key(x.1).total_cmp(&alpha_key(y.1))));
    keys.dedup();
    keys.into_iter()
        .map(|(trucks, alpha)| {
            let group: Vec<&SimReport> = reports.iter().filter(|r| r.trucks == trucks && r.alpha == alpha).collect();
            let k = group.len() as f64;
            let mean = |f: &dyn Fn(&SimReport) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / k;
            let mean_service = mean(&|r| r.service_level());
            let var = if group.len() > 1 {
                group.iter().map(|r| (r.service_level() - mean_service).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            SweepRow {
                trucks,
                alpha,
                runs: group.len(),
                mean_service,
                se_service: (var / k).sqrt(),
                mean_payout: mean(&|r| r.payout_total),
                mean_empty: mean(&|r| r.empty_events as f64),
                mean_full: mean(&|r| r.full_events as f64),
                mean_truck_hours: mean(&|r| r.truck_hours),
            }
        })
        .collect()
}

/// Write no-service events as CSV, one row per affected customer.
pub fn write_events<W: Write>(out: W, run_id: &str, events: &[NoServiceEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "minute", "station", "kind"])?;
    for e in events {
        let kind = match e.kind {
            EventKind::Empty => "empty",
            EventKind::Full => "full",
        };
        w.write_record([run_id.to_string(), e.minute.to_string(), e.station.to_string(), kind.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 11] = [
    "R",
    "alpha",
    "runs",
    "mean_service_level",
    "se_service_level",
    "ci95_low",
    "ci95_high",
    "mean_payout",
    "mean_empty_events",
    "mean_full_events",
    "mean_truck_hours",
];

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        let (lo, hi) = r.ci95();
        w.write_record([
            r.trucks.to_string(),
            format_alpha(r.alpha),
            r.runs.to_string(),
            format!("{:.6}", r.mean_service),
            format!("{:.6}", r.se_service),
            format!("{:.6}", lo),
            format!("{:.6}", hi),
            format!("{:.4}", r.mean_payout),
            format!("{:.4}", r.mean_empty),
            format!("{:.4}", r.mean_full),
            format!("{:.4}", r.mean_truck_hours),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::customer::StationResponse;

    fn tiny_models(rate: f64, caps: Vec<u32>, fill: Vec<u32>) -> SimModels {
        let geometry = Geometry::from_points(
            vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)],
            &[],
            &GeometryConfig {
                neighbor_count: 2,
                bbox_margin_km: 0.5,
            },
        )
        .unwrap();
        let mut rates = RateModel::zeros(3);
        for w in DayType::ALL {
            for k in 0..crate::demand::SLICES_PER_DAY {
                rates.set_rates(w, k, 0, 1, rate, rate);
            }
        }
        let response = LinearResponse {
            stations: (0..3).map(|_| StationResponse::zeros(2)).collect(),
            config: ResponseFitConfig::default(),
        };
        SimModels::from_parts(caps, fill, geometry, rates, response, 20.0)
    }

    #[test]
    fn zero_rates_leave_world_unchanged() {
        let models = Arc::new(tiny_models(0.0, vec![5, 5, 5], vec![2, 3, 1]));
        let prepared = Prepared::new(models, DaySequence(vec![DayType::Weekday]));
        let report = run(
            &prepared,
            &SimConfig {
                burn_in_minutes: 0,
                ..SimConfig::default()
            },
        );
        assert_eq!(report.potential, 0);
        assert_eq!(report.service_level(), 1.0);
        assert_eq!(report.payout_total, 0.0);
        assert_eq!(report.truck_hours, 0.0);
    }

    #[test]
    fn same_seed_same_report() {
        let models = Arc::new(tiny_models(0.3, vec![5, 5, 5], vec![5, 0, 2]));
        let prepared = Prepared::new(models, DaySequence(vec![DayType::Weekday, DayType::Weekday]));
        let cfg = SimConfig {
            seed: 9,
            ..SimConfig::default()
        };
        let a = run(&prepared, &cfg);
        let b = run(&prepared, &cfg);
        assert_eq!(a, b);
        assert!(a.potential > 0);
        assert!(a.empty_events > 0 || a.full_events > 0, "{a:?}");
    }

    #[test]
    fn report_csv_shape() {
        let models = Arc::new(tiny_models(0.0, vec![5, 5, 5], vec![2, 3, 1]));
        let prepared = Prepared::new(models, DaySequence(vec![DayType::Weekend]));
        let r = run(&prepared, &SimConfig::default());
        let mut buf = Vec::new();
        write_reports(&mut buf, &[("run-1".into(), r)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "run_id,R,alpha,seed,day_type,potential,empty_events,full_events,service_level,payout_total,truck_hours\n\
             run-1,0,inf,1,weekend,0,0,0,1.000000,0.0000,0.0000\n"
        );
    }
}
