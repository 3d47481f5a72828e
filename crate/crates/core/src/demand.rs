//! Demand estimation and customer geometry.
//!
//! The day is split into 72 slices of 20 minutes. For every day type and
//! slice, the origin–destination departure and arrival counts are divided
//! by the number of observed minutes in that cell, giving per-minute rates.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Epoch, RideRecord, StationTable};

pub const MINUTES_PER_DAY: usize = 24 * 60;
pub const SLICE_MINUTES: usize = 20;
pub const SLICES_PER_DAY: usize = MINUTES_PER_DAY / SLICE_MINUTES;
/// Neighbors offered as incentive targets per station.
pub const DEFAULT_NEIGHBORS: usize = 10;
/// Fallback cycling speed when the corpus has no usable rides.
pub const DEFAULT_SPEED_KMH: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    pub const ALL: [DayType; 2] = [DayType::Weekday, DayType::Weekend];

    pub fn index(self) -> usize {
        match self {
            DayType::Weekday => 0,
            DayType::Weekend => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DayType::Weekday => "weekday",
            DayType::Weekend => "weekend",
        }
    }
}

impl std::str::FromStr for DayType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "weekday" => Ok(DayType::Weekday),
            "weekend" => Ok(DayType::Weekend),
            other => Err(format!("unknown day type {other:?}")),
        }
    }
}

impl std::fmt::Display for DayType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Slice index of a minute of the day.
pub fn slice_of(minute_of_day: usize) -> usize {
    (minute_of_day % MINUTES_PER_DAY) / SLICE_MINUTES
}

/// Observed days and their types, keyed by day index since the epoch.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DayCalendar {
    days: Vec<(i64, DayType)>,
}

impl DayCalendar {
    pub fn explicit(mut days: Vec<(i64, DayType)>) -> Self {
        days.sort();
        days.dedup_by_key(|d| d.0);
        DayCalendar { days }
    }

    /// Every calendar day from the first departure to the last arrival.
    pub fn spanning(rides: &[RideRecord], epoch: &Epoch) -> Self {
        let first = rides.iter().map(|r| r.start_time).min();
        let last = rides.iter().map(|r| r.end_time).max();
        let (Some(first), Some(last)) = (first, last) else {
            return DayCalendar::default();
        };
        let (d0, d1) = (epoch.day_index(first), epoch.day_index(last));
        let midnight0 = first - epoch.minute_of_day(first) as i64;
        let days = (d0..=d1)
            .map(|d| {
                let minute = midnight0 + (d - d0) * MINUTES_PER_DAY as i64;
                (d, epoch.day_type(minute))
            })
            .collect();
        DayCalendar { days }
    }

    pub fn days(&self) -> &[(i64, DayType)] {
        &self.days
    }

    pub fn count(&self, kind: DayType) -> usize {
        self.days.iter().filter(|d| d.1 == kind).count()
    }

    pub fn day_type(&self, day: i64) -> Option<DayType> {
        self.days
            .binary_search_by_key(&day, |d| d.0)
            .ok()
            .map(|i| self.days[i].1)
    }
}

/// Per-minute origin–destination rates by day type and slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    stations: usize,
    /// Flattened `[w][k][i][j]`.
    departures: Vec<f64>,
    /// Flattened `[w][k][i][j]`, binned by arrival time.
    arrivals: Vec<f64>,
    /// Observed minutes per `[w][k]`.
    history_minutes: Vec<u64>,
}

/// Expected departures `mu`, arrivals `lambda` and net change `eta` per
/// station, all per minute.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSummary {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
}

impl RateModel {
    pub fn zeros(stations: usize) -> Self {
        let cells = DayType::ALL.len() * SLICES_PER_DAY;
        RateModel {
            stations,
            departures: vec![0.0; cells * stations * stations],
            arrivals: vec![0.0; cells * stations * stations],
            history_minutes: vec![0; cells],
        }
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    fn cell(&self, w: DayType, k: usize) -> usize {
        debug_assert!(k < SLICES_PER_DAY);
        w.index() * SLICES_PER_DAY + k
    }

    fn offset(&self, w: DayType, k: usize) -> usize {
        self.cell(w, k) * self.stations * self.stations
    }

    /// Departure-rate matrix `M[i][j]` of one cell, row-major.
    pub fn departure_matrix(&self, w: DayType, k: usize) -> &[f64] {
        let o = self.offset(w, k);
        &self.departures[o..o + self.stations * self.stations]
    }

    pub fn arrival_matrix(&self, w: DayType, k: usize) -> &[f64] {
        let o = self.offset(w, k);
        &self.arrivals[o..o + self.stations * self.stations]
    }

    pub fn departure_rate(&self, w: DayType, k: usize, i: usize, j: usize) -> f64 {
        self.departure_matrix(w, k)[i * self.stations + j]
    }

    pub fn arrival_rate(&self, w: DayType, k: usize, i: usize, j: usize) -> f64 {
        self.arrival_matrix(w, k)[i * self.stations + j]
    }

    pub fn history_minutes(&self, w: DayType, k: usize) -> u64 {
        self.history_minutes[self.cell(w, k)]
    }

    /// Overwrite one departure and arrival entry; used to build fixtures.
    pub fn set_rates(&mut self, w: DayType, k: usize, i: usize, j: usize, departure: f64, arrival: f64) {
        let o = self.offset(w, k) + i * self.stations + j;
        self.departures[o] = departure;
        self.arrivals[o] = arrival;
    }

    pub fn flow_summary(&self, w: DayType, k: usize) -> FlowSummary {
        let n = self.stations;
        let m = self.departure_matrix(w, k);
        let l = self.arrival_matrix(w, k);
        let mut mu = vec![0.0; n];
        let mut lambda = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                mu[i] += m[i * n + j];
                lambda[j] += l[i * n + j];
            }
        }
        let eta = lambda.iter().zip(&mu).map(|(a, b)| a - b).collect();
        FlowSummary { mu, lambda, eta }
    }

    /// Flow summary at a minute of the day.
    pub fn flow_at(&self, w: DayType, minute_of_day: usize) -> FlowSummary {
        self.flow_summary(w, slice_of(minute_of_day))
    }
}

/// Per-slice flow summaries for both day types, precomputed for fast
/// lookups inside the simulator and controllers.
#[derive(Debug, Clone)]
pub struct FlowTable {
    cells: Vec<FlowSummary>,
}

impl FlowTable {
    pub fn new(model: &RateModel) -> Self {
        let cells = DayType::ALL
            .iter()
            .flat_map(|&w| (0..SLICES_PER_DAY).map(move |k| (w, k)))
            .map(|(w, k)| model.flow_summary(w, k))
            .collect();
        FlowTable { cells }
    }

    pub fn get(&self, w: DayType, minute_of_day: usize) -> &FlowSummary {
        &self.cells[w.index() * SLICES_PER_DAY + slice_of(minute_of_day)]
    }
}

/// Fit the rate tensors. Departures are binned by start time and the day
/// type of the start day; arrivals by end time, using the end day's type
/// when the calendar knows it and the start day's otherwise. Rides whose
/// start day is not in the calendar are ignored.
pub fn fit_rates(rides: &[RideRecord], stations: &StationTable, calendar: &DayCalendar, epoch: &Epoch) -> RateModel {
    let n = stations.len();
    let mut model = RateModel::zeros(n);
    for w in DayType::ALL {
        let days = calendar.count(w) as u64;
        for k in 0..SLICES_PER_DAY {
            let c = model.cell(w, k);
            model.history_minutes[c] = days * SLICE_MINUTES as u64;
        }
        if days == 0 {
            log::warn!("no {w} days in the history; {w} rates are zero");
        }
    }

    for r in rides {
        let Some(w_start) = calendar.day_type(epoch.day_index(r.start_time)) else {
            continue;
        };
        let (Some(i), Some(j)) = (stations.index_of(r.start_station), stations.index_of(r.end_station)) else {
            continue;
        };
        let w_end = calendar.day_type(epoch.day_index(r.end_time)).unwrap_or(w_start);
        let o = model.offset(w_start, slice_of(epoch.minute_of_day(r.start_time))) + i * n + j;
        model.departures[o] += 1.0;
        let o = model.offset(w_end, slice_of(epoch.minute_of_day(r.end_time))) + i * n + j;
        model.arrivals[o] += 1.0;
    }

    for w in DayType::ALL {
        for k in 0..SLICES_PER_DAY {
            let minutes = model.history_minutes(w, k);
            let o = model.offset(w, k);
            let block = o..o + n * n;
            if minutes == 0 {
                model.departures[block.clone()].fill(0.0);
                model.arrivals[block].fill(0.0);
                continue;
            }
            let scale = 1.0 / minutes as f64;
            model.departures[block.clone()].iter_mut().for_each(|x| *x *= scale);
            model.arrivals[block].iter_mut().for_each(|x| *x *= scale);
        }
    }
    model
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("at least 3 stations are required, got {0}")]
    TooFewStations(usize),
    #[error("station locations are collinear")]
    Collinear,
    #[error("stations {0} and {1} share a location")]
    Coincident(usize, usize),
    #[error("station {0} lies outside the bounding box")]
    OutsideBox(usize),
}

/// Local equirectangular projection to kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub lat0: f64,
    pub lon0: f64,
}

const EARTH_RADIUS_KM: f64 = 6371.0;

impl Projection {
    /// Projection about the mean station position.
    pub fn about_centroid(stations: &StationTable) -> Self {
        let n = stations.len().max(1) as f64;
        let lat0 = stations.records().iter().map(|s| s.lat).sum::<f64>() / n;
        let lon0 = stations.records().iter().map(|s| s.lon).sum::<f64>() / n;
        Projection { lat0, lon0 }
    }

    pub fn to_km(&self, lat: f64, lon: f64) -> (f64, f64) {
        let x = (lon - self.lon0).to_radians() * self.lat0.to_radians().cos() * EARTH_RADIUS_KM;
        let y = (lat - self.lat0).to_radians() * EARTH_RADIUS_KM;
        (x, y)
    }

    pub fn to_latlon(&self, x: f64, y: f64) -> (f64, f64) {
        let lat = self.lat0 + (y / EARTH_RADIUS_KM).to_degrees();
        let lon = self.lon0 + (x / (EARTH_RADIUS_KM * self.lat0.to_radians().cos())).to_degrees();
        (lat, lon)
    }
}

pub type Point = (f64, f64);

/// Axis-aligned clipping box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Point,
    pub max: Point,
}

impl BoundingBox {
    /// Smallest box around `points`, grown by `margin` on every side.
    pub fn around(points: &[Point], margin: f64) -> Self {
        let mut min = (f64::INFINITY, f64::INFINITY);
        let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            min = (min.0.min(x), min.1.min(y));
            max = (max.0.max(x), max.1.max(y));
        }
        BoundingBox {
            min: (min.0 - margin, min.1 - margin),
            max: (max.0 + margin, max.1 + margin),
        }
    }

    fn contains(&self, p: Point) -> bool {
        p.0 >= self.min.0 && p.0 <= self.max.0 && p.1 >= self.min.1 && p.1 <= self.max.1
    }

    fn polygon(&self) -> Vec<Point> {
        vec![
            self.min,
            (self.max.0, self.min.1),
            self.max,
            (self.min.0, self.max.1),
        ]
    }
}

/// Keep the part of `poly` with `a·p ≤ b`.
fn clip_halfplane(poly: &[Point], a: Point, b: f64) -> Vec<Point> {
    let side = |p: Point| a.0 * p.0 + a.1 * p.1 - b;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for idx in 0..poly.len() {
        let p = poly[idx];
        let q = poly[(idx + 1) % poly.len()];
        let (sp, sq) = (side(p), side(q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
        }
    }
    out
}

/// Area-weighted centroid of a simple polygon.
pub fn polygon_centroid(poly: &[Point]) -> Point {
    let mut area2 = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    for idx in 0..poly.len() {
        let p = poly[idx];
        let q = poly[(idx + 1) % poly.len()];
        let cross = p.0 * q.1 - q.0 * p.1;
        area2 += cross;
        cx += (p.0 + q.0) * cross;
        cy += (p.1 + q.1) * cross;
    }
    if area2.abs() < 1e-18 {
        let n = poly.len().max(1) as f64;
        return (
            poly.iter().map(|p| p.0).sum::<f64>() / n,
            poly.iter().map(|p| p.1).sum::<f64>() / n,
        );
    }
    (cx / (3.0 * area2), cy / (3.0 * area2))
}

/// Voronoi cell of every point, clipped to `bbox`, as counter-clockwise
/// polygons.
pub fn voronoi_cells(points: &[Point], bbox: &BoundingBox) -> Result<Vec<Vec<Point>>, GeometryError> {
    let n = points.len();
    if n < 3 {
        return Err(GeometryError::TooFewStations(n));
    }
    let scale = points
        .iter()
        .flat_map(|p| [p.0.abs(), p.1.abs()])
        .fold(1.0f64, f64::max);
    let eps = 1e-12 * scale * scale;
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (points[j].0 - points[i].0, points[j].1 - points[i].1);
            if dx * dx + dy * dy <= eps {
                return Err(GeometryError::Coincident(i, j));
            }
        }
    }
    let collinear = (2..n).all(|k| {
        let (a, b, c) = (points[0], points[1], points[k]);
        ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs() <= eps
    });
    if collinear {
        return Err(GeometryError::Collinear);
    }
    if let Some(i) = points.iter().position(|&p| !bbox.contains(p)) {
        return Err(GeometryError::OutsideBox(i));
    }

    Ok(points
        .iter()
        .enumerate()
        .map(|(i, &pi)| {
            let mut poly = bbox.polygon();
            for (j, &pj) in points.iter().enumerate() {
                if i == j || poly.is_empty() {
                    continue;
                }
                // |x − pi|² ≤ |x − pj|²  ⇔  (pj − pi)·x ≤ (|pj|² − |pi|²)/2
                let a = (pj.0 - pi.0, pj.1 - pi.1);
                let b = 0.5 * ((pj.0 * pj.0 + pj.1 * pj.1) - (pi.0 * pi.0 + pi.1 * pi.1));
                poly = clip_halfplane(&poly, a, b);
            }
            poly
        })
        .collect())
}

/// Centre of mass of each clipped Voronoi cell.
pub fn voronoi_centers(points: &[Point], bbox: &BoundingBox) -> Result<Vec<Point>, GeometryError> {
    Ok(voronoi_cells(points, bbox)?.iter().map(|c| polygon_centroid(c)).collect())
}

fn dist(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Raw effective distance: cycle `i → j`, plus walking (at half speed)
/// from `j` to its catchment centre, minus the walk saved at `i`.
pub fn effective_distance_raw(d_ij: f64, d_j_center: f64, d_i_center: f64) -> f64 {
    d_ij + 2.0 * d_j_center - 2.0 * d_i_center
}

/// Tuning for [`Geometry::build`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub neighbor_count: usize,
    /// Margin added around the station hull for Voronoi clipping, km.
    pub bbox_margin_km: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            neighbor_count: DEFAULT_NEIGHBORS,
            bbox_margin_km: 0.5,
        }
    }
}

/// Distances, catchment centres, travel times and neighbor sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub positions: Vec<Point>,
    pub centers: Vec<Point>,
    /// Row-major `n × n` Euclidean distances, km.
    pub d_eucl: Vec<f64>,
    /// Row-major raw effective distances, km; may be negative.
    pub d_tilde: Vec<f64>,
    /// Row-major mean ride durations, minutes.
    pub travel_time: Vec<u32>,
    pub neighbors: Vec<Vec<usize>>,
    /// `reverse[n]` lists every `s` with `n ∈ neighbors[s]`.
    pub reverse: Vec<Vec<usize>>,
    pub median_speed_kmh: f64,
}

impl Geometry {
    pub fn build(
        stations: &StationTable,
        rides: &[RideRecord],
        config: &GeometryConfig,
    ) -> Result<Self, GeometryError> {
        let proj = Projection::about_centroid(stations);
        let positions: Vec<Point> = stations.records().iter().map(|s| proj.to_km(s.lat, s.lon)).collect();
        let pairs: Vec<(usize, usize, i64)> = rides
            .iter()
            .filter_map(|r| Some((stations.index_of(r.start_station)?, stations.index_of(r.end_station)?, r.duration())))
            .collect();
        Geometry::from_points(positions, &pairs, config)
    }

    /// Build from projected positions and `(origin, destination, minutes)`
    /// ride observations.
    pub fn from_points(
        positions: Vec<Point>,
        rides: &[(usize, usize, i64)],
        config: &GeometryConfig,
    ) -> Result<Self, GeometryError> {
        let bbox = BoundingBox::around(&positions, config.bbox_margin_km);
        let centers = voronoi_centers(&positions, &bbox)?;
        let n = positions.len();
        let mut d_eucl = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d_eucl[i * n + j] = if i == j { 0.0 } else { dist(positions[i], positions[j]) };
            }
        }
        let walk: Vec<f64> = (0..n).map(|i| dist(positions[i], centers[i])).collect();
        let mut d_tilde = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d_tilde[i * n + j] = if i == j {
                    0.0
                } else {
                    effective_distance_raw(d_eucl[i * n + j], walk[j], walk[i])
                };
            }
        }
        let (travel_time, median_speed_kmh) = travel_times(n, &d_eucl, rides);
        let neighbors = select_neighbors(n, &d_tilde, &d_eucl, config.neighbor_count);
        let reverse = reverse_sets(n, &neighbors);
        Ok(Geometry {
            positions,
            centers,
            d_eucl,
            d_tilde,
            travel_time,
            neighbors,
            reverse,
            median_speed_kmh,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.d_eucl[i * self.len() + j]
    }

    pub fn effective_distance_raw(&self, i: usize, j: usize) -> f64 {
        self.d_tilde[i * self.len() + j]
    }

    /// Effective distance as perceived in the choice model, clamped at 0.
    pub fn effective_distance(&self, i: usize, j: usize) -> f64 {
        self.effective_distance_raw(i, j).max(0.0)
    }

    pub fn travel_minutes(&self, i: usize, j: usize) -> u32 {
        self.travel_time[i * self.len() + j]
    }

    /// Clamped effective distances from `s` to each of its neighbors.
    pub fn neighbor_distances(&self, s: usize) -> Vec<f64> {
        self.neighbors[s].iter().map(|&n| self.effective_distance(s, n)).collect()
    }

    /// Stations by increasing Euclidean distance from `s`, excluding `s`.
    pub fn nearest_order(&self, s: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).filter(|&j| j != s).collect();
        order.sort_by(|&a, &b| self.distance(s, a).total_cmp(&self.distance(s, b)).then(a.cmp(&b)));
        order
    }
}

/// Up to `count` neighbors per station, ranked by smallest positive raw
/// effective distance. Stations short of positive candidates are topped up
/// with the nearest remaining stations by Euclidean distance.
pub fn select_neighbors(n: usize, d_tilde: &[f64], d_eucl: &[f64], count: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|s| {
            let mut positive: Vec<usize> = (0..n).filter(|&j| j != s && d_tilde[s * n + j] > 0.0).collect();
            positive.sort_by(|&a, &b| d_tilde[s * n + a].total_cmp(&d_tilde[s * n + b]).then(a.cmp(&b)));
            positive.truncate(count);
            if positive.len() < count {
                let chosen: BTreeSet<usize> = positive.iter().copied().collect();
                let mut rest: Vec<usize> = (0..n).filter(|&j| j != s && !chosen.contains(&j)).collect();
                rest.sort_by(|&a, &b| d_eucl[s * n + a].total_cmp(&d_eucl[s * n + b]).then(a.cmp(&b)));
                positive.extend(rest.into_iter().take(count - positive.len()));
            }
            positive
        })
        .collect()
}

pub fn reverse_sets(n: usize, neighbors: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut reverse = vec![Vec::new(); n];
    for (s, list) in neighbors.iter().enumerate() {
        for &m in list {
            reverse[m].push(s);
        }
    }
    reverse
}

/// Mean ride minutes per OD pair (rounded, at least 1) and the median
/// cycling speed in km/h. Unobserved pairs use the Euclidean distance at
/// the median speed.
pub fn travel_times(n: usize, d_eucl: &[f64], rides: &[(usize, usize, i64)]) -> (Vec<u32>, f64) {
    let mut sums: HashMap<(usize, usize), (i64, u64)> = HashMap::new();
    let mut speeds = Vec::new();
    for &(i, j, minutes) in rides {
        let e = sums.entry((i, j)).or_insert((0, 0));
        e.0 += minutes;
        e.1 += 1;
        if i != j && minutes > 0 {
            speeds.push(d_eucl[i * n + j] / (minutes as f64 / 60.0));
        }
    }
    let speed = median(&mut speeds).filter(|v| *v > 0.0).unwrap_or(DEFAULT_SPEED_KMH);
    let mut out = vec![0u32; n * n];
    for i in 0..n {
        for j in 0..n {
            let minutes = match sums.get(&(i, j)) {
                Some(&(total, count)) => total as f64 / count as f64,
                None => 60.0 * d_eucl[i * n + j] / speed,
            };
            out[i * n + j] = minutes.round().max(1.0) as u32;
        }
    }
    (out, speed)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

/// Rides per (day type, hour of day), averaged over observed days.
pub fn hourly_departures(rides: &[RideRecord], calendar: &DayCalendar, epoch: &Epoch) -> BTreeMap<DayType, [f64; 24]> {
    let mut out = BTreeMap::new();
    for w in DayType::ALL {
        out.insert(w, [0.0; 24]);
    }
    for r in rides {
        if let Some(w) = calendar.day_type(epoch.day_index(r.start_time)) {
            out.get_mut(&w).unwrap()[epoch.minute_of_day(r.start_time) / 60] += 1.0;
        }
    }
    for w in DayType::ALL {
        let days = calendar.count(w).max(1) as f64;
        out.get_mut(&w).unwrap().iter_mut().for_each(|x| *x /= days);
    }
    out
}
