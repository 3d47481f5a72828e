//! Customer decisions and their linear surrogate.
//!
//! A returning customer with marginal travel cost `c` (£/km) values an offer
//! to divert from `s` to neighbor `n` at `p − d̃·c`. The best offer is taken
//! when it is strictly profitable, or unconditionally when the intended
//! station is full.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::Geometry;
use crate::seed::stream_rng;

/// Upper end of the default travel-cost distribution, £/km.
pub const DEFAULT_C_MAX: f64 = 20.0;

/// Distribution of the per-customer marginal travel cost, given by its
/// inverse CDF so that implementations stay object safe.
pub trait CostSampler: Send + Sync + std::fmt::Debug {
    /// Cost at quantile `u ∈ [0, 1)`.
    fn quantile(&self, u: f64) -> f64;

    fn sample(&self, rng: &mut dyn rand::RngCore) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// `U[0, c_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformCost {
    pub c_max: f64,
}

impl Default for UniformCost {
    fn default() -> Self {
        UniformCost { c_max: DEFAULT_C_MAX }
    }
}

impl CostSampler for UniformCost {
    fn quantile(&self, u: f64) -> f64 {
        u * self.c_max
    }
}

/// Best candidate among `allowed` neighbors, ties to the lowest index.
///
/// Returns `None` when no candidate is allowed, or when `target_full` is
/// false and the best value is not strictly positive.
pub fn choose_among(
    payouts: &[f64],
    distances: &[f64],
    cost: f64,
    target_full: bool,
    allowed: impl Fn(usize) -> bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (n, (&p, &d)) in payouts.iter().zip(distances).enumerate() {
        if !allowed(n) {
            continue;
        }
        let value = p - d * cost;
        if best.is_none_or(|(_, v)| value > v) {
            best = Some((n, value));
        }
    }
    match best {
        Some((n, v)) if target_full || v > 0.0 => Some(n),
        _ => None,
    }
}

/// Index of the chosen neighbor in the offer, if any.
pub fn choose(payouts: &[f64], distances: &[f64], cost: f64, target_full: bool) -> Option<usize> {
    choose_among(payouts, distances, cost, target_full, |_| true)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkResult {
    /// Stations tried after the full target, ending with the one used.
    pub hops: Vec<usize>,
}

impl WalkResult {
    pub fn destination(&self) -> usize {
        *self.hops.last().expect("walk has at least one hop")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("every station is full")]
pub struct AllStationsFull;

/// Ride on from a full station until one with a free dock is found.
///
/// At each full station the customer picks the best unvisited neighbor
/// under that station's payouts (forced choice). When every neighbor has
/// been visited the nearest unvisited station overall is used.
pub fn overflow_walk(
    target: usize,
    geometry: &Geometry,
    has_space: impl Fn(usize) -> bool,
    payouts: impl Fn(usize) -> Option<Vec<f64>>,
    cost: f64,
) -> Result<WalkResult, AllStationsFull> {
    let n = geometry.len();
    let mut visited = vec![false; n];
    visited[target] = true;
    let mut current = target;
    let mut hops = Vec::new();
    loop {
        let neighbors = &geometry.neighbors[current];
        let dist = geometry.neighbor_distances(current);
        let offer = payouts(current).unwrap_or_else(|| vec![0.0; neighbors.len()]);
        let next = choose_among(&offer, &dist, cost, true, |k| !visited[neighbors[k]])
            .map(|k| neighbors[k])
            .or_else(|| geometry.nearest_order(current).into_iter().find(|&j| !visited[j]));
        let Some(next) = next else {
            return Err(AllStationsFull);
        };
        visited[next] = true;
        hops.push(next);
        if has_space(next) {
            return Ok(WalkResult { hops });
        }
        current = next;
    }
}

/// Monte-Carlo estimate of the share of customers (at a station with space)
/// taking each offer, from `draws` cost samples.
pub fn acceptance_probability<R: Rng + ?Sized>(
    payouts: &[f64],
    distances: &[f64],
    sampler: &dyn CostSampler,
    draws: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut counts = vec![0usize; payouts.len()];
    for _ in 0..draws {
        let c = sampler.quantile(rng.random::<f64>());
        if let Some(n) = choose(payouts, distances, c, false) {
            counts[n] += 1;
        }
    }
    counts.iter().map(|&k| k as f64 / draws.max(1) as f64).collect()
}

/// Payout vector and the observed acceptance shares.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSample {
    pub payouts: Vec<f64>,
    pub shares: Vec<f64>,
}

/// Sampling and fitting parameters of the linear response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseFitConfig {
    pub p_max: f64,
    /// Payout vectors sampled per station.
    pub samples: usize,
    /// Customers simulated per payout vector.
    pub customers: usize,
    pub seed: u64,
}

impl Default for ResponseFitConfig {
    fn default() -> Self {
        ResponseFitConfig {
            p_max: 5.0,
            samples: 500,
            customers: 400,
            seed: 0,
        }
    }
}

pub fn sample_behavior<R: Rng + ?Sized>(
    distances: &[f64],
    sampler: &dyn CostSampler,
    config: &ResponseFitConfig,
    rng: &mut R,
) -> Vec<BehaviorSample> {
    (0..config.samples)
        .map(|_| {
            let payouts: Vec<f64> = distances.iter().map(|_| rng.random::<f64>() * config.p_max).collect();
            let shares = acceptance_probability(&payouts, distances, sampler, config.customers, rng);
            BehaviorSample { payouts, shares }
        })
        .collect()
}

/// Linear response of one station: `coeffs[n]` maps the payout vector to
/// the expected share diverting to neighbor `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationResponse {
    pub coeffs: Vec<Vec<f64>>,
}

impl StationResponse {
    pub fn zeros(neighbors: usize) -> Self {
        StationResponse {
            coeffs: vec![vec![0.0; neighbors]; neighbors],
        }
    }

    pub fn neighbors(&self) -> usize {
        self.coeffs.len()
    }

    pub fn share(&self, n: usize, payouts: &[f64]) -> f64 {
        self.coeffs[n].iter().zip(payouts).map(|(a, p)| a * p).sum()
    }

    pub fn predict(&self, payouts: &[f64]) -> Vec<f64> {
        (0..self.neighbors()).map(|n| self.share(n, payouts)).collect()
    }

    /// Coefficients of the total diverted share `Σ_n π̃_nᵀ p`.
    pub fn total_coeffs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.neighbors()];
        for row in &self.coeffs {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a;
            }
        }
        out
    }
}

/// Least-squares fit without intercept. A singular design yields zero
/// coefficients.
pub fn fit_station_response(samples: &[BehaviorSample], neighbors: usize) -> StationResponse {
    let k = neighbors;
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![vec![0.0; k]; k];
    for s in samples {
        for a in 0..k {
            for b in 0..k {
                gram[a * k + b] += s.payouts[a] * s.payouts[b];
            }
            for (n, r) in rhs.iter_mut().enumerate() {
                r[a] += s.payouts[a] * s.shares[n];
            }
        }
    }
    let Some(factor) = cholesky(&gram, k) else {
        log::warn!("singular payout design; linear response set to zero");
        return StationResponse::zeros(k);
    };
    StationResponse {
        coeffs: rhs.iter().map(|r| cholesky_solve(&factor, k, r)).collect(),
    }
}

fn cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let scale = (0..k).map(|i| a[i * k + i]).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for m in 0..j {
                s -= l[i * k + m] * l[j * k + m];
            }
            if i == j {
                if s <= 1e-12 * scale {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..k {
        for m in 0..i {
            y[i] -= l[i * k + m] * y[m];
        }
        y[i] /= l[i * k + i];
    }
    for i in (0..k).rev() {
        for m in i + 1..k {
            y[i] -= l[m * k + i] * y[m];
        }
        y[i] /= l[i * k + i];
    }
    y
}

/// Fitted responses for every station of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearResponse {
    pub stations: Vec<StationResponse>,
    pub config: ResponseFitConfig,
}

impl LinearResponse {
    pub fn zeros(geometry: &Geometry, config: ResponseFitConfig) -> Self {
        LinearResponse {
            stations: geometry.neighbors.iter().map(|n| StationResponse::zeros(n.len())).collect(),
            config,
        }
    }
}

/// Fit every station independently; station `s` uses random stream `s`
/// of the configured seed, so the result does not depend on thread count.
pub fn fit_linear_response(geometry: &Geometry, sampler: &dyn CostSampler, config: &ResponseFitConfig) -> LinearResponse {
    let stations = (0..geometry.len())
        .into_par_iter()
        .map(|s| {
            let distances = geometry.neighbor_distances(s);
            let mut rng = stream_rng(config.seed, s as u64);
            let samples = sample_behavior(&distances, sampler, config, &mut rng);
            fit_station_response(&samples, distances.len())
        })
        .collect();
    LinearResponse {
        stations,
        config: *config,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_payouts_never_divert_at_open_station() {
        assert_eq!(choose(&[0.0, 0.0], &[0.1, 0.2], 5.0, false), None);
        assert_eq!(choose(&[0.0, 0.0], &[0.1, 0.2], 0.0, false), None);
    }

    #[test]
    fn best_value_wins() {
        assert_eq!(choose(&[2.0, 1.0], &[0.1, 0.1], 5.0, false), Some(0));
        assert_eq!(choose(&[1.0, 2.0], &[0.1, 0.1], 5.0, false), Some(1));
    }

    #[test]
    fn full_station_forces_nearest() {
        assert_eq!(choose(&[0.0, 0.0, 0.0], &[0.3, 0.1, 0.2], 5.0, true), Some(1));
        // ties resolve to the lowest index
        assert_eq!(choose(&[0.0, 0.0], &[0.1, 0.1], 5.0, true), Some(0));
    }

    #[test]
    fn single_offer_acceptance_matches_uniform_cdf() {
        let sampler = UniformCost::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 0.5;
        let p = 4.0;
        let est = acceptance_probability(&[p], &[d], &sampler, 20_000, &mut rng)[0];
        let exact: f64 = (p / (DEFAULT_C_MAX * d)).min(1.0);
        assert!((est - exact).abs() < 3.0 * (exact * (1.0 - exact) / 20_000.0).sqrt() + 1e-3);
    }

    #[test]
    fn exact_linear_slope_recovered() {
        let d = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ResponseFitConfig::default();
        let samples = sample_behavior(&[d], &UniformCost::default(), &cfg, &mut rng);
        let fit = fit_station_response(&samples, 1);
        assert!((fit.coeffs[0][0] - 1.0 / (DEFAULT_C_MAX * d)).abs() < 0.005);
    }

    #[test]
    fn zero_payout_box_gives_zero_fit() {
        let cfg = ResponseFitConfig {
            p_max: 0.0,
            samples: 20,
            customers: 10,
            seed: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = sample_behavior(&[0.2, 0.3], &UniformCost::default(), &cfg, &mut rng);
        assert_eq!(fit_station_response(&samples, 2), StationResponse::zeros(2));
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        let x = cholesky_solve(&l, 2, &[2.0, 1.0]);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-12);
        assert!(cholesky(&[1.0, 1.0, 1.0, 1.0], 2).is_none());
    }
}
