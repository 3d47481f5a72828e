//! Receding-horizon price incentives.
//!
//! At every control step the controller predicts station fills over a
//! short horizon with the linear customer response and chooses payouts that
//! trade squared deviation from the plateau centre against a payout cost.
//! Only the first step of the optimal schedule is issued.
//!
//! For station `m` with neighbors `N_m` and payout vector `p_m`, diverted
//! customers change fills by
//! `γ_n += L·λ_m·π̃_{m,n}ᵀp_m` for `n ∈ N_m` and `γ_m −= L·λ_m·Σ_n π̃_{m,n}ᵀp_m`,
//! where `L` is the step length in minutes, so `Σ γ = 0`.

use serde::{Deserialize, Serialize};

use crate::customer::LinearResponse;
use crate::qp::{self, natural_residual, ProjectedProblem, QpInstance, QpSettings, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Weight of payout cost against fill deviation.
    pub alpha: f64,
    /// Largest single payout, £.
    pub p_max: f64,
    /// Horizon in control steps.
    pub horizon: usize,
    pub step_minutes: usize,
    /// Floor on the plateau width used in the deviation weight.
    pub width_floor: f64,
    /// Payout weight floor, relative to `alpha`.
    pub r_floor: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            alpha: 0.1,
            p_max: 5.0,
            horizon: 6,
            step_minutes: 20,
            width_floor: 0.5,
            r_floor: 1e-6,
            tol: 1e-6,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PricingError {
    #[error("invalid MPC config: {0}")]
    Config(&'static str),
    #[error("state has {got} steps, horizon is {want}")]
    Horizon { got: usize, want: usize },
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), PricingError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(PricingError::Config("alpha must be positive and finite"));
        }
        if !(self.p_max > 0.0) {
            return Err(PricingError::Config("p_max must be positive"));
        }
        if self.horizon == 0 || self.step_minutes == 0 {
            return Err(PricingError::Config("horizon and step must be at least 1"));
        }
        Ok(())
    }
}

/// Forecast inputs for one control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcStep {
    /// Plateau centre per station at the end of the step.
    pub midpoint: Vec<f64>,
    /// Plateau width per station at the end of the step.
    pub width: Vec<f64>,
    /// Arrivals per minute.
    pub lambda: Vec<f64>,
    /// Net change per minute.
    pub eta: Vec<f64>,
    /// Bikes added by trucks during the step.
    pub truck: Vec<f64>,
}

impl MpcStep {
    pub fn zeros(n: usize) -> Self {
        MpcStep {
            midpoint: vec![0.0; n],
            width: vec![0.0; n],
            lambda: vec![0.0; n],
            eta: vec![0.0; n],
            truck: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcState {
    pub fills: Vec<f64>,
    pub steps: Vec<MpcStep>,
}

/// Payouts per step, station and neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub prices: Vec<Vec<Vec<f64>>>,
}

impl PriceSchedule {
    pub fn zeros(horizon: usize, neighbors: &[Vec<usize>]) -> Self {
        PriceSchedule {
            prices: (0..horizon)
                .map(|_| neighbors.iter().map(|n| vec![0.0; n.len()]).collect())
                .collect(),
        }
    }

    /// Issued payouts, i.e. the first step.
    pub fn first(&self) -> &[Vec<f64>] {
        &self.prices[0]
    }

    /// Drop the first step and repeat the last, for warm starts.
    pub fn shifted(&self) -> Self {
        let mut prices = self.prices[1.min(self.prices.len())..].to_vec();
        if let Some(last) = self.prices.last() {
            prices.push(last.clone());
        }
        PriceSchedule { prices }
    }
}

/// The MPC problem over all payout vectors of the horizon.
#[derive(Debug, Clone)]
pub struct MpcProblem<'a> {
    neighbors: &'a [Vec<usize>],
    /// `Σ_n π̃_{m,n}` per station.
    totals: Vec<Vec<f64>>,
    response: &'a LinearResponse,
    config: MpcConfig,
    n: usize,
    horizon: usize,
    /// Variable offset of station `m` within a step.
    start: Vec<usize>,
    per_step: usize,
    /// Uncontrolled deviation from the plateau centre after each step.
    base: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    /// `L·λ_m` per step.
    scaled_lambda: Vec<Vec<f64>>,
}

/// Assemble the MPC problem. Deviation weights are `1/max(ε, width)`; the
/// payout weight of a station is `α·λ·Σπ̃`, floored at `α·r_floor`.
pub fn build_mpc<'a>(
    state: &MpcState,
    neighbors: &'a [Vec<usize>],
    response: &'a LinearResponse,
    config: &MpcConfig,
) -> Result<MpcProblem<'a>, PricingError> {
    config.validate()?;
    if state.steps.len() < config.horizon {
        return Err(PricingError::Horizon {
            got: state.steps.len(),
            want: config.horizon,
        });
    }
    let n = state.fills.len();
    let l = config.step_minutes as f64;
    let mut start = Vec::with_capacity(n);
    let mut per_step = 0;
    for nb in neighbors {
        start.push(per_step);
        per_step += nb.len();
    }
    let totals: Vec<Vec<f64>> = response.stations.iter().map(|r| r.total_coeffs()).collect();
    let mut base = Vec::with_capacity(config.horizon);
    let mut q = Vec::with_capacity(config.horizon);
    let mut r = Vec::with_capacity(config.horizon);
    let mut scaled_lambda = Vec::with_capacity(config.horizon);
    let mut fill = state.fills.clone();
    for step in &state.steps[..config.horizon] {
        for s in 0..n {
            fill[s] += l * step.eta[s] + step.truck[s];
        }
        base.push((0..n).map(|s| fill[s] - step.midpoint[s]).collect());
        q.push(step.width.iter().map(|w| 1.0 / w.max(config.width_floor)).collect());
        r.push(
            (0..n)
                .map(|s| {
                    let sensitivity: f64 = totals[s].iter().sum();
                    (config.alpha * l * step.lambda[s] * sensitivity).max(config.alpha * config.r_floor)
                })
                .collect(),
        );
        scaled_lambda.push(step.lambda.iter().map(|x| l * x).collect());
    }
    Ok(MpcProblem {
        neighbors,
        totals,
        response,
        config: *config,
        n,
        horizon: config.horizon,
        start,
        per_step,
        base,
        q,
        r,
        scaled_lambda,
    })
}

impl MpcProblem<'_> {
    fn var(&self, t: usize, m: usize) -> std::ops::Range<usize> {
        let o = t * self.per_step + self.start[m];
        o..o + self.neighbors[m].len()
    }

    /// Fill change per station caused by diversions at step `t`.
    pub fn gamma(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let mut gamma = vec![0.0; self.n];
        for m in 0..self.n {
            let p = &x[self.var(t, m)];
            if p.is_empty() {
                continue;
            }
            let lam = self.scaled_lambda[t][m];
            let resp = &self.response.stations[m];
            for (k, &nb) in self.neighbors[m].iter().enumerate() {
                let share = lam * resp.share(k, p);
                gamma[nb] += share;
                gamma[m] -= share;
            }
        }
        gamma
    }

    /// Deviation from the plateau centre after each step.
    pub fn deviations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut cum = vec![0.0; self.n];
        (0..self.horizon)
            .map(|t| {
                for (c, g) in cum.iter_mut().zip(self.gamma(t, x)) {
                    *c += g;
                }
                self.base[t].iter().zip(&cum).map(|(b, c)| b + c).collect()
            })
            .collect()
    }

    pub fn schedule(&self, x: &[f64]) -> PriceSchedule {
        PriceSchedule {
            prices: (0..self.horizon)
                .map(|t| (0..self.n).map(|m| x[self.var(t, m)].to_vec()).collect())
                .collect(),
        }
    }

    pub fn flatten(&self, schedule: &PriceSchedule) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for t in 0..self.horizon.min(schedule.prices.len()) {
            for m in 0..self.n {
                let range = self.var(t, m);
                if schedule.prices[t][m].len() == range.len() {
                    x[range].copy_from_slice(&schedule.prices[t][m]);
                }
            }
        }
        x
    }

    /// Box `[0, p_max]` intersected with `aᵀp ≤ 1`. The constraint value
    /// along `clip(y − θa)` is piecewise linear and nonincreasing in θ, so
    /// the multiplier is found by scanning the sorted breakpoints and
    /// interpolating on the bracketing segment.
    fn project_block(p: &mut [f64], a: &[f64], p_max: f64) {
        let clip = |theta: f64, out: &mut [f64], src: &[f64]| {
            for ((o, &y), &ai) in out.iter_mut().zip(src).zip(a) {
                *o = (y - theta * ai).clamp(0.0, p_max);
            }
        };
        let dot_at = |theta: f64, src: &[f64]| {
            src.iter()
                .zip(a)
                .map(|(&y, &ai)| ai * (y - theta * ai).clamp(0.0, p_max))
                .sum::<f64>()
        };
        let y = p.to_vec();
        clip(0.0, p, &y);
        if dot_at(0.0, &y) <= 1.0 {
            return;
        }
        let mut breaks: Vec<f64> = Vec::with_capacity(2 * y.len());
        for (&yi, &ai) in y.iter().zip(a) {
            if ai != 0.0 {
                for b in [yi / ai, (yi - p_max) / ai] {
                    if b > 0.0 {
                        breaks.push(b);
                    }
                }
            }
        }
        breaks.sort_by(f64::total_cmp);
        let (mut lo, mut f_lo) = (0.0, dot_at(0.0, &y));
        for &b in &breaks {
            let f_b = dot_at(b, &y);
            if f_b <= 1.0 {
                let theta = if f_lo > f_b { lo + (b - lo) * (f_lo - 1.0) / (f_lo - f_b) } else { b };
                clip(theta, p, &y);
                return;
            }
            lo = b;
            f_lo = f_b;
        }
        // unreachable when some a_i > 0 and the box contains 0
        clip(lo, p, &y);
    }

    /// Dense quadratic program with the same optimum, for cross-checks on
    /// small instances.
    pub fn to_dense(&self) -> QpInstance<f64> {
        let d = self.dim();
        // deviations are affine: dev = base + J x
        let mut jac = vec![vec![vec![0.0; d]; self.n]; self.horizon];
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            let mut cum = vec![0.0; self.n];
            for (t, jt) in jac.iter_mut().enumerate() {
                for (c, g) in cum.iter_mut().zip(self.gamma(t, &e)) {
                    *c += g;
                }
                for s in 0..self.n {
                    jt[s][i] = cum[s];
                }
            }
        }
        let mut qp = QpInstance::new(d);
        for t in 0..self.horizon {
            for s in 0..self.n {
                let w = self.q[t][s];
                let row = &jac[t][s];
                for i in 0..d {
                    if row[i] == 0.0 {
                        continue;
                    }
                    qp.add_linear(i, 2.0 * w * self.base[t][s] * row[i]);
                    for j in i..d {
                        if row[j] != 0.0 {
                            qp.add_hessian(i, j, 2.0 * w * row[i] * row[j]);
                        }
                    }
                }
            }
        }
        for t in 0..self.horizon {
            for m in 0..self.n {
                let range = self.var(t, m);
                for i in range.clone() {
                    qp.add_hessian(i, i, 2.0 * self.r[t][m]);
                    qp.set_bounds(i, 0.0, self.config.p_max);
                }
                if !range.is_empty() {
                    let coeffs: Vec<(usize, f64)> = range.clone().zip(self.totals[m].iter().copied()).collect();
                    qp.add_inequality(&coeffs, 1.0);
                }
            }
        }
        qp
    }

    /// Constant part of the objective dropped by [`MpcProblem::to_dense`].
    pub fn dense_offset(&self) -> f64 {
        (0..self.horizon)
            .map(|t| (0..self.n).map(|s| self.q[t][s] * self.base[t][s].powi(2)).sum::<f64>())
            .sum()
    }

    /// Largest violation of the box and share constraints.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 0..self.horizon {
            for m in 0..self.n {
                let p = &x[self.var(t, m)];
                for &v in p {
                    worst = worst.max(-v).max(v - self.config.p_max);
                }
                let share: f64 = p.iter().zip(&self.totals[m]).map(|(a, b)| a * b).sum();
                worst = worst.max(share - 1.0);
            }
        }
        worst
    }

    /// Expected payout per minute implied by the first step.
    pub fn expected_payout_rate(&self, x: &[f64]) -> f64 {
        (0..self.n)
            .map(|m| {
                let p = &x[self.var(0, m)];
                let resp = &self.response.stations[m];
                let lam = self.scaled_lambda[0][m] / self.config.step_minutes as f64;
                (0..p.len()).map(|k| lam * resp.share(k, p) * p[k]).sum::<f64>()
            })
            .sum()
    }
}

impl ProjectedProblem<f64> for MpcProblem<'_> {
    fn dim(&self) -> usize {
        self.per_step * self.horizon
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let dev = self.deviations(x);
        let mut total = 0.0;
        for t in 0..self.horizon {
            for s in 0..self.n {
                total += self.q[t][s] * dev[t][s] * dev[t][s];
                total += self.r[t][s] * x[self.var(t, s)].iter().map(|p| p * p).sum::<f64>();
            }
        }
        total
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let dev = self.deviations(x);
        // adjoint: sum of weighted deviations after each step
        let mut acc = vec![0.0; self.n];
        for t in (0..self.horizon).rev() {
            for s in 0..self.n {
                acc[s] += 2.0 * self.q[t][s] * dev[t][s];
            }
            for m in 0..self.n {
                let range = self.var(t, m);
                if range.is_empty() {
                    continue;
                }
                let lam = self.scaled_lambda[t][m];
                let resp = &self.response.stations[m];
                let g = &mut grad[range.clone()];
                for (gi, &pi) in g.iter_mut().zip(&x[range.clone()]) {
                    *gi = 2.0 * self.r[t][m] * pi;
                }
                for (k, &nb) in self.neighbors[m].iter().enumerate() {
                    let w = lam * (acc[nb] - acc[m]);
                    if w != 0.0 {
                        for (gi, c) in g.iter_mut().zip(&resp.coeffs[k]) {
                            *gi += w * c;
                        }
                    }
                }
            }
        }
    }

    fn project(&self, x: &mut [f64]) {
        for t in 0..self.horizon {
            for m in 0..self.n {
                let range = self.var(t, m);
                if !range.is_empty() {
                    Self::project_block(&mut x[range], &self.totals[m], self.config.p_max);
                }
            }
        }
    }
}

/// Result of one controller solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutcome {
    pub schedule: PriceSchedule,
    pub status: QpStatus,
    pub iterations: usize,
    pub residual: f64,
    pub objective: f64,
}

/// Solve the MPC problem, warm-started from `warm` when given.
pub fn solve_mpc(problem: &MpcProblem<'_>, warm: Option<&PriceSchedule>) -> MpcOutcome {
    let settings = QpSettings {
        tol: problem.config.tol,
        max_iter: problem.config.max_iter,
    };
    let x0 = warm.map(|w| problem.flatten(w));
    let sol = qp::solve_projected(problem, x0.as_deref(), &settings);
    MpcOutcome {
        schedule: problem.schedule(&sol.x),
        status: sol.status,
        iterations: sol.iterations,
        residual: natural_residual(problem, &sol.x),
        objective: sol.objective,
    }
}

/// Receding-horizon controller state: the last schedule for warm starts
/// and the last issued prices for fallback.
#[derive(Debug, Clone, Default)]
pub struct PriceController {
    previous: Option<PriceSchedule>,
    pub failures: usize,
}

impl PriceController {
    /// Solve and return the payouts to issue for the next step. On
    /// non-convergence the previously issued payouts are reused.
    pub fn tick(&mut self, problem: &MpcProblem<'_>) -> (Vec<Vec<f64>>, MpcOutcome) {
        let warm = self.previous.as_ref().map(|p| p.shifted());
        let outcome = solve_mpc(problem, warm.as_ref());
        if outcome.status == QpStatus::Solved {
            self.previous = Some(outcome.schedule.clone());
            return (outcome.schedule.first().to_vec(), outcome);
        }
        self.failures += 1;
        log::warn!(
            "price controller did not converge (residual {:.3e}); reusing previous prices",
            outcome.residual
        );
        let issued = match &self.previous {
            Some(prev) => {
                let mut x = problem.flatten(&PriceSchedule {
                    prices: vec![prev.first().to_vec(); problem.horizon],
                });
                problem.project(&mut x);
                problem.schedule(&x).first().to_vec()
            }
            None => PriceSchedule::zeros(1, problem.neighbors).first().to_vec(),
        };
        (issued, outcome)
    }
}

/// Fill forecast under the linear model without saturation, one row per
/// step boundary starting with the current fills.
pub fn predict_open_loop(
    state: &MpcState,
    neighbors: &[Vec<usize>],
    response: &LinearResponse,
    schedule: &PriceSchedule,
    step_minutes: usize,
) -> Vec<Vec<f64>> {
    let l = step_minutes as f64;
    let mut f = state.fills.clone();
    let mut out = vec![f.clone()];
    for (step, prices) in state.steps.iter().zip(&schedule.prices) {
        let gamma = diversion_flows(neighbors, response, prices, &step.lambda, l);
        for s in 0..f.len() {
            f[s] += l * step.eta[s] + step.truck[s] + gamma[s];
        }
        out.push(f.clone());
    }
    out
}

/// Net fill change from diversions over a step of `minutes`.
pub fn diversion_flows(
    neighbors: &[Vec<usize>],
    response: &LinearResponse,
    prices: &[Vec<f64>],
    lambda: &[f64],
    minutes: f64,
) -> Vec<f64> {
    let mut gamma = vec![0.0; neighbors.len()];
    for (m, nb) in neighbors.iter().enumerate() {
        let resp = &response.stations[m];
        for (k, &n) in nb.iter().enumerate() {
            let share = minutes * lambda[m] * resp.share(k, &prices[m]);
            gamma[n] += share;
            gamma[m] -= share;
        }
    }
    gamma
}
