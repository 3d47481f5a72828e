//! Convex quadratic programming.
//!
//! Two solvers share the residual-based contract used by the controllers:
//!
//! * [`solve`] handles a dense [`QpInstance`] with a Mehrotra
//!   predictor-corrector interior point method. It accepts positive
//!   semidefinite quadratic forms (linear objectives included) and reports
//!   explicit KKT residuals.
//! * [`solve_projected`] runs accelerated projected gradient on any problem
//!   whose feasible set has a cheap Euclidean projection. The price
//!   controller uses it because its Hessian is only available as an operator.

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

/// `minimize ½ xᵀHx + gᵀx  s.t.  A x ≤ b,  lb ≤ x ≤ ub`.
///
/// Matrices are dense and row-major. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance<T> {
    n: usize,
    h: Vec<T>,
    g: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    lb: Vec<T>,
    ub: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Float + FromPrimitive> Default for QpSettings<T> {
    fn default() -> Self {
        QpSettings {
            tol: T::from_f64(1e-6).unwrap(),
            max_iter: 200,
        }
    }
}

/// Residuals of the KKT system at a primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals<T> {
    /// Largest constraint violation.
    pub primal: T,
    /// `‖Hx + g + Cᵀz‖∞` over all inequality rows `C`.
    pub stationarity: T,
    /// `max |zᵢ (dᵢ − Cᵢx)|`.
    pub complementarity: T,
}

impl<T: Float> KktResiduals<T> {
    pub fn zero() -> Self {
        KktResiduals {
            primal: T::zero(),
            stationarity: T::zero(),
            complementarity: T::zero(),
        }
    }

    pub fn max(&self) -> T {
        self.primal.max(self.stationarity).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    /// Multipliers for the rows of `A`, then finite upper bounds, then
    /// finite lower bounds, in variable order.
    pub multipliers: Vec<T>,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals<T>,
    pub objective: T,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
}

impl<T: Float + FromPrimitive> QpInstance<T> {
    /// New instance with `n` variables, zero objective and no constraints.
    pub fn new(n: usize) -> Self {
        QpInstance {
            n,
            h: vec![T::zero(); n * n],
            g: vec![T::zero(); n],
            a: Vec::new(),
            b: Vec::new(),
            lb: vec![T::neg_infinity(); n],
            ub: vec![T::infinity(); n],
        }
    }

    /// Instance from raw parts. `h` is symmetrized.
    pub fn from_parts(
        h: Vec<T>,
        g: Vec<T>,
        a: Vec<T>,
        b: Vec<T>,
        lb: Vec<T>,
        ub: Vec<T>,
    ) -> Result<Self, QpError> {
        let n = g.len();
        if h.len() != n * n {
            return Err(QpError::Dimension("H must be n×n"));
        }
        if lb.len() != n || ub.len() != n {
            return Err(QpError::Dimension("bounds must have length n"));
        }
        if n == 0 && !a.is_empty() || n > 0 && a.len() != b.len() * n {
            return Err(QpError::Dimension("A must be m×n with m = len(b)"));
        }
        let mut qp = QpInstance {
            n,
            h,
            g,
            a,
            b,
            lb,
            ub,
        };
        qp.symmetrize();
        Ok(qp)
    }

    fn symmetrize(&mut self) {
        let n = self.n;
        let half = T::from_f64(0.5).unwrap();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = (self.h[i * n + j] + self.h[j * n + i]) * half;
                self.h[i * n + j] = v;
                self.h[j * n + i] = v;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn constraint_count(&self) -> usize {
        self.b.len()
    }

    /// Add `v` to `H[i][j]` and `H[j][i]` (once when `i == j`).
    pub fn add_hessian(&mut self, i: usize, j: usize, v: T) {
        let n = self.n;
        self.h[i * n + j] = self.h[i * n + j] + v;
        if i != j {
            self.h[j * n + i] = self.h[j * n + i] + v;
        }
    }

    pub fn add_linear(&mut self, i: usize, v: T) {
        self.g[i] = self.g[i] + v;
    }

    /// Append the row `coeffs · x ≤ rhs` given as sparse `(index, coeff)`.
    pub fn add_inequality(&mut self, coeffs: &[(usize, T)], rhs: T) {
        let mut row = vec![T::zero(); self.n];
        for &(j, c) in coeffs {
            row[j] = row[j] + c;
        }
        self.a.extend(row);
        self.b.push(rhs);
    }

    pub fn set_bounds(&mut self, i: usize, lb: T, ub: T) {
        self.lb[i] = lb;
        self.ub[i] = ub;
    }

    pub fn hessian(&self) -> &[T] {
        &self.h
    }

    pub fn linear(&self) -> &[T] {
        &self.g
    }

    pub fn lower_bounds(&self) -> &[T] {
        &self.lb
    }

    pub fn upper_bounds(&self) -> &[T] {
        &self.ub
    }

    pub fn objective(&self, x: &[T]) -> T {
        let n = self.n;
        let half = T::from_f64(0.5).unwrap();
        let mut acc = T::zero();
        for i in 0..n {
            let hx = dot(&self.h[i * n..(i + 1) * n], x);
            acc = acc + x[i] * (half * hx + self.g[i]);
        }
        acc
    }

    /// Largest violation of any constraint at `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        let rows = self.stacked();
        let mut worst = T::zero();
        for (row, d) in rows.rows() {
            worst = worst.max(dot(row, x) - d);
        }
        worst
    }

    /// All inequalities stacked as `C x ≤ d`: rows of `A`, finite upper
    /// bounds, finite lower bounds.
    fn stacked(&self) -> Stacked<T> {
        let n = self.n;
        let mut c = self.a.clone();
        let mut d = self.b.clone();
        for i in 0..n {
            if self.ub[i].is_finite() {
                let mut row = vec![T::zero(); n];
                row[i] = T::one();
                c.extend(row);
                d.push(self.ub[i]);
            }
        }
        for i in 0..n {
            if self.lb[i].is_finite() {
                let mut row = vec![T::zero(); n];
                row[i] = -T::one();
                c.extend(row);
                d.push(-self.lb[i]);
            }
        }
        Stacked { n, c, d }
    }

    /// KKT residuals of `(x, z)` with `z` ordered as in
    /// [`QpSolution::multipliers`].
    pub fn kkt_residuals(&self, x: &[T], z: &[T]) -> KktResiduals<T> {
        let st = self.stacked();
        kkt(&self.h, &self.g, &st, x, z)
    }
}

struct Stacked<T> {
    n: usize,
    c: Vec<T>,
    d: Vec<T>,
}

impl<T: Float> Stacked<T> {
    fn m(&self) -> usize {
        self.d.len()
    }

    fn rows(&self) -> impl Iterator<Item = (&[T], T)> + '_ {
        self.c
            .chunks(self.n.max(1))
            .zip(self.d.iter().copied())
            .take(self.d.len())
    }

    fn mul(&self, x: &[T], out: &mut [T]) {
        for (o, (row, _)) in out.iter_mut().zip(self.rows()) {
            *o = dot(row, x);
        }
    }

    fn mul_t(&self, y: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for ((row, _), &yi) in self.rows().zip(y) {
            if yi != T::zero() {
                axpy(yi, row, out);
            }
        }
    }
}

fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axpy<T: Float>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn norm_inf<T: Float>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

fn sym_mul<T: Float>(h: &[T], n: usize, x: &[T], out: &mut [T]) {
    for i in 0..n {
        out[i] = dot(&h[i * n..(i + 1) * n], x);
    }
}

fn kkt<T: Float>(h: &[T], g: &[T], st: &Stacked<T>, x: &[T], z: &[T]) -> KktResiduals<T> {
    let n = st.n;
    let mut grad = vec![T::zero(); n];
    sym_mul(h, n, x, &mut grad);
    for (gi, &g0) in grad.iter_mut().zip(g) {
        *gi = *gi + g0;
    }
    let mut ctz = vec![T::zero(); n];
    st.mul_t(z, &mut ctz);
    for (gi, c) in grad.iter_mut().zip(&ctz) {
        *gi = *gi + *c;
    }
    let mut primal = T::zero();
    let mut comp = T::zero();
    for ((row, d), &zi) in st.rows().zip(z) {
        let slack = d - dot(row, x);
        primal = primal.max(-slack);
        comp = comp.max((zi * slack).abs());
    }
    KktResiduals {
        primal,
        stationarity: norm_inf(&grad),
        complementarity: comp,
    }
}

/// In-place Cholesky factorization of an SPD matrix (lower triangle).
/// Returns false when a pivot is not positive.
fn cholesky<T: Float>(m: &mut [T], n: usize) -> bool {
    for j in 0..n {
        let mut diag = m[j * n + j];
        for k in 0..j {
            diag = diag - m[j * n + k] * m[j * n + k];
        }
        if !(diag > T::zero()) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        m[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut v = m[i * n + j];
            for k in 0..j {
                v = v - m[i * n + k] * m[j * n + k];
            }
            m[i * n + j] = v / ljj;
        }
    }
    true
}

fn cholesky_solve<T: Float>(l: &[T], n: usize, rhs: &mut [T]) {
    for i in 0..n {
        let mut v = rhs[i];
        for k in 0..i {
            v = v - l[i * n + k] * rhs[k];
        }
        rhs[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in (i + 1)..n {
            v = v - l[k * n + i] * rhs[k];
        }
        rhs[i] = v / l[i * n + i];
    }
}

/// Factor `m + δI` for the smallest tried `δ` that succeeds.
fn factor_regularized<T: Float + FromPrimitive>(m: &[T], n: usize) -> Option<Vec<T>> {
    let scale = (0..n).fold(T::one(), |acc, i| acc.max(m[i * n + i].abs()));
    let mut delta = T::zero();
    for _ in 0..12 {
        let mut work = m.to_vec();
        for i in 0..n {
            work[i * n + i] = work[i * n + i] + delta;
        }
        if cholesky(&mut work, n) {
            return Some(work);
        }
        delta = if delta == T::zero() {
            scale * T::from_f64(1e-14).unwrap()
        } else {
            delta * T::from_f64(100.0).unwrap()
        };
    }
    None
}

/// Solve a dense convex QP with a primal-dual interior point method.
///
/// The returned point satisfies all residuals ≤ `settings.tol` when the
/// status is [`QpStatus::Solved`]. Identical inputs give identical output.
pub fn solve<T: Float + FromPrimitive>(qp: &QpInstance<T>, settings: &QpSettings<T>) -> QpSolution<T> {
    let n = qp.n;
    let st = qp.stacked();
    let m = st.m();
    let c = |v: f64| T::from_f64(v).unwrap();

    for i in 0..n {
        if qp.lb[i] > qp.ub[i] {
            return QpSolution {
                x: vec![T::zero(); n],
                multipliers: vec![T::zero(); m],
                status: QpStatus::Infeasible,
                iterations: 0,
                residuals: KktResiduals::zero(),
                objective: T::nan(),
            };
        }
    }

    let mut x: Vec<T> = (0..n)
        .map(|i| {
            let (lo, hi) = (qp.lb[i], qp.ub[i]);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => (lo + hi) * c(0.5),
                (true, false) => lo + T::one(),
                (false, true) => hi - T::one(),
                (false, false) => T::zero(),
            }
        })
        .collect();
    let mut cx = vec![T::zero(); m];
    st.mul(&x, &mut cx);
    let mut s: Vec<T> = (0..m).map(|i| (st.d[i] - cx[i]).max(T::one())).collect();
    let mut z = vec![T::one(); m];

    // stop a bit inside the requested tolerance so the recomputed residuals
    // on the returned point stay below it
    let inner = settings.tol * c(0.1);
    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    let mut hx = vec![T::zero(); n];
    let mut rd = vec![T::zero(); n];
    let mut rp = vec![T::zero(); m];
    let mut tmp_n = vec![T::zero(); n];
    let mut tmp_m = vec![T::zero(); m];

    for it in 0..settings.max_iter {
        iterations = it;
        sym_mul(&qp.h, n, &x, &mut hx);
        st.mul_t(&z, &mut tmp_n);
        for i in 0..n {
            rd[i] = hx[i] + qp.g[i] + tmp_n[i];
        }
        st.mul(&x, &mut cx);
        for i in 0..m {
            rp[i] = cx[i] + s[i] - st.d[i];
        }
        let mu = if m > 0 {
            dot(&s, &z) / T::from_usize(m).unwrap()
        } else {
            T::zero()
        };
        let res = kkt(&qp.h, &qp.g, &st, &x, &z);
        if res.primal <= inner && res.stationarity <= inner && res.complementarity <= inner {
            status = QpStatus::Solved;
            break;
        }
        if norm_inf(&z) > c(1e13) && norm_inf(&rp) > inner {
            status = QpStatus::Infeasible;
            break;
        }

        // normal matrix H + Cᵀ W C
        let w: Vec<T> = (0..m).map(|i| z[i] / s[i]).collect();
        let mut normal = qp.h.clone();
        for ((row, _), &wi) in st.rows().zip(&w) {
            for (a, &ra) in row.iter().enumerate() {
                if ra == T::zero() {
                    continue;
                }
                let f = wi * ra;
                for (b, &rb) in row.iter().enumerate() {
                    if rb != T::zero() {
                        normal[a * n + b] = normal[a * n + b] + f * rb;
                    }
                }
            }
        }
        let Some(l) = factor_regularized(&normal, n) else {
            break;
        };

        // direction for complementarity target r_c
        let direction = |rc: &[T], dx: &mut Vec<T>, dz: &mut Vec<T>, ds: &mut Vec<T>, tmp_m: &mut Vec<T>, tmp_n: &mut Vec<T>| {
            for i in 0..m {
                tmp_m[i] = w[i] * rp[i] - rc[i] / s[i];
            }
            st.mul_t(tmp_m, tmp_n);
            for i in 0..n {
                dx[i] = -rd[i] - tmp_n[i];
            }
            cholesky_solve(&l, n, dx);
            st.mul(dx, tmp_m);
            for i in 0..m {
                dz[i] = w[i] * (tmp_m[i] + rp[i]) - rc[i] / s[i];
                ds[i] = -rp[i] - tmp_m[i];
            }
        };
        let step_to_boundary = |v: &[T], dv: &[T]| {
            let mut alpha = T::one();
            for (&vi, &di) in v.iter().zip(dv) {
                if di < T::zero() {
                    alpha = alpha.min(-vi / di);
                }
            }
            alpha
        };

        let mut dx = vec![T::zero(); n];
        let mut dz = vec![T::zero(); m];
        let mut ds = vec![T::zero(); m];
        let rc_aff: Vec<T> = (0..m).map(|i| s[i] * z[i]).collect();
        direction(&rc_aff, &mut dx, &mut dz, &mut ds, &mut tmp_m, &mut tmp_n);
        let alpha_aff = step_to_boundary(&s, &ds).min(step_to_boundary(&z, &dz));
        let mu_aff = if m > 0 {
            (0..m)
                .map(|i| (s[i] + alpha_aff * ds[i]) * (z[i] + alpha_aff * dz[i]))
                .fold(T::zero(), |a, b| a + b)
                / T::from_usize(m).unwrap()
        } else {
            T::zero()
        };
        let sigma = if mu > T::zero() {
            (mu_aff / mu).powi(3).min(T::one())
        } else {
            T::zero()
        };
        let rc: Vec<T> = (0..m)
            .map(|i| s[i] * z[i] + ds[i] * dz[i] - sigma * mu)
            .collect();
        direction(&rc, &mut dx, &mut dz, &mut ds, &mut tmp_m, &mut tmp_n);
        let alpha = (c(0.995) * step_to_boundary(&s, &ds).min(step_to_boundary(&z, &dz))).min(T::one());
        for i in 0..n {
            x[i] = x[i] + alpha * dx[i];
        }
        for i in 0..m {
            s[i] = (s[i] + alpha * ds[i]).max(T::min_positive_value());
            z[i] = (z[i] + alpha * dz[i]).max(T::min_positive_value());
        }
        iterations = it + 1;
    }

    let residuals = kkt(&qp.h, &qp.g, &st, &x, &z);
    if status == QpStatus::MaxIter && residuals.max() <= settings.tol {
        status = QpStatus::Solved;
    }
    debug_assert!(
        status != QpStatus::Solved
            || residuals.primal <= settings.tol
                && residuals.stationarity <= settings.tol
                && residuals.complementarity <= c(10.0) * settings.tol,
        "solved QP outside KKT tolerance"
    );
    QpSolution {
        objective: qp.objective(&x),
        x,
        multipliers: z,
        status,
        iterations,
        residuals,
    }
}

/// Smooth convex objective over a set with an exact Euclidean projection.
pub trait ProjectedProblem<T> {
    fn dim(&self) -> usize;
    fn objective(&self, x: &[T]) -> T;
    fn gradient(&self, x: &[T], grad: &mut [T]);
    /// Replace `x` by its projection onto the feasible set.
    fn project(&self, x: &mut [T]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSolution<T> {
    pub x: Vec<T>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Natural residual `‖x − P(x − ∇f(x))‖∞`; zero exactly at KKT points.
    pub residual: T,
    pub objective: T,
}

/// Natural (projected-gradient) residual of `problem` at `x`.
pub fn natural_residual<T: Float, P: ProjectedProblem<T> + ?Sized>(problem: &P, x: &[T]) -> T {
    let mut grad = vec![T::zero(); x.len()];
    problem.gradient(x, &mut grad);
    let mut y: Vec<T> = x.iter().zip(&grad).map(|(&a, &g)| a - g).collect();
    problem.project(&mut y);
    x.iter()
        .zip(&y)
        .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
}

/// Accelerated projected gradient (FISTA) with backtracking and adaptive
/// restart. `x0` is projected before use.
///
/// The objective must be quadratic: the gradient at an extrapolated point
/// is formed from the gradients of the two iterates it combines, and the
/// step test compares curvature along the step with the Lipschitz guess.
pub fn solve_projected<T, P>(problem: &P, x0: Option<&[T]>, settings: &QpSettings<T>) -> ProjectedSolution<T>
where
    T: Float + FromPrimitive,
    P: ProjectedProblem<T> + ?Sized,
{
    let n = problem.dim();
    let c = |v: f64| T::from_f64(v).unwrap();
    let mut x: Vec<T> = match x0 {
        Some(v) => v.to_vec(),
        None => vec![T::zero(); n],
    };
    problem.project(&mut x);

    let mut lipschitz = estimate_lipschitz(problem, n).max(c(1e-12));
    let mut gx = vec![T::zero(); n];
    problem.gradient(&x, &mut gx);
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut x_prev = x.clone();
    let mut gx_prev = gx.clone();
    let mut t = T::one();
    let mut trial = vec![T::zero(); n];
    let mut gt = vec![T::zero(); n];
    let mut probe = vec![T::zero(); n];
    let mut status = QpStatus::MaxIter;
    let mut iterations = settings.max_iter;
    let check_every = 10;

    for it in 0..settings.max_iter {
        if it % check_every == 0 {
            for i in 0..n {
                probe[i] = x[i] - gx[i];
            }
            problem.project(&mut probe);
            let r = x.iter().zip(&probe).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
            if r <= settings.tol {
                status = QpStatus::Solved;
                iterations = it;
                break;
            }
        }
        loop {
            for i in 0..n {
                trial[i] = y[i] - gy[i] / lipschitz;
            }
            problem.project(&mut trial);
            problem.gradient(&trial, &mut gt);
            let mut curv = T::zero();
            let mut sq = T::zero();
            for i in 0..n {
                let d = trial[i] - y[i];
                curv = curv + (gt[i] - gy[i]) * d;
                sq = sq + d * d;
            }
            if curv <= lipschitz * sq * c(1.0 + 1e-9) || lipschitz > c(1e30) {
                break;
            }
            lipschitz = lipschitz * c(2.0);
        }
        std::mem::swap(&mut x_prev, &mut x);
        std::mem::swap(&mut gx_prev, &mut gx);
        x.copy_from_slice(&trial);
        gx.copy_from_slice(&gt);

        // restart when the momentum direction opposes descent
        let mut restart_test = T::zero();
        for i in 0..n {
            restart_test = restart_test + (y[i] - x[i]) * (x[i] - x_prev[i]);
        }
        if restart_test > T::zero() {
            t = T::one();
            y.copy_from_slice(&x);
            gy.copy_from_slice(&gx);
            continue;
        }
        let t_next = (T::one() + (T::one() + c(4.0) * t * t).sqrt()) * c(0.5);
        let beta = (t - T::one()) / t_next;
        for i in 0..n {
            y[i] = x[i] + beta * (x[i] - x_prev[i]);
            gy[i] = gx[i] + beta * (gx[i] - gx_prev[i]);
        }
        t = t_next;
    }

    let residual = natural_residual(problem, &x);
    if status == QpStatus::MaxIter && residual <= settings.tol {
        status = QpStatus::Solved;
    }
    ProjectedSolution {
        objective: problem.objective(&x),
        x,
        status,
        iterations,
        residual,
    }
}

/// Power iteration on gradient differences, which equal `H v` for a
/// quadratic objective.
fn estimate_lipschitz<T, P>(problem: &P, n: usize) -> T
where
    T: Float + FromPrimitive,
    P: ProjectedProblem<T> + ?Sized,
{
    if n == 0 {
        return T::one();
    }
    let zero = vec![T::zero(); n];
    let mut g0 = vec![T::zero(); n];
    problem.gradient(&zero, &mut g0);
    // deterministic, non-degenerate start vector
    let mut v: Vec<T> = (0..n)
        .map(|i| T::one() + T::from_usize(i % 7).unwrap() * T::from_f64(0.1).unwrap())
        .collect();
    let mut gv = vec![T::zero(); n];
    let mut est = T::zero();
    for _ in 0..30 {
        let norm = v.iter().fold(T::zero(), |a, &b| a + b * b).sqrt();
        if norm == T::zero() {
            break;
        }
        v.iter_mut().for_each(|x| *x = *x / norm);
        problem.gradient(&v, &mut gv);
        for i in 0..n {
            gv[i] = gv[i] - g0[i];
        }
        est = gv.iter().fold(T::zero(), |a, &b| a + b * b).sqrt();
        std::mem::swap(&mut v, &mut gv);
    }
    est * T::from_f64(1.05).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> QpSettings<f64> {
        QpSettings::default()
    }

    #[test]
    fn scalar_lower_bound() {
        let mut qp = QpInstance::new(1);
        qp.add_hessian(0, 0, 2.0);
        qp.set_bounds(0, 1.0, f64::INFINITY);
        let sol = solve(&qp, &settings());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!(sol.residuals.max() <= 1e-6);
    }

    #[test]
    fn clamped_unconstrained_optimum() {
        // (x-3)² + (y+1)² = x² + y² - 6x + 2y + 10
        let mut qp = QpInstance::new(2);
        qp.add_hessian(0, 0, 2.0);
        qp.add_hessian(1, 1, 2.0);
        qp.add_linear(0, -6.0);
        qp.add_linear(1, 2.0);
        qp.set_bounds(0, 0.0, 2.0);
        qp.set_bounds(1, 0.0, 2.0);
        let sol = solve(&qp, &settings());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 2.0).abs() < 1e-6 && sol.x[1].abs() < 1e-6, "{:?}", sol.x);
    }

    #[test]
    fn linear_program_part() {
        // min x s.t. x ≥ -2 via an A-row, plus y with zero curvature boxed
        let mut qp = QpInstance::new(2);
        qp.add_linear(0, 1.0);
        qp.add_linear(1, -1.0);
        qp.add_inequality(&[(0, -1.0)], 2.0);
        qp.set_bounds(1, -1.0, 3.0);
        let sol = solve(&qp, &settings());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] + 2.0).abs() < 1e-6);
        assert!((sol.x[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn detects_infeasible_rows() {
        let mut qp = QpInstance::new(1);
        qp.add_hessian(0, 0, 1.0);
        qp.add_inequality(&[(0, 1.0)], 0.0);
        qp.add_inequality(&[(0, -1.0)], -1.0);
        let sol = solve(&qp, &settings());
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut qp = QpInstance::<f64>::new(1);
        qp.set_bounds(0, 1.0, 0.0);
        assert_eq!(solve(&qp, &settings()).status, QpStatus::Infeasible);
    }

    #[test]
    fn from_parts_checks_shapes() {
        assert!(QpInstance::<f64>::from_parts(vec![1.0], vec![0.0, 0.0], vec![], vec![], vec![0.0; 2], vec![1.0; 2]).is_err());
        let qp = QpInstance::from_parts(vec![1.0, 2.0, 0.0, 1.0], vec![0.0; 2], vec![], vec![], vec![-1.0; 2], vec![1.0; 2]).unwrap();
        assert_eq!(qp.hessian(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn single_precision_solve() {
        let mut qp = QpInstance::<f32>::new(1);
        qp.add_hessian(0, 0, 2.0);
        qp.add_linear(0, -8.0);
        qp.set_bounds(0, 0.0, 3.0);
        let sol = solve(&qp, &QpSettings { tol: 1e-4, max_iter: 100 });
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 3.0).abs() < 1e-3);
    }

    struct BoxQuadratic {
        center: Vec<f64>,
        weight: Vec<f64>,
        hi: f64,
    }

    impl ProjectedProblem<f64> for BoxQuadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x.iter()
                .zip(&self.center)
                .zip(&self.weight)
                .map(|((x, c), w)| 0.5 * w * (x - c) * (x - c))
                .sum()
        }
        fn gradient(&self, x: &[f64], grad: &mut [f64]) {
            for i in 0..x.len() {
                grad[i] = self.weight[i] * (x[i] - self.center[i]);
            }
        }
        fn project(&self, x: &mut [f64]) {
            x.iter_mut().for_each(|v| *v = v.clamp(0.0, self.hi));
        }
    }

    #[test]
    fn projected_gradient_on_box() {
        let p = BoxQuadratic {
            center: vec![-1.0, 0.5, 4.0],
            weight: vec![1.0, 100.0, 0.01],
            hi: 2.0,
        };
        let sol = solve_projected(&p, None, &QpSettings { tol: 1e-9, max_iter: 10_000 });
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0]).abs() < 1e-8);
        assert!((sol.x[1] - 0.5).abs() < 1e-8);
        assert!((sol.x[2] - 2.0).abs() < 1e-8);
        assert!(sol.residual <= 1e-9);
    }
}
