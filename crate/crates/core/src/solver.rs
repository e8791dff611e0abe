//! Solvers for the l1/l2-penalized multi-task least-squares problem.
//!
//! Two independent methods are provided: cyclic block coordinate descent
//! (the workhorse) and proximal gradient (kept as a cross-check). Both stop
//! on the KKT residual, not on iterate change.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, CoefficientMatrix, GroundTruth, MvmrProblem, Role};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Bcd,
    #[serde(alias = "pg")]
    ProximalGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `1/L` with `L = max_k λ_max((1/n)X⁽ᵏ⁾ᵀX⁽ᵏ⁾)`.
    #[default]
    Lipschitz,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    /// Rows `0..p` in order.
    #[default]
    Cyclic,
    /// A fresh permutation every sweep, drawn from `seed`.
    Shuffled { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub method: Method,
    pub step_rule: StepRule,
    pub order: SweepOrder,
    /// Record the objective after every sweep / iteration.
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iters: 10_000,
            method: Method::Bcd,
            step_rule: StepRule::Lipschitz,
            order: SweepOrder::Cyclic,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if let StepRule::Fixed(step) = self.step_rule {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::Config(format!("fixed step must be positive, got {step}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub estimate: CoefficientMatrix,
    pub iterations: usize,
    pub final_kkt_residual: f64,
    pub objective_value: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

/// Proximal operator of `threshold·‖·‖₂` on one row.
pub fn block_soft_threshold(v: &[f64], threshold: f64) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= threshold {
        return vec![0.0; v.len()];
    }
    let factor = 1.0 - threshold / norm;
    v.iter().map(|x| factor * x).collect()
}

/// Solves `min_u Σ_k (½ d_k u_k² − c_k u_k) + λ‖u‖₂` into `out`.
///
/// The minimizer is `u_k = c_k t/(d_k t + λ)` where `t = ‖u‖₂ > 0` is the
/// root of `F(t) = Σ_k c_k²/(d_k t + λ)² − 1`; `u = 0` iff `‖c‖₂ ≤ λ`.
/// `F` is convex and decreasing, so Newton from `t = 0` increases
/// monotonically to the root; bisection guards against round-off.
pub fn solve_row_subproblem(c: &[f64], d: &[f64], lambda: f64, out: &mut [f64]) {
    let c_norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if c_norm <= lambda {
        out.iter_mut().for_each(|u| *u = 0.0);
        return;
    }
    let d_first = d[0];
    let t = if d.iter().all(|&dk| dk == d_first) {
        (c_norm - lambda) / d_first
    } else {
        row_norm_root(c, d, lambda, c_norm)
    };
    for ((u, &ck), &dk) in out.iter_mut().zip(c).zip(d) {
        *u = ck * t / (dk * t + lambda);
    }
}

fn row_norm_root(c: &[f64], d: &[f64], lambda: f64, c_norm: f64) -> f64 {
    let f = |t: f64| -> (f64, f64) {
        let mut value = -1.0;
        let mut slope = 0.0;
        for (&ck, &dk) in c.iter().zip(d) {
            let denom = dk * t + lambda;
            let q = ck * ck / (denom * denom);
            value += q;
            slope -= 2.0 * q * dk / denom;
        }
        (value, slope)
    };
    // Only tasks with c_k ≠ 0 matter; those have d_k > 0 since c_k = X_jᵀr/n.
    let d_min = c.iter().zip(d).filter(|(ck, _)| **ck != 0.0).map(|(_, &dk)| dk).fold(f64::INFINITY, f64::min);
    let mut lo = 0.0_f64;
    let mut hi = c_norm / d_min;
    let mut t = 0.0;
    for _ in 0..200 {
        let (value, slope) = f(t);
        if value > 0.0 {
            lo = lo.max(t);
        } else {
            hi = hi.min(t);
        }
        if value.abs() <= 1e-15 || hi - lo <= 1e-12 * hi {
            break;
        }
        let mut next = if slope < 0.0 { t - value / slope } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-13 * next.max(1e-300) {
            t = next;
            break;
        }
        t = next;
    }
    t
}

/// Sufficient statistics `(1/n)XᵀX`, `(1/n)XᵀY`, `(1/n)YᵀY` per task.
struct Gram {
    gram: Vec<DMatrix<f64>>,
    xty: Vec<DVector<f64>>,
    yty: Vec<f64>,
}

impl Gram {
    fn new(problem: &MvmrProblem) -> Self {
        let n = problem.samples() as f64;
        let mut gram = Vec::with_capacity(problem.num_tasks());
        let mut xty = Vec::with_capacity(problem.num_tasks());
        let mut yty = Vec::with_capacity(problem.num_tasks());
        for k in 0..problem.num_tasks() {
            let x = problem.design(k);
            let y = problem.response(k);
            gram.push(x.tr_mul(x) / n);
            xty.push(x.tr_mul(y) / n);
            yty.push(y.norm_squared() / n);
        }
        Gram { gram, xty, yty }
    }

    /// Negative loss gradient `(1/n)Xᵀ(Y − XB)` as a `p × K` matrix.
    fn neg_gradient(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(b.nrows(), b.ncols());
        for k in 0..b.ncols() {
            let col = &self.xty[k] - &self.gram[k] * b.column(k);
            h.set_column(k, &col);
        }
        h
    }

    /// Objective from the maintained negative gradient `h`.
    fn objective(&self, b: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64) -> f64 {
        let mut loss = 0.0;
        for k in 0..b.ncols() {
            let bk = b.column(k);
            // βᵀGβ = βᵀ(Xᵀy/n − h)
            loss += self.yty[k] - 2.0 * bk.dot(&self.xty[k]) + bk.dot(&(&self.xty[k] - h.column(k)));
        }
        0.5 * loss + lambda * b.row_iter().map(|r| r.norm()).sum::<f64>()
    }
}

/// Solves from `B = 0`.
pub fn solve(problem: &MvmrProblem, lambda: f64, config: &SolverConfig) -> Result<SolveReport> {
    solve_from(problem, lambda, config, None)
}

/// Solves starting from `init` (zero when `None`).
pub fn solve_from(
    problem: &MvmrProblem,
    lambda: f64,
    config: &SolverConfig,
    init: Option<&CoefficientMatrix>,
) -> Result<SolveReport> {
    config.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive and finite, got {lambda}")));
    }
    if !problem.is_finite() {
        return Err(Error::Data("problem data contains NaN or infinite values".into()));
    }
    let (p, k) = (problem.dim(), problem.num_tasks());
    let b0 = match init {
        Some(m) if m.dim() != p || m.num_tasks() != k => {
            return Err(Error::Dimension("initial coefficients have the wrong shape".into()));
        }
        Some(m) => m.entries().clone(),
        None => DMatrix::zeros(p, k),
    };
    let gram = Gram::new(problem);
    let (b, iterations, trace) = match config.method {
        Method::Bcd => block_coordinate_descent(&gram, b0, lambda, config, problem),
        Method::ProximalGradient => proximal_gradient(&gram, b0, lambda, config, problem),
    };
    let estimate = CoefficientMatrix::new(b, Role::Estimate);
    let final_kkt_residual = model::kkt_residual(problem, &estimate, lambda)?;
    let objective_value = model::objective(problem, &estimate, lambda)?;
    Ok(SolveReport {
        converged: final_kkt_residual <= config.tol,
        estimate,
        iterations,
        final_kkt_residual,
        objective_value,
        objective_trace: trace,
    })
}

/// Optimality check against the raw data, used to confirm the Gram-based one.
fn certified(problem: &MvmrProblem, b: &DMatrix<f64>, lambda: f64, tol: f64) -> bool {
    let m = CoefficientMatrix::new(b.clone(), Role::Estimate);
    model::kkt_residual(problem, &m, lambda).is_ok_and(|r| r <= tol)
}

fn block_coordinate_descent(
    gram: &Gram,
    mut b: DMatrix<f64>,
    lambda: f64,
    config: &SolverConfig,
    problem: &MvmrProblem,
) -> (DMatrix<f64>, usize, Vec<f64>) {
    let (p, k) = b.shape();
    let mut h = gram.neg_gradient(&b);
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(gram.objective(&b, &h, lambda));
    }
    if model::kkt_residual_from_gradient(&(-&h), &b, lambda) <= config.tol && certified(problem, &b, lambda, config.tol)
    {
        return (b, 0, trace);
    }
    let mut order: Vec<usize> = (0..p).collect();
    let mut shuffler = match config.order {
        SweepOrder::Shuffled { seed } => Some(rng_from_seed(seed)),
        SweepOrder::Cyclic => None,
    };
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    let mut u = vec![0.0; k];
    for sweep in 1..=config.max_iters {
        if let Some(rng) = shuffler.as_mut() {
            order.shuffle(rng);
        }
        for &j in &order {
            let mut row_active = false;
            for t in 0..k {
                d[t] = gram.gram[t][(j, j)];
                c[t] = h[(j, t)] + d[t] * b[(j, t)];
                row_active |= b[(j, t)] != 0.0;
            }
            solve_row_subproblem(&c, &d, lambda, &mut u);
            if !row_active && u.iter().all(|&x| x == 0.0) {
                continue;
            }
            for t in 0..k {
                let delta = u[t] - b[(j, t)];
                if delta != 0.0 {
                    b[(j, t)] = u[t];
                    let col = gram.gram[t].column(j);
                    let mut h_col = h.column_mut(t);
                    h_col.axpy(-delta, &col, 1.0);
                }
            }
        }
        if config.record_trace {
            trace.push(gram.objective(&b, &h, lambda));
        }
        if model::kkt_residual_from_gradient(&(-&h), &b, lambda) <= config.tol {
            // Refresh the incrementally updated gradient before trusting it.
            h = gram.neg_gradient(&b);
            if model::kkt_residual_from_gradient(&(-&h), &b, lambda) <= config.tol
                && certified(problem, &b, lambda, config.tol)
            {
                return (b, sweep, trace);
            }
        }
    }
    (b, config.max_iters, trace)
}

fn proximal_gradient(
    gram: &Gram,
    mut b: DMatrix<f64>,
    lambda: f64,
    config: &SolverConfig,
    problem: &MvmrProblem,
) -> (DMatrix<f64>, usize, Vec<f64>) {
    let (p, k) = b.shape();
    let step = match config.step_rule {
        StepRule::Fixed(s) => s,
        StepRule::Lipschitz => {
            let lip = gram.gram.iter().map(|g| linalg::eigen_extremes(g).1).fold(0.0, f64::max);
            if lip > 0.0 {
                1.0 / lip
            } else {
                1.0
            }
        }
    };
    let mut h = gram.neg_gradient(&b);
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(gram.objective(&b, &h, lambda));
    }
    if model::kkt_residual_from_gradient(&(-&h), &b, lambda) <= config.tol && certified(problem, &b, lambda, config.tol)
    {
        return (b, 0, trace);
    }
    let mut row = vec![0.0; k];
    for iter in 1..=config.max_iters {
        for j in 0..p {
            for t in 0..k {
                row[t] = b[(j, t)] + step * h[(j, t)];
            }
            let shrunk = block_soft_threshold(&row, lambda * step);
            for t in 0..k {
                b[(j, t)] = shrunk[t];
            }
        }
        h = gram.neg_gradient(&b);
        if config.record_trace {
            trace.push(gram.objective(&b, &h, lambda));
        }
        if model::kkt_residual_from_gradient(&(-&h), &b, lambda) <= config.tol
            && certified(problem, &b, lambda, config.tol)
        {
            return (b, iter, trace);
        }
    }
    (b, config.max_iters, trace)
}

/// Solves the problem with all rows outside `support` pinned to zero and
/// embeds the result back into a `p × K` matrix.
///
/// The reported KKT residual and objective refer to the restricted problem.
pub fn solve_restricted(
    problem: &MvmrProblem,
    support: &[usize],
    lambda: f64,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let (p, k) = (problem.dim(), problem.num_tasks());
    if support.is_empty() {
        return Ok(SolveReport {
            estimate: CoefficientMatrix::zeros(p, k, Role::Estimate),
            iterations: 0,
            final_kkt_residual: 0.0,
            objective_value: model::objective(problem, &CoefficientMatrix::zeros(p, k, Role::Estimate), lambda)?,
            converged: true,
            objective_trace: Vec::new(),
        });
    }
    let sub = problem.restrict_columns(support)?;
    let report = solve(&sub, lambda, config)?;
    let mut full = DMatrix::zeros(p, k);
    for (i, &j) in support.iter().enumerate() {
        full.set_row(j, &report.estimate.entries().row(i));
    }
    Ok(SolveReport { estimate: CoefficientMatrix::new(full, Role::Estimate), ..report })
}

#[derive(Clone, Debug, Serialize)]
pub struct WitnessReport {
    /// `‖Ẑ_j‖₂` over tasks for each `j ∈ Sᶜ`, in increasing index order.
    pub z_sc_row_norms: Vec<f64>,
    pub max_row_norm: f64,
    /// `max_j ‖Ẑ_j‖₂ < 1`.
    pub strict_feasible: bool,
    /// Whether the realized noise was used instead of residuals.
    pub used_true_noise: bool,
}

/// Dual witness on the off-support rows, built from the closed form
///
/// `Ẑ_{Sᶜk} = −(1/λn) X_{Sᶜ}ᵀ(Π_S − I)W + (1/n) X_{Sᶜ}ᵀX_S Σ̂_SS⁻¹ Ẑ_{Sk}`
///
/// with `Σ̂_SS = (1/n)X_SᵀX_S` and `Π_S = X_S Σ̂_SS⁻¹ X_Sᵀ/n`. `estimate` must
/// solve the problem restricted to the true support (see
/// [`solve_restricted`]); only its rows in `S` are read. `W` is the realized
/// noise when the problem carries it, otherwise the residual `Y − X_S β̂_S`.
pub fn dual_witness(
    problem: &MvmrProblem,
    estimate: &CoefficientMatrix,
    truth: &GroundTruth,
    lambda: f64,
) -> Result<WitnessReport> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let (p, k) = (problem.dim(), problem.num_tasks());
    if estimate.dim() != p || estimate.num_tasks() != k || truth.dim() != p || truth.num_tasks() != k {
        return Err(Error::Dimension("estimate, truth and problem shapes differ".into()));
    }
    let support = truth.support_union();
    let off = linalg::complement(support, p);
    let s = support.len();
    let n = problem.samples() as f64;
    let used_true_noise = problem.noise().is_some();

    // Restricted estimate, and Ẑ_S: normalized rows, or −G_j/λ on zero rows.
    let mut b_s = DMatrix::zeros(p, k);
    for &j in support {
        b_s.set_row(j, &estimate.entries().row(j));
    }
    let b_s = CoefficientMatrix::new(b_s, Role::Estimate);
    let grad = model::loss_gradient(problem, &b_s)?;
    let mut z_s = DMatrix::zeros(s, k);
    for (i, &j) in support.iter().enumerate() {
        let norm = b_s.row_norm(j);
        for t in 0..k {
            z_s[(i, t)] = if norm > 0.0 { b_s.get(j, t) / norm } else { -grad[(j, t)] / lambda };
        }
    }

    let mut z_sc = DMatrix::zeros(off.len(), k);
    for t in 0..k {
        let x = problem.design(t);
        let x_sc = linalg::select_columns(x, &off);
        let w = match problem.noise() {
            Some(ws) => ws[t].clone(),
            None => problem.response(t) - x * b_s.column(t),
        };
        let mut col = x_sc.tr_mul(&w) / (lambda * n);
        if s > 0 {
            if problem.samples() < s {
                return Err(Error::Singular(format!(
                    "sample covariance on S is singular (n = {} < s = {s})",
                    problem.samples()
                )));
            }
            let x_s = linalg::select_columns(x, support);
            let sigma_ss = x_s.tr_mul(&x_s) / n;
            let chol = linalg::cholesky(&sigma_ss, &format!("sample covariance of task {t} on S"))?;
            // Π_S W = X_S Σ̂⁻¹ X_Sᵀ W / n
            let proj_w = &x_s * chol.solve(&(x_s.tr_mul(&w) / n));
            col -= x_sc.tr_mul(&proj_w) / (lambda * n);
            let coupling = &x_s * chol.solve(&z_s.column(t).into_owned());
            col += x_sc.tr_mul(&coupling) / n;
        }
        z_sc.set_column(t, &col);
    }
    let z_sc_row_norms: Vec<f64> = z_sc.row_iter().map(|r| r.norm()).collect();
    let max_row_norm = z_sc_row_norms.iter().copied().fold(0.0, f64::max);
    Ok(WitnessReport { strict_feasible: max_row_norm < 1.0, max_row_norm, z_sc_row_norms, used_true_noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        build_covariance, build_truth, sample_problem, CoefficientModel, CovarianceModel, SupportRule,
    };
    use crate::model::NoiseSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn seeded(p: usize, k: usize, n: usize, support: Vec<usize>, sigma: f64, seed: u64) -> (MvmrProblem, GroundTruth) {
        let one_based: Vec<usize> = support.iter().map(|j| j + 1).collect();
        let rule = SupportRule::Custom(vec![one_based; k]);
        let truth = build_truth(&CoefficientModel::identical(rule), p, k).unwrap();
        let covs = build_covariance(CovarianceModel::Identity, p, k, 0.05).unwrap();
        let noise = NoiseSpec::uniform(sigma, k).unwrap();
        (sample_problem(&truth, &covs, &noise, n, seed).unwrap(), truth)
    }

    #[test]
    fn block_soft_threshold_examples() {
        assert_eq!(block_soft_threshold(&[3.0, 4.0], 5.0), vec![0.0, 0.0]);
        assert_eq!(block_soft_threshold(&[3.0, 4.0], 0.0), vec![3.0, 4.0]);
        assert_eq!(block_soft_threshold(&[3.0, 4.0], 2.5), vec![1.5, 2.0]);
    }

    #[test]
    fn row_subproblem_equal_curvature_matches_prox() {
        let mut u = [0.0; 2];
        solve_row_subproblem(&[6.0, 8.0], &[2.0, 2.0], 5.0, &mut u);
        // prox of λ/d on c/d = (3,4) with threshold 2.5
        assert_relative_eq!(u[0], 1.5, epsilon = 1e-15);
        assert_relative_eq!(u[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn row_subproblem_unequal_curvature_satisfies_stationarity() {
        let c = [1.3, -0.4, 2.2];
        let d = [0.5, 3.0, 1.1];
        let lambda = 0.7;
        let mut u = [0.0; 3];
        solve_row_subproblem(&c, &d, lambda, &mut u);
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..3 {
            // d_k u_k − c_k + λ u_k/‖u‖ = 0
            assert!((d[i] * u[i] - c[i] + lambda * u[i] / norm).abs() < 1e-12);
        }
        let mut z = [1.0; 3];
        solve_row_subproblem(&[0.3, 0.4, 0.0], &d, 0.5, &mut z);
        assert_eq!(z, [0.0; 3]);
    }

    #[test]
    fn zero_above_critical_lambda() {
        let (prob, _) = seeded(10, 2, 30, vec![1, 4], 0.5, 11);
        let crit = model::critical_lambda(&prob);
        let r = solve(&prob, crit * 1.01, &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert!(r.estimate.entries().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_task_bcd_matches_proximal_gradient() {
        let (prob, _) = seeded(10, 1, 50, vec![1, 3, 7], 0.5, 2024);
        let lambda = 0.1;
        let cfg = SolverConfig::default().with_tol(1e-10).with_max_iters(200_000);
        let a = solve(&prob, lambda, &cfg).unwrap();
        let b = solve(&prob, lambda, &cfg.clone().with_method(Method::ProximalGradient)).unwrap();
        assert!(a.converged && b.converged);
        let rel = (a.objective_value - b.objective_value).abs() / a.objective_value.abs();
        assert!(rel <= 1e-8, "relative objective gap {rel}");
    }

    #[test]
    fn noiseless_tiny_lambda_recovers_truth() {
        let (prob, truth) = seeded(8, 3, 60, vec![1, 2, 6], 0.0, 5);
        let cfg = SolverConfig::default().with_tol(1e-12).with_max_iters(100_000);
        let r = solve(&prob, 1e-8, &cfg).unwrap();
        let check = model::recovery_check(&r.estimate, &truth, 0.0).unwrap();
        assert!(check.linf_l2_error <= 1e-4, "error {}", check.linf_l2_error);
    }

    #[test]
    fn converged_solution_has_small_kkt() {
        let (prob, _) = seeded(20, 3, 40, vec![2, 5, 9, 13], 0.5, 77);
        let cfg = SolverConfig::default().with_tol(1e-8);
        let r = solve(&prob, 0.2, &cfg).unwrap();
        assert!(r.converged);
        assert!(model::kkt_residual(&prob, &r.estimate, 0.2).unwrap() <= 1e-6);
    }

    #[test]
    fn support_exact_zero_rows() {
        let (prob, _) = seeded(20, 2, 40, vec![2, 5, 9], 0.5, 8);
        let r = solve(&prob, 0.3, &SolverConfig::default().with_tol(1e-9)).unwrap();
        assert_eq!(model::support_of(&r.estimate, 0.0), model::support_of(&r.estimate, 1e-9));
        for norm in r.estimate.row_norms() {
            assert!(norm == 0.0 || norm > 1e-12);
        }
    }

    #[test]
    fn truth_is_not_optimal_on_noisy_data() {
        let (prob, truth) = seeded(20, 2, 40, vec![2, 5, 9], 0.5, 8);
        assert!(model::kkt_residual(&prob, truth.b_star(), 0.01).unwrap() > 0.0);
    }

    #[test]
    fn bcd_objective_is_monotone() {
        let truth = build_truth(&CoefficientModel::identical(SupportRule::Stride8), 32, 3).unwrap();
        let covs = build_covariance(CovarianceModel::TridiagPerTask, 32, 3, 0.05).unwrap();
        let prob = sample_problem(&truth, &covs, &NoiseSpec::uniform(0.5, 3).unwrap(), 25, 1).unwrap();
        let cfg = SolverConfig { record_trace: true, tol: 1e-9, ..SolverConfig::default() };
        let r = solve(&prob, 0.15, &cfg).unwrap();
        assert!(r.converged);
        for w in r.objective_trace.windows(2) {
            assert!(w[1] - w[0] <= 1e-12, "objective increased: {} -> {}", w[0], w[1]);
        }
        assert_relative_eq!(*r.objective_trace.last().unwrap(), r.objective_value, epsilon = 1e-10);
    }

    #[test]
    fn shuffled_order_reaches_same_optimum() {
        let (prob, _) = seeded(15, 2, 30, vec![0, 4, 8], 0.5, 31);
        let base = SolverConfig::default().with_tol(1e-9);
        let a = solve(&prob, 0.2, &base).unwrap();
        let b = solve(&prob, 0.2, &SolverConfig { order: SweepOrder::Shuffled { seed: 4 }, ..base }).unwrap();
        assert!(a.converged && b.converged);
        assert_relative_eq!(a.objective_value, b.objective_value, max_relative = 1e-9);
    }

    #[test]
    fn nonconvergence_is_reported_not_raised() {
        let (prob, _) = seeded(20, 2, 15, vec![2, 5, 9], 0.5, 3);
        let r = solve(&prob, 0.01, &SolverConfig::default().with_tol(1e-14).with_max_iters(1)).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn nan_data_is_rejected() {
        let x = DMatrix::from_element(3, 2, f64::NAN);
        let prob = MvmrProblem::new(vec![x], vec![DVector::zeros(3)]).unwrap();
        assert!(matches!(solve(&prob, 1.0, &SolverConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn witness_closed_form_matches_gradient_route() {
        let (prob, truth) = seeded(20, 2, 60, vec![1, 6, 11], 0.5, 17);
        let lambda = 0.15;
        let cfg = SolverConfig::default().with_tol(1e-12).with_max_iters(100_000);
        let restricted = solve_restricted(&prob, truth.support_union(), lambda, &cfg).unwrap();
        assert!(restricted.converged);
        // Route 1: closed form with the realized noise.
        let with_noise = dual_witness(&prob, &restricted.estimate, &truth, lambda).unwrap();
        assert!(with_noise.used_true_noise);
        // Route 2: closed form with residuals (noise dropped).
        let bare = MvmrProblem::new(prob.designs().to_vec(), prob.responses().to_vec()).unwrap();
        let with_resid = dual_witness(&bare, &restricted.estimate, &truth, lambda).unwrap();
        assert!(!with_resid.used_true_noise);
        // Route 3: −∇f/λ on the off-support rows.
        let grad = model::loss_gradient(&prob, &restricted.estimate).unwrap();
        let off = linalg::complement(truth.support_union(), 20);
        for (i, &j) in off.iter().enumerate() {
            let direct = grad.row(j).norm() / lambda;
            assert_relative_eq!(with_noise.z_sc_row_norms[i], direct, epsilon = 1e-8);
            assert_relative_eq!(with_resid.z_sc_row_norms[i], direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn witness_empty_support_is_correlation_only() {
        let truth = GroundTruth::new(CoefficientMatrix::zeros(6, 2, Role::Truth)).unwrap();
        let (prob, _) = seeded(6, 2, 20, vec![1], 0.5, 4);
        let est = CoefficientMatrix::zeros(6, 2, Role::Estimate);
        let w = dual_witness(&prob, &est, &truth, 1e6).unwrap();
        assert_eq!(w.z_sc_row_norms.len(), 6);
        assert!(w.strict_feasible);
    }

    #[test]
    fn witness_singular_when_n_below_s() {
        let (prob, truth) = seeded(10, 1, 3, vec![0, 1, 2, 3, 4], 0.5, 4);
        let est = CoefficientMatrix::zeros(10, 1, Role::Estimate);
        assert!(matches!(dual_witness(&prob, &est, &truth, 0.5), Err(Error::Singular(_))));
    }

    #[test]
    fn strict_witness_implies_unique_solution() {
        use rand::Rng;
        let (prob, truth) = seeded(20, 2, 80, vec![1, 6, 11], 0.3, 90);
        let lambda = 0.2;
        let cfg = SolverConfig::default().with_tol(1e-11).with_max_iters(100_000);
        let restricted = solve_restricted(&prob, truth.support_union(), lambda, &cfg).unwrap();
        let w = dual_witness(&prob, &restricted.estimate, &truth, lambda).unwrap();
        assert!(w.strict_feasible, "max witness norm {}", w.max_row_norm);
        let reference = solve(&prob, lambda, &cfg).unwrap();
        assert_eq!(model::support_of(&reference.estimate, 0.0), truth.support_union());
        let mut rng = rng_from_seed(5);
        for _ in 0..5 {
            let init = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-2.0..2.0));
            let init = CoefficientMatrix::new(init, Role::Estimate);
            let r = solve_from(&prob, lambda, &cfg, Some(&init)).unwrap();
            assert!(r.converged);
            let diff = CoefficientMatrix::new(r.estimate.entries() - reference.estimate.entries(), Role::Estimate);
            assert!(model::linf_l2(&diff) <= 1e-5);
        }
    }

    #[test]
    fn restricted_solution_is_zero_off_support() {
        let (prob, truth) = seeded(12, 2, 30, vec![0, 5], 0.5, 3);
        let cfg = SolverConfig::default().with_tol(1e-10);
        let r = solve_restricted(&prob, truth.support_union(), 0.1, &cfg).unwrap();
        assert!(r.converged);
        assert_eq!(model::support_of(&r.estimate, 0.0), vec![0, 5]);
        // Restricted optimality: the KKT residual over the support rows alone vanishes.
        let grad = model::loss_gradient(&prob, &r.estimate).unwrap();
        for &j in truth.support_union() {
            let b = r.estimate.entries().row(j);
            let res = (grad.row(j) + b * (0.1 / b.norm())).norm();
            assert!(res <= 1e-9, "row {j}: {res}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn row_subproblem_is_optimal(
            c in proptest::collection::vec(-5.0..5.0f64, 1..5),
            seed_d in proptest::collection::vec(0.05..4.0f64, 5),
            lambda in 0.01..3.0f64,
        ) {
            let k = c.len();
            let d = &seed_d[..k];
            let mut u = vec![0.0; k];
            solve_row_subproblem(&c, d, lambda, &mut u);
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let c_norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if c_norm <= lambda {
                prop_assert_eq!(norm, 0.0);
            } else {
                prop_assert!(norm > 0.0);
                for i in 0..k {
                    let g = d[i] * u[i] - c[i] + lambda * u[i] / norm;
                    prop_assert!(g.abs() <= 1e-9 * (1.0 + c_norm), "stationarity residual {}", g);
                }
            }
        }
    }
}
