//! Closed-form quantities behind the recovery thresholds: the
//! sparsity-overlap function ψ, irrepresentability, conditional-covariance
//! extremes, eigenvalue bounds and the sample-size thresholds.
//!
//! All logarithms are natural. Inverses are applied through Cholesky
//! solves; the only explicit inverse is `(Σ_SS)⁻¹` inside `D_max`, whose
//! ∞-norm is the quantity of interest.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::datagen::CovarianceSet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CoefficientMatrix, GroundTruth};

fn check_support(p: usize, support: &[usize]) -> Result<()> {
    if support.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invariant("support must be strictly increasing".into()));
    }
    if support.last().is_some_and(|&j| j >= p) {
        return Err(Error::Dimension(format!("support index out of range for p = {p}")));
    }
    Ok(())
}

/// `Σ_{SᶜSᶜ} − Σ_{SᶜS} Σ_SS⁻¹ Σ_{SSᶜ}`.
pub fn conditional_covariance(cov: &DMatrix<f64>, support: &[usize]) -> Result<DMatrix<f64>> {
    let p = cov.nrows();
    check_support(p, support)?;
    if support.is_empty() || support.len() == p {
        return Err(Error::Domain("support must be a nonempty proper subset".into()));
    }
    let off = linalg::complement(support, p);
    let sigma_ss = linalg::submatrix(cov, support, support);
    let sigma_s_off = linalg::submatrix(cov, support, &off);
    let sigma_off = linalg::submatrix(cov, &off, &off);
    let chol = linalg::cholesky(&sigma_ss, "Σ_SS")?;
    let solved = chol.solve(&sigma_s_off);
    let q = sigma_off - sigma_s_off.tr_mul(&solved);
    // Symmetrize away round-off.
    Ok((&q + q.transpose()) * 0.5)
}

/// Rows of `B*_S` normalized to unit l2 norm (the matrix `Z*_S`).
fn normalized_support_rows(b_star: &CoefficientMatrix, support: &[usize]) -> Result<DMatrix<f64>> {
    let mut z = DMatrix::zeros(support.len(), b_star.num_tasks());
    for (i, &j) in support.iter().enumerate() {
        let norm = b_star.row_norm(j);
        if norm == 0.0 {
            return Err(Error::Invariant(format!("row {j} is in the support but is zero")));
        }
        z.set_row(i, &(b_star.entries().row(j) / norm));
    }
    Ok(z)
}

/// Per-task values `Z*_{Sk}ᵀ (Σ_SS⁽ᵏ⁾)⁻¹ Z*_{Sk}`.
pub fn psi_per_task(b_star: &CoefficientMatrix, covs: &CovarianceSet, support: &[usize]) -> Result<Vec<f64>> {
    let (p, k) = (b_star.dim(), b_star.num_tasks());
    if covs.dim() != p || covs.num_tasks() != k {
        return Err(Error::Dimension("covariance set does not match B*".into()));
    }
    check_support(p, support)?;
    if support.is_empty() {
        return Ok(vec![0.0; k]);
    }
    let z = normalized_support_rows(b_star, support)?;
    (0..k)
        .map(|t| {
            let sigma_ss = linalg::submatrix(covs.matrix(t), support, support);
            let chol = linalg::cholesky(&sigma_ss, &format!("Σ_SS of task {t}"))?;
            Ok(linalg::inverse_quadratic_form(&chol, &z.column(t).into_owned()))
        })
        .collect()
}

/// `ψ(B*, Σ⁽¹ᐟᴷ⁾) = max_k Z*_{Sk}ᵀ (Σ_SS⁽ᵏ⁾)⁻¹ Z*_{Sk}`.
pub fn psi(b_star: &CoefficientMatrix, covs: &CovarianceSet, support: &[usize]) -> Result<f64> {
    Ok(psi_per_task(b_star, covs, support)?.into_iter().fold(0.0, f64::max))
}

/// Single-regression ψ: `sign(β_S)ᵀ Σ_SS⁻¹ sign(β_S)` over the caller's
/// evaluation support (entries of `β` that are zero there contribute sign 0).
pub fn psi_single(beta: &DVector<f64>, cov: &DMatrix<f64>, support: &[usize]) -> Result<f64> {
    let p = beta.len();
    if cov.shape() != (p, p) {
        return Err(Error::Dimension("covariance does not match β".into()));
    }
    check_support(p, support)?;
    if support.is_empty() {
        return Ok(0.0);
    }
    let signs = DVector::from_iterator(
        support.len(),
        support.iter().map(|&j| {
            let v = beta[j];
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
    );
    let sigma_ss = linalg::submatrix(cov, support, support);
    let chol = linalg::cholesky(&sigma_ss, "Σ_SS")?;
    Ok(linalg::inverse_quadratic_form(&chol, &signs))
}

/// `max_k ψ(β*⁽ᵏ⁾, Σ⁽ᵏ⁾)` with every sign vector evaluated over `support`.
pub fn max_psi_single(b_star: &CoefficientMatrix, covs: &CovarianceSet, support: &[usize]) -> Result<f64> {
    if covs.num_tasks() != b_star.num_tasks() {
        return Err(Error::Dimension("covariance set does not match B*".into()));
    }
    (0..b_star.num_tasks())
        .try_fold(0.0_f64, |acc, t| Ok(acc.max(psi_single(&b_star.column(t), covs.matrix(t), support)?)))
}

/// Ratio bound for same-support coefficients with entries in
/// `[b̄_k − Δ_k, b̄_k + Δ_k]`: `(1/K)·max_k ((b̄_k+Δ_k)/(b̄_k−Δ_k))²`.
///
/// The bound on `ψ/max_k ψ_single` needs comparable `b̄_k` across tasks; with
/// very unequal magnitudes the largest task dominates every row norm and
/// `ψ` approaches `max_k ψ_single`.
pub fn varying_coefficients_bound(b_bar: &[f64], delta: &[f64]) -> Result<f64> {
    if b_bar.is_empty() || b_bar.len() != delta.len() {
        return Err(Error::Dimension("need one (b̄, Δ) pair per task".into()));
    }
    if b_bar.iter().zip(delta).any(|(&b, &d)| !(d > 0.0 && b > d)) {
        return Err(Error::Domain("need b̄_k > Δ_k > 0".into()));
    }
    let worst = b_bar.iter().zip(delta).map(|(b, d)| ((b + d) / (b - d)).powi(2)).fold(0.0, f64::max);
    Ok(worst / b_bar.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Irrepresentability {
    pub gamma: f64,
    pub a_matrix_inf_norm: f64,
}

/// `A_js = max_k |(Σ_{SᶜS}⁽ᵏ⁾ (Σ_SS⁽ᵏ⁾)⁻¹)_js|`, `γ = 1 − ⦀A⦀_∞`.
///
/// `γ ≤ 0` means the irrepresentability condition fails.
pub fn irrepresentability(covs: &CovarianceSet, support: &[usize]) -> Result<Irrepresentability> {
    let p = covs.dim();
    check_support(p, support)?;
    let off = linalg::complement(support, p);
    if support.is_empty() || off.is_empty() {
        return Ok(Irrepresentability { gamma: 1.0, a_matrix_inf_norm: 0.0 });
    }
    let mut a = DMatrix::<f64>::zeros(off.len(), support.len());
    for (t, cov) in covs.matrices().iter().enumerate() {
        let sigma_ss = linalg::submatrix(cov, support, support);
        let sigma_s_off = linalg::submatrix(cov, support, &off);
        let chol = linalg::cholesky(&sigma_ss, &format!("Σ_SS of task {t}"))?;
        // (Σ_SS⁻¹ Σ_{SSᶜ})ᵀ = Σ_{SᶜS} Σ_SS⁻¹
        let m = chol.solve(&sigma_s_off);
        for i in 0..off.len() {
            for j in 0..support.len() {
                a[(i, j)] = a[(i, j)].max(m[(j, i)].abs());
            }
        }
    }
    let norm = linalg::inf_norm(&a);
    Ok(Irrepresentability { gamma: 1.0 - norm, a_matrix_inf_norm: norm })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RhoBounds {
    pub rho_u: f64,
    /// `None` when `|Sᶜ| < 2`.
    pub rho_l: Option<f64>,
}

/// Extremes of the conditional covariances `Q⁽ᵏ⁾ = Σ⁽ᵏ⁾_{SᶜSᶜ|S}`:
/// `ρ_u = max_{j,k} Q_jj`, `ρ_l = min_{i≠j,k} (Q_jj + Q_ii − 2Q_ij)`.
pub fn rho_bounds(covs: &CovarianceSet, support: &[usize]) -> Result<RhoBounds> {
    let p = covs.dim();
    check_support(p, support)?;
    let off_len = p - support.len();
    if off_len == 0 {
        return Err(Error::Undefined("ρ_u needs a nonempty complement of S".into()));
    }
    let mut rho_u = f64::NEG_INFINITY;
    let mut rho_l = f64::INFINITY;
    for cov in covs.matrices() {
        let q = if support.is_empty() { cov.clone() } else { conditional_covariance(cov, support)? };
        for j in 0..off_len {
            rho_u = rho_u.max(q[(j, j)]);
            for i in (j + 1)..off_len {
                rho_l = rho_l.min(q[(j, j)] + q[(i, i)] - 2.0 * q[(i, j)]);
            }
        }
    }
    Ok(RhoBounds { rho_u, rho_l: (off_len >= 2).then_some(rho_l) })
}

/// Like [`rho_bounds`] but fails when `ρ_l` is undefined.
pub fn rho_bounds_strict(covs: &CovarianceSet, support: &[usize]) -> Result<(f64, f64)> {
    let r = rho_bounds(covs, support)?;
    let rho_l = r.rho_l.ok_or_else(|| Error::Undefined("ρ_l needs |Sᶜ| >= 2".into()))?;
    Ok((r.rho_u, rho_l))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    /// `2(1+v)·ψ·ln(p−s)·ρ_u/γ²`
    pub n_achievability: f64,
    /// `2(1−v)·ψ·ln(p−s)·ρ_l/(2−γ)²`
    pub n_converse: f64,
}

/// Sample-size thresholds above which recovery succeeds and below which it
/// fails (up to the slack `v`).
pub fn thresholds(psi_val: f64, p: usize, s: usize, rho_u: f64, rho_l: f64, gamma: f64, v: f64) -> Result<Thresholds> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if p <= s {
        return Err(Error::Domain(format!("need p > s, got p = {p}, s = {s}")));
    }
    if !(v > 0.0) {
        return Err(Error::Domain(format!("v must be positive, got {v}")));
    }
    let log_term = ((p - s) as f64).ln();
    Ok(Thresholds {
        n_achievability: 2.0 * (1.0 + v) * psi_val * log_term * rho_u / (gamma * gamma),
        n_converse: 2.0 * (1.0 - v) * psi_val * log_term * rho_l / ((2.0 - gamma) * (2.0 - gamma)),
    })
}

/// `s/(K·C_max) ≤ ψ ≤ s/C_min` up to 1e-9.
pub fn psi_bounds_check(psi_val: f64, s: usize, k: usize, c_min: f64, c_max: f64) -> bool {
    let s = s as f64;
    let lower = s / (k as f64 * c_max);
    let upper = s / c_min;
    lower - 1e-9 <= psi_val && psi_val <= upper + 1e-9
}

/// `√(8σ_max²·s·ln s/(n·C_min)) + λ(D_max + 12s/(C_min√n))`, with `σ_max`
/// the largest noise standard deviation.
pub fn rho_p2(n: usize, s: usize, lambda: f64, sigma_max: f64, c_min: f64, d_max: f64) -> Result<f64> {
    if s < 2 {
        return Err(Error::Domain(format!("ρ(n, s, λ) needs s >= 2, got {s}")));
    }
    if n == 0 || !(c_min > 0.0) || lambda < 0.0 || sigma_max < 0.0 || d_max < 0.0 {
        return Err(Error::Domain("ρ(n, s, λ) needs n, C_min > 0 and nonnegative λ, σ, D_max".into()));
    }
    let (nf, sf) = (n as f64, s as f64);
    let noise = (8.0 * sigma_max * sigma_max * sf * sf.ln() / (nf * c_min)).sqrt();
    Ok(noise + lambda * (d_max + 12.0 * sf / (c_min * nf.sqrt())))
}

/// Eigenvalue range of `Σ_SS⁽ᵏ⁾` over all tasks: `(C_min, C_max)`.
pub fn eigen_bounds(covs: &CovarianceSet, support: &[usize]) -> Result<(f64, f64)> {
    check_support(covs.dim(), support)?;
    if support.is_empty() {
        return Err(Error::Undefined("eigenvalue bounds need a nonempty support".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for cov in covs.matrices() {
        let (a, b) = linalg::eigen_extremes(&linalg::submatrix(cov, support, support));
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok((lo, hi))
}

/// `max_k ⦀(Σ_SS⁽ᵏ⁾)⁻¹⦀_∞`, inverse formed by column solves against `I`.
pub fn d_max(covs: &CovarianceSet, support: &[usize]) -> Result<f64> {
    check_support(covs.dim(), support)?;
    if support.is_empty() {
        return Err(Error::Undefined("D_max needs a nonempty support".into()));
    }
    let s = support.len();
    let mut worst = 0.0_f64;
    for (t, cov) in covs.matrices().iter().enumerate() {
        let chol = linalg::cholesky(&linalg::submatrix(cov, support, support), &format!("Σ_SS of task {t}"))?;
        let inv = chol.solve(&DMatrix::identity(s, s));
        worst = worst.max(linalg::inf_norm(&inv));
    }
    Ok(worst)
}

/// Caller-declared constants for the eigenvalue and inverse-norm conditions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct DeclaredBounds {
    pub c_min: Option<f64>,
    pub c_max: Option<f64>,
    pub d_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub gamma: f64,
    pub a_matrix_inf_norm: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub d_max: f64,
    pub rho_u: f64,
    pub rho_l: Option<f64>,
    pub psi: f64,
    pub psi_per_task: Vec<f64>,
    pub c1_holds: bool,
    /// `None` when no bounds were declared.
    pub c2_holds: Option<bool>,
    pub c3_holds: Option<bool>,
    pub psi_within_bounds: bool,
}

/// Evaluates every condition quantity for one ensemble.
pub fn condition_report(
    truth: &GroundTruth,
    covs: &CovarianceSet,
    declared: &DeclaredBounds,
) -> Result<ConditionReport> {
    let support = truth.support_union();
    let irr = irrepresentability(covs, support)?;
    let (c_min, c_max) = eigen_bounds(covs, support)?;
    let d_max = d_max(covs, support)?;
    let rho = rho_bounds(covs, support)?;
    let per_task = psi_per_task(truth.b_star(), covs, support)?;
    let psi = per_task.iter().copied().fold(0.0, f64::max);
    let c2_holds = match (declared.c_min, declared.c_max) {
        (None, None) => None,
        (lo, hi) => Some(lo.is_none_or(|lo| c_min >= lo) && hi.is_none_or(|hi| c_max <= hi)),
    };
    let c3_holds = declared.d_max.map(|bound| d_max <= bound);
    Ok(ConditionReport {
        gamma: irr.gamma,
        a_matrix_inf_norm: irr.a_matrix_inf_norm,
        c_min,
        c_max,
        d_max,
        rho_u: rho.rho_u,
        rho_l: rho.rho_l,
        psi,
        psi_per_task: per_task,
        c1_holds: irr.gamma > 0.0,
        c2_holds,
        c3_holds,
        psi_within_bounds: psi_bounds_check(psi, support.len(), truth.num_tasks(), c_min, c_max),
    })
}
