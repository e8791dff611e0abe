//! The multi-response regression data model: problem instances, coefficient
//! matrices, block norms, the penalized objective and its optimality residual.
//!
//! Coefficient matrices are `p × K`: row `j` is the group of coefficients of
//! feature `j` across tasks, column `k` is the regression vector of task `k`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a coefficient matrix is a fitted estimate or the data-generating truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Estimate,
    Truth,
}

/// A `p × K` coefficient matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMatrix {
    entries: DMatrix<f64>,
    role: Role,
}

impl CoefficientMatrix {
    pub fn new(entries: DMatrix<f64>, role: Role) -> Self {
        CoefficientMatrix { entries, role }
    }

    pub fn zeros(p: usize, k: usize, role: Role) -> Self {
        CoefficientMatrix::new(DMatrix::zeros(p, k), role)
    }

    /// Builds a matrix from row-major nested rows (one inner vec per feature).
    pub fn from_rows(rows: &[Vec<f64>], role: Role) -> Result<Self> {
        let p = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("ragged coefficient rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(CoefficientMatrix::new(DMatrix::from_row_slice(p, k, &flat), role))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn num_tasks(&self) -> usize {
        self.entries.ncols()
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[(j, k)]
    }

    /// Euclidean norm of row `j` (the coefficient group of feature `j`).
    pub fn row_norm(&self, j: usize) -> f64 {
        self.entries.row(j).norm()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.row_norm(j)).collect()
    }

    /// Task `k`'s regression vector.
    pub fn column(&self, k: usize) -> DVector<f64> {
        self.entries.column(k).into_owned()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV with one line per feature and one column per task, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.entries.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn from_csv(text: &str, role: Role) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Data(format!("line {}: bad number {tok:?}: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        CoefficientMatrix::from_rows(&rows, role)
    }
}

#[derive(Serialize, Deserialize)]
struct CoefficientMatrixJson {
    p: usize,
    #[serde(rename = "K")]
    k: usize,
    entries: Vec<f64>,
}

impl Serialize for CoefficientMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = self.entries.transpose().as_slice().to_vec();
        CoefficientMatrixJson { p: self.dim(), k: self.num_tasks(), entries }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CoefficientMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = CoefficientMatrixJson::deserialize(d)?;
        if raw.entries.len() != raw.p * raw.k {
            return Err(serde::de::Error::custom(format!(
                "expected {} entries for a {}x{} matrix, got {}",
                raw.p * raw.k,
                raw.p,
                raw.k,
                raw.entries.len()
            )));
        }
        Ok(CoefficientMatrix::new(DMatrix::from_row_slice(raw.p, raw.k, &raw.entries), Role::Estimate))
    }
}

/// `K` regression tasks `Y⁽ᵏ⁾ = X⁽ᵏ⁾β⁽ᵏ⁾ + W⁽ᵏ⁾` sharing `n` and `p`.
///
/// When the instance was simulated, the realized noise vectors are kept so
/// diagnostics can use the exact `W⁽ᵏ⁾` instead of residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct MvmrProblem {
    designs: Vec<DMatrix<f64>>,
    responses: Vec<DVector<f64>>,
    noise: Option<Vec<DVector<f64>>>,
}

impl MvmrProblem {
    pub fn new(designs: Vec<DMatrix<f64>>, responses: Vec<DVector<f64>>) -> Result<Self> {
        if designs.is_empty() {
            return Err(Error::Dimension("at least one task is required".into()));
        }
        if designs.len() != responses.len() {
            return Err(Error::Dimension(format!("{} designs but {} responses", designs.len(), responses.len())));
        }
        let (n, p) = designs[0].shape();
        if n == 0 || p == 0 {
            return Err(Error::Dimension("designs must have n >= 1 and p >= 1".into()));
        }
        for (k, (x, y)) in designs.iter().zip(&responses).enumerate() {
            if x.shape() != (n, p) {
                return Err(Error::Dimension(format!("design {k} is {}x{}, expected {n}x{p}", x.nrows(), x.ncols())));
            }
            if y.len() != n {
                return Err(Error::Dimension(format!("response {k} has length {}, expected {n}", y.len())));
            }
        }
        Ok(MvmrProblem { designs, responses, noise: None })
    }

    /// Attaches the realized noise vectors of a simulated instance.
    pub fn with_noise(mut self, noise: Vec<DVector<f64>>) -> Result<Self> {
        if noise.len() != self.num_tasks() || noise.iter().any(|w| w.len() != self.samples()) {
            return Err(Error::Dimension("noise must be K vectors of length n".into()));
        }
        self.noise = Some(noise);
        Ok(self)
    }

    pub fn num_tasks(&self) -> usize {
        self.designs.len()
    }

    pub fn dim(&self) -> usize {
        self.designs[0].ncols()
    }

    pub fn samples(&self) -> usize {
        self.designs[0].nrows()
    }

    pub fn designs(&self) -> &[DMatrix<f64>] {
        &self.designs
    }

    pub fn responses(&self) -> &[DVector<f64>] {
        &self.responses
    }

    pub fn design(&self, k: usize) -> &DMatrix<f64> {
        &self.designs[k]
    }

    pub fn response(&self, k: usize) -> &DVector<f64> {
        &self.responses[k]
    }

    pub fn noise(&self) -> Option<&[DVector<f64>]> {
        self.noise.as_deref()
    }

    pub fn is_finite(&self) -> bool {
        self.designs.iter().all(|x| x.iter().all(|v| v.is_finite()))
            && self.responses.iter().all(|y| y.iter().all(|v| v.is_finite()))
    }

    /// The same tasks restricted to the listed feature columns.
    pub fn restrict_columns(&self, cols: &[usize]) -> Result<MvmrProblem> {
        if cols.is_empty() {
            return Err(Error::Dimension("column restriction must keep at least one feature".into()));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.dim()) {
            return Err(Error::Dimension(format!("column {bad} out of range")));
        }
        let designs = self.designs.iter().map(|x| crate::linalg::select_columns(x, cols)).collect();
        Ok(MvmrProblem { designs, responses: self.responses.clone(), noise: self.noise.clone() })
    }

    fn check_coefficients(&self, b: &CoefficientMatrix) -> Result<()> {
        if b.dim() != self.dim() || b.num_tasks() != self.num_tasks() {
            return Err(Error::Dimension(format!(
                "coefficients are {}x{}, problem needs {}x{}",
                b.dim(),
                b.num_tasks(),
                self.dim(),
                self.num_tasks()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MvmrProblemJson {
    num_tasks: usize,
    dim: usize,
    samples: usize,
    /// One row-major `n × p` array per task.
    designs: Vec<Vec<f64>>,
    responses: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<Vec<Vec<f64>>>,
}

impl Serialize for MvmrProblem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MvmrProblemJson {
            num_tasks: self.num_tasks(),
            dim: self.dim(),
            samples: self.samples(),
            designs: self.designs.iter().map(|x| x.transpose().as_slice().to_vec()).collect(),
            responses: self.responses.iter().map(|y| y.as_slice().to_vec()).collect(),
            noise: self.noise.as_ref().map(|ws| ws.iter().map(|w| w.as_slice().to_vec()).collect()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MvmrProblem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = MvmrProblemJson::deserialize(d)?;
        let (n, p) = (raw.samples, raw.dim);
        if raw.designs.len() != raw.num_tasks {
            return Err(D::Error::custom("num_tasks does not match the number of designs"));
        }
        let designs = raw
            .designs
            .iter()
            .map(|flat| {
                if flat.len() != n * p {
                    Err(D::Error::custom(format!("design must have {} entries", n * p)))
                } else {
                    Ok(DMatrix::from_row_slice(n, p, flat))
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let responses = raw.responses.into_iter().map(DVector::from_vec).collect();
        let mut problem = MvmrProblem::new(designs, responses).map_err(D::Error::custom)?;
        if let Some(noise) = raw.noise {
            problem =
                problem.with_noise(noise.into_iter().map(DVector::from_vec).collect()).map_err(D::Error::custom)?;
        }
        Ok(problem)
    }
}

/// True coefficients with their derived supports and minimum signal strength.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundTruth {
    b_star: CoefficientMatrix,
    support_union: Vec<usize>,
    per_task_supports: Vec<Vec<usize>>,
    b_min: f64,
}

impl GroundTruth {
    /// Derives `S_k`, `S = ∪ S_k` and `b*_min` from the nonzero pattern of `b_star`.
    pub fn new(b_star: CoefficientMatrix) -> Result<Self> {
        if b_star.entries().iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("true coefficients must be finite".into()));
        }
        let b_star = b_star.with_role(Role::Truth);
        let per_task_supports: Vec<Vec<usize>> =
            (0..b_star.num_tasks()).map(|k| (0..b_star.dim()).filter(|&j| b_star.get(j, k) != 0.0).collect()).collect();
        let support_union = support_of(&b_star, 0.0);
        let b_min = support_union.iter().map(|&j| b_star.row_norm(j)).fold(f64::INFINITY, f64::min);
        let b_min = if support_union.is_empty() { 0.0 } else { b_min };
        Ok(GroundTruth { b_star, support_union, per_task_supports, b_min })
    }

    pub fn b_star(&self) -> &CoefficientMatrix {
        &self.b_star
    }

    pub fn support_union(&self) -> &[usize] {
        &self.support_union
    }

    pub fn per_task_supports(&self) -> &[Vec<usize>] {
        &self.per_task_supports
    }

    /// `s = |S|`.
    pub fn sparsity(&self) -> usize {
        self.support_union.len()
    }

    pub fn b_min(&self) -> f64 {
        self.b_min
    }

    pub fn dim(&self) -> usize {
        self.b_star.dim()
    }

    pub fn num_tasks(&self) -> usize {
        self.b_star.num_tasks()
    }
}

/// Per-task noise standard deviations `σ_W⁽ᵏ⁾`.
///
/// Stored as standard deviations; anything that needs a variance squares
/// explicitly. Zero is accepted and produces noiseless responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    sigma_w: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(sigma_w: Vec<f64>) -> Result<Self> {
        if sigma_w.is_empty() {
            return Err(Error::Config("sigma_w needs one entry per task".into()));
        }
        if sigma_w.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("sigma_w entries must be finite and nonnegative".into()));
        }
        Ok(NoiseSpec { sigma_w })
    }

    pub fn uniform(sigma: f64, k: usize) -> Result<Self> {
        NoiseSpec::new(vec![sigma; k])
    }

    pub fn sigma_w(&self) -> &[f64] {
        &self.sigma_w
    }

    /// Largest per-task standard deviation.
    pub fn sigma_max(&self) -> f64 {
        self.sigma_w.iter().copied().fold(0.0, f64::max)
    }

    /// Largest per-task variance, `max_k σ_W⁽ᵏ⁾²`.
    pub fn max_variance(&self) -> f64 {
        self.sigma_max().powi(2)
    }

    pub fn num_tasks(&self) -> usize {
        self.sigma_w.len()
    }
}

/// `‖B‖_{l_a/l_b} = [Σ_i (Σ_k |B_ik|^b)^(a/b)]^(1/a)`.
///
/// Exponents must each be 1, 2 or `f64::INFINITY`.
pub fn block_norm(b: &CoefficientMatrix, a: f64, inner: f64) -> Result<f64> {
    let supported = |e: f64| e == 1.0 || e == 2.0 || e == f64::INFINITY;
    if !supported(a) || !supported(inner) {
        return Err(Error::UnsupportedNorm { a: format!("{a}"), b: format!("{inner}") });
    }
    if b.is_empty() {
        return Err(Error::Dimension("block norm of an empty matrix".into()));
    }
    let row_value = |row: nalgebra::RowDVector<f64>| -> f64 {
        if inner == f64::INFINITY {
            row.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
        } else if inner == 1.0 {
            row.iter().map(|v| v.abs()).sum()
        } else {
            row.norm()
        }
    };
    let rows = b.entries().row_iter().map(|r| row_value(r.into_owned()));
    Ok(if a == f64::INFINITY {
        rows.fold(0.0, f64::max)
    } else if a == 1.0 {
        rows.sum()
    } else {
        rows.map(|v| v * v).sum::<f64>().sqrt()
    })
}

/// `‖B‖_{l1/l2}`, the group penalty.
pub fn l1_l2(b: &CoefficientMatrix) -> f64 {
    b.row_norms().iter().sum()
}

/// `‖B‖_{l∞/l2}`, the largest row norm.
pub fn linf_l2(b: &CoefficientMatrix) -> f64 {
    b.row_norms().iter().copied().fold(0.0, f64::max)
}

/// `(1/2n) Σ_k ‖Y⁽ᵏ⁾ − X⁽ᵏ⁾β⁽ᵏ⁾‖² + λ‖B‖_{l1/l2}`.
pub fn objective(problem: &MvmrProblem, b: &CoefficientMatrix, lambda: f64) -> Result<f64> {
    problem.check_coefficients(b)?;
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    let n = problem.samples() as f64;
    let loss: f64 =
        (0..problem.num_tasks()).map(|k| (problem.response(k) - problem.design(k) * b.column(k)).norm_squared()).sum();
    Ok(loss / (2.0 * n) + lambda * l1_l2(b))
}

/// Gradient of the smooth loss, `G_jk = −(1/n) X_j⁽ᵏ⁾ᵀ(Y⁽ᵏ⁾ − X⁽ᵏ⁾β⁽ᵏ⁾)`, as a `p × K` matrix.
pub fn loss_gradient(problem: &MvmrProblem, b: &CoefficientMatrix) -> Result<DMatrix<f64>> {
    problem.check_coefficients(b)?;
    let n = problem.samples() as f64;
    let mut grad = DMatrix::zeros(problem.dim(), problem.num_tasks());
    for k in 0..problem.num_tasks() {
        let x = problem.design(k);
        let residual = problem.response(k) - x * b.column(k);
        let g = x.tr_mul(&residual) * (-1.0 / n);
        grad.set_column(k, &g);
    }
    Ok(grad)
}

/// Largest row-wise violation of the optimality conditions.
///
/// Nonzero rows contribute `‖G_j + λ B_j/‖B_j‖‖`, zero rows `max(0, ‖G_j‖ − λ)`.
pub fn kkt_residual(problem: &MvmrProblem, b: &CoefficientMatrix, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let grad = loss_gradient(problem, b)?;
    Ok(kkt_residual_from_gradient(&grad, b.entries(), lambda))
}

pub(crate) fn kkt_residual_from_gradient(grad: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..b.nrows() {
        let row = b.row(j);
        let norm = row.norm();
        let g = grad.row(j);
        let violation = if norm > 0.0 { (g + row * (lambda / norm)).norm() } else { (g.norm() - lambda).max(0.0) };
        worst = worst.max(violation);
    }
    worst
}

/// `max_j ‖G_j(0)‖`: the smallest λ for which `B = 0` is optimal.
pub fn critical_lambda(problem: &MvmrProblem) -> f64 {
    let zero = CoefficientMatrix::zeros(problem.dim(), problem.num_tasks(), Role::Estimate);
    let grad = loss_gradient(problem, &zero).expect("zero matrix has matching shape");
    grad.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// Rows whose l2 norm strictly exceeds `zero_tol`.
pub fn support_of(b: &CoefficientMatrix, zero_tol: f64) -> Vec<usize> {
    (0..b.dim()).filter(|&j| b.row_norm(j) > zero_tol).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RecoveryCheck {
    pub support_match: bool,
    pub linf_l2_error: f64,
}

/// Compares an estimate's support against the true support union.
pub fn recovery_check(estimate: &CoefficientMatrix, truth: &GroundTruth, zero_tol: f64) -> Result<RecoveryCheck> {
    let b_star = truth.b_star();
    if estimate.dim() != b_star.dim() || estimate.num_tasks() != b_star.num_tasks() {
        return Err(Error::Dimension("estimate and truth shapes differ".into()));
    }
    let support_match = support_of(estimate, zero_tol) == truth.support_union();
    let diff = CoefficientMatrix::new(estimate.entries() - b_star.entries(), Role::Estimate);
    Ok(RecoveryCheck { support_match, linf_l2_error: linf_l2(&diff) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> CoefficientMatrix {
        CoefficientMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), Role::Estimate).unwrap()
    }

    fn small_problem() -> MvmrProblem {
        let x1 = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, -1.1]);
        let x2 = DMatrix::from_row_slice(3, 2, &[0.2, 1.5, 1.0, -0.4, -0.9, 0.3]);
        let y1 = DVector::from_vec(vec![0.4, -1.2, 0.9]);
        let y2 = DVector::from_vec(vec![1.1, 0.3, -0.6]);
        MvmrProblem::new(vec![x1, x2], vec![y1, y2]).unwrap()
    }

    #[test]
    fn block_norm_examples() {
        assert_eq!(block_norm(&mat(&[&[3.0, 4.0], &[0.0, 0.0]]), 1.0, 2.0).unwrap(), 5.0);
        assert_eq!(block_norm(&mat(&[&[1.0, 0.0], &[0.0, 1.0]]), f64::INFINITY, 2.0).unwrap(), 1.0);
        let v = block_norm(&mat(&[&[1.0, 2.0], &[3.0, 4.0]]), 1.0, 2.0).unwrap();
        assert_relative_eq!(v, 5f64.sqrt() + 5.0, epsilon = 1e-14);
        assert_relative_eq!(v, 7.23607, epsilon = 1e-5);
    }

    #[test]
    fn block_norm_other_pairs() {
        let b = mat(&[&[1.0, -2.0], &[3.0, 4.0]]);
        assert_eq!(block_norm(&b, 1.0, 1.0).unwrap(), 10.0);
        assert_eq!(block_norm(&b, f64::INFINITY, f64::INFINITY).unwrap(), 4.0);
        assert_eq!(block_norm(&b, 1.0, f64::INFINITY).unwrap(), 6.0);
        assert_relative_eq!(block_norm(&b, 2.0, 2.0).unwrap(), 30f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn block_norm_rejects_unsupported_exponent() {
        let b = mat(&[&[1.0]]);
        assert!(matches!(block_norm(&b, 3.0, 2.0), Err(Error::UnsupportedNorm { .. })));
        assert!(matches!(block_norm(&b, 1.0, 0.5), Err(Error::UnsupportedNorm { .. })));
    }

    #[test]
    fn objective_at_zero_is_half_mean_square_response() {
        let prob = small_problem();
        let zero = CoefficientMatrix::zeros(2, 2, Role::Estimate);
        let expected: f64 = prob.responses().iter().map(|y| y.norm_squared()).sum::<f64>() / 6.0;
        assert_relative_eq!(objective(&prob, &zero, 0.7).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn objective_matches_scalar_loop() {
        let prob = small_problem();
        let b = mat(&[&[0.3, -0.7], &[1.2, 0.1]]);
        let lambda = 0.25;
        // Independent scalar evaluation.
        let mut loss = 0.0;
        for k in 0..2 {
            for i in 0..3 {
                let mut fit = 0.0;
                for j in 0..2 {
                    fit += prob.design(k)[(i, j)] * b.get(j, k);
                }
                let r = prob.response(k)[i] - fit;
                loss += r * r;
            }
        }
        let mut pen = 0.0;
        for j in 0..2 {
            pen += (b.get(j, 0).powi(2) + b.get(j, 1).powi(2)).sqrt();
        }
        let expected = loss / 6.0 + lambda * pen;
        assert_relative_eq!(objective(&prob, &b, lambda).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn objective_noiseless_truth_is_pure_penalty() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = mat(&[&[1.0, -1.0], &[0.5, 2.0]]);
        let ys = (0..2).map(|k| &x * b.column(k)).collect();
        let prob = MvmrProblem::new(vec![x.clone(), x], ys).unwrap();
        assert_relative_eq!(objective(&prob, &b, 0.3).unwrap(), 0.3 * l1_l2(&b), epsilon = 1e-13);
    }

    #[test]
    fn objective_shape_mismatch() {
        let prob = small_problem();
        let b = CoefficientMatrix::zeros(3, 2, Role::Estimate);
        assert!(matches!(objective(&prob, &b, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn kkt_zero_above_critical_lambda() {
        let prob = small_problem();
        let zero = CoefficientMatrix::zeros(2, 2, Role::Estimate);
        let crit = critical_lambda(&prob);
        assert_eq!(kkt_residual(&prob, &zero, crit).unwrap(), 0.0);
        assert_eq!(kkt_residual(&prob, &zero, crit * 1.5).unwrap(), 0.0);
        assert!(kkt_residual(&prob, &zero, crit * 0.5).unwrap() > 0.0);
    }

    #[test]
    fn support_examples() {
        assert!(support_of(&CoefficientMatrix::zeros(3, 2, Role::Estimate), 0.0).is_empty());
        let b = mat(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 2.0]]);
        assert_eq!(support_of(&b, 0.0), vec![0, 2]);
        assert_eq!(support_of(&b, 1.5), vec![2]);
    }

    #[test]
    fn ground_truth_derives_supports() {
        let b = mat(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 2.0], &[3.0, 4.0]]);
        let t = GroundTruth::new(b).unwrap();
        assert_eq!(t.support_union(), &[0, 2, 3]);
        assert_eq!(t.per_task_supports(), &[vec![0, 3], vec![2, 3]]);
        assert_eq!(t.b_min(), 1.0);
        assert_eq!(t.b_star().role(), Role::Truth);
    }

    #[test]
    fn recovery_check_examples() {
        let b = mat(&[&[3.0, 4.0], &[0.0, 0.0], &[0.0, 1.0]]);
        let t = GroundTruth::new(b.clone()).unwrap();
        let same = recovery_check(&b, &t, 0.0).unwrap();
        assert_eq!(same, RecoveryCheck { support_match: true, linf_l2_error: 0.0 });
        let zero = recovery_check(&CoefficientMatrix::zeros(3, 2, Role::Estimate), &t, 0.0).unwrap();
        assert!(!zero.support_match);
        assert_eq!(zero.linf_l2_error, 5.0);
    }

    #[test]
    fn noise_spec_sigma_max() {
        let n = NoiseSpec::new(vec![0.5, 1.5, 1.0]).unwrap();
        assert_eq!(n.sigma_max(), 1.5);
        assert_eq!(n.max_variance(), 2.25);
        assert!(NoiseSpec::new(vec![-1.0]).is_err());
        assert!(NoiseSpec::new(vec![]).is_err());
    }

    #[test]
    fn problem_rejects_bad_shapes() {
        let x = DMatrix::zeros(3, 2);
        assert!(MvmrProblem::new(vec![x.clone()], vec![DVector::zeros(4)]).is_err());
        assert!(MvmrProblem::new(vec![x.clone(), DMatrix::zeros(3, 3)], vec![DVector::zeros(3); 2]).is_err());
        assert!(MvmrProblem::new(vec![], vec![]).is_err());
    }

    #[test]
    fn coefficient_csv_and_json_shapes() {
        let b = mat(&[&[0.1, -2.0], &[1.0 / 3.0, 4.0]]);
        let csv = b.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(CoefficientMatrix::from_csv(&csv, Role::Estimate).unwrap(), b);
        let json = serde_json::to_value(&b).unwrap();
        assert_eq!(json["p"], 2);
        assert_eq!(json["K"], 2);
        assert_eq!(json["entries"][1], -2.0);
        assert_eq!(serde_json::from_value::<CoefficientMatrix>(json).unwrap(), b);
    }

    #[test]
    fn problem_json_round_trip() {
        let prob = small_problem();
        let text = serde_json::to_string(&prob).unwrap();
        let back: MvmrProblem = serde_json::from_str(&text).unwrap();
        assert_eq!(back, prob);
    }

    fn matrix_strategy() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
        (1usize..6, 1usize..4).prop_flat_map(|(p, k)| {
            (proptest::collection::vec(-10.0..10.0f64, p * k), proptest::collection::vec(-10.0..10.0f64, p * k))
                .prop_map(move |(a, b)| (DMatrix::from_vec(p, k, a), DMatrix::from_vec(p, k, b)))
        })
    }

    proptest! {
        #[test]
        fn l1_l2_is_a_norm((a, b) in matrix_strategy(), c in -5.0..5.0f64) {
            let ca = CoefficientMatrix::new(a.clone(), Role::Estimate);
            let cb = CoefficientMatrix::new(b.clone(), Role::Estimate);
            let sum = CoefficientMatrix::new(&a + &b, Role::Estimate);
            let na = block_norm(&ca, 1.0, 2.0).unwrap();
            let nb = block_norm(&cb, 1.0, 2.0).unwrap();
            let ns = block_norm(&sum, 1.0, 2.0).unwrap();
            prop_assert!(ns <= (na + nb) * (1.0 + 1e-12) + 1e-300);
            let scaled = block_norm(&CoefficientMatrix::new(&a * c, Role::Estimate), 1.0, 2.0).unwrap();
            prop_assert!((scaled - c.abs() * na).abs() <= 1e-12 * (c.abs() * na).max(1e-300));
            prop_assert!(linf_l2(&ca) <= na * (1.0 + 1e-15));
        }

        #[test]
        fn objective_is_convex_and_nonnegative(
            (b1, b2) in (Just(2usize), Just(2usize)).prop_flat_map(|(p, k)| (
                proptest::collection::vec(-3.0..3.0f64, p * k),
                proptest::collection::vec(-3.0..3.0f64, p * k),
            ).prop_map(move |(a, b)| (DMatrix::from_vec(p, k, a), DMatrix::from_vec(p, k, b)))),
            t in 0.0..1.0f64,
            lambda in 0.0..2.0f64,
        ) {
            let prob = small_problem();
            let f = |m: &DMatrix<f64>| objective(&prob, &CoefficientMatrix::new(m.clone(), Role::Estimate), lambda).unwrap();
            let mix = &b1 * t + &b2 * (1.0 - t);
            prop_assert!(f(&b1) >= 0.0);
            prop_assert!(f(&mix) <= t * f(&b1) + (1.0 - t) * f(&b2) + 1e-10);
        }
    }
}
