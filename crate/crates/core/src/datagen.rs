//! Synthetic ensembles: covariance sets, true coefficient matrices and
//! sampled problem instances.
//!
//! The support and value formulas are written with 1-based feature indices
//! (`j = 8t + 1`, `j = 16t + 2`, ...). They are evaluated 1-based in
//! [`task_supports`] and converted to 0-based indices right there; every
//! other index in the crate is 0-based.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CoefficientMatrix, GroundTruth, MvmrProblem, NoiseSpec, Role};
use crate::rng::rng_from_seed;

pub const DEFAULT_SPD_FLOOR: f64 = 0.05;
pub const DEFAULT_SIGMA_W: f64 = 0.5;
pub const DEFAULT_PERTURBATION: f64 = 1.0 / 16.0;

/// `K` symmetric positive-definite `p × p` covariance matrices.
#[derive(Clone, Debug)]
pub struct CovarianceSet {
    matrices: Vec<DMatrix<f64>>,
    min_eigenvalues: Vec<f64>,
    max_eigenvalues: Vec<f64>,
    shifts: Vec<f64>,
    cholesky_factors: Vec<DMatrix<f64>>,
}

impl CovarianceSet {
    /// Validates symmetry (to 1e-12) and positive definiteness of every matrix.
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let shifts = vec![0.0; matrices.len()];
        CovarianceSet::with_shifts(matrices, shifts)
    }

    fn with_shifts(matrices: Vec<DMatrix<f64>>, shifts: Vec<f64>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::Dimension("covariance set needs at least one matrix".into()));
        }
        let p = matrices[0].nrows();
        let mut min_eigenvalues = Vec::with_capacity(matrices.len());
        let mut max_eigenvalues = Vec::with_capacity(matrices.len());
        let mut cholesky_factors = Vec::with_capacity(matrices.len());
        for (k, m) in matrices.iter().enumerate() {
            if m.shape() != (p, p) {
                return Err(Error::Dimension(format!("covariance {k} is not {p}x{p}")));
            }
            if linalg::max_asymmetry(m) > 1e-12 {
                return Err(Error::NotSpd(format!("covariance {k} is not symmetric")));
            }
            let (lo, hi) = linalg::eigen_extremes(m);
            if !(lo > 0.0) {
                return Err(Error::NotSpd(format!("covariance {k} has minimum eigenvalue {lo}")));
            }
            let chol = linalg::cholesky(m, &format!("covariance {k}")).map_err(|e| Error::NotSpd(e.to_string()))?;
            min_eigenvalues.push(lo);
            max_eigenvalues.push(hi);
            cholesky_factors.push(chol.unpack());
        }
        Ok(CovarianceSet { matrices, min_eigenvalues, max_eigenvalues, shifts, cholesky_factors })
    }

    /// The same matrix for all `k` tasks.
    pub fn shared(sigma: DMatrix<f64>, k: usize) -> Result<Self> {
        CovarianceSet::new(vec![sigma; k])
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn matrix(&self, k: usize) -> &DMatrix<f64> {
        &self.matrices[k]
    }

    pub fn num_tasks(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// Cached per-matrix minimum eigenvalue (the SPD certificate).
    pub fn min_eigenvalues(&self) -> &[f64] {
        &self.min_eigenvalues
    }

    pub fn max_eigenvalues(&self) -> &[f64] {
        &self.max_eigenvalues
    }

    /// Diagonal shift added to each matrix to reach the SPD floor (0 if none).
    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    /// Lower Cholesky factor `L⁽ᵏ⁾` with `Σ⁽ᵏ⁾ = L⁽ᵏ⁾L⁽ᵏ⁾ᵀ`.
    pub fn cholesky_factor(&self, k: usize) -> &DMatrix<f64> {
        &self.cholesky_factors[k]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceModel {
    /// `Σ⁽ᵏ⁾ = I` for all tasks.
    Identity,
    /// Unit diagonal and every adjacent off-diagonal equal to 1, shared by all tasks.
    TridiagShared,
    /// Unit diagonal; entry `(a, a+1)` is `1 + 1/k` when `a` is odd and
    /// `1 − 0.8/k` when `a` is even (1-based `a` and `k`).
    TridiagPerTask,
}

impl CovarianceModel {
    pub fn tag(self) -> &'static str {
        match self {
            CovarianceModel::Identity => "identity",
            CovarianceModel::TridiagShared => "tridiag_shared",
            CovarianceModel::TridiagPerTask => "tridiag_per_task",
        }
    }
}

fn tridiagonal(p: usize, off_diagonal: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let mut t = DMatrix::identity(p, p);
    for i in 0..p - 1 {
        // 0-based i is the 1-based index a = i + 1.
        let v = off_diagonal(i + 1);
        t[(i, i + 1)] = v;
        t[(i + 1, i)] = v;
    }
    t
}

/// Builds the covariance set of `model`, shifting the diagonal of any
/// indefinite or ill-conditioned tridiagonal matrix up to `spd_floor`.
pub fn build_covariance(model: CovarianceModel, p: usize, k: usize, spd_floor: f64) -> Result<CovarianceSet> {
    if k == 0 || p == 0 {
        return Err(Error::Dimension("p and K must be positive".into()));
    }
    if !(spd_floor > 0.0) {
        return Err(Error::Config(format!("spd_floor must be positive, got {spd_floor}")));
    }
    let raw: Vec<DMatrix<f64>> = match model {
        CovarianceModel::Identity => return CovarianceSet::new(vec![DMatrix::identity(p, p); k]),
        CovarianceModel::TridiagShared | CovarianceModel::TridiagPerTask if p < 2 => {
            return Err(Error::Dimension(format!("tridiagonal covariance needs p >= 2, got {p}")));
        }
        CovarianceModel::TridiagShared => vec![tridiagonal(p, |_| 1.0); k],
        CovarianceModel::TridiagPerTask => (1..=k)
            .map(|task| {
                let kf = task as f64;
                tridiagonal(p, |a| if a % 2 == 1 { 1.0 + 1.0 / kf } else { 1.0 - 0.8 / kf })
            })
            .collect(),
    };
    let mut shifted = Vec::with_capacity(k);
    let mut shifts = Vec::with_capacity(k);
    for t in raw {
        let lo = linalg::min_eigenvalue(&t);
        if lo < spd_floor {
            let shift = spd_floor - lo;
            shifted.push(t + DMatrix::identity(p, p) * shift);
            shifts.push(shift);
        } else {
            shifted.push(t);
            shifts.push(0.0);
        }
    }
    CovarianceSet::with_shifts(shifted, shifts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    /// Every task uses `scale` on its support.
    IdenticalUniform,
    /// Shared support `{16t} ∪ {16t+8}` with values `scale·(1 ± k·δ)`.
    VaryingSameSupport,
    /// Two tasks on the 24-periodic overlapping supports with unit
    /// non-shared entries and `scale·(1 ± δ)` on the shared entry.
    OverlapModel,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportRule {
    /// All tasks: `{8t + 1}`.
    #[serde(rename = "stride_8")]
    Stride8,
    /// All tasks: `{16t : t ≥ 1} ∪ {16t + 8 : t ≥ 0}`.
    #[serde(rename = "stride_16_pair")]
    Stride16Pair,
    /// Task `k`: `{16t + k}`; disjoint for `K ≤ 16`.
    #[serde(rename = "disjoint_16")]
    Disjoint16,
    /// Task `k`: `{24t + k, 24t + k + 1}`; consecutive tasks share one index per block.
    #[serde(rename = "overlap_24")]
    Overlap24,
    /// Explicit 1-based per-task index sets.
    Custom(Vec<Vec<usize>>),
}

impl SupportRule {
    pub fn tag(&self) -> &'static str {
        match self {
            SupportRule::Stride8 => "stride_8",
            SupportRule::Stride16Pair => "stride_16_pair",
            SupportRule::Disjoint16 => "disjoint_16",
            SupportRule::Overlap24 => "overlap_24",
            SupportRule::Custom(_) => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientModel {
    pub kind: CoefficientKind,
    pub support_rule: SupportRule,
    /// Step `δ` of the `1 ± k·δ` perturbation.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    /// Entry scale; `None` means `1/√K`.
    #[serde(default)]
    pub scale: Option<f64>,
}

fn default_perturbation() -> f64 {
    DEFAULT_PERTURBATION
}

impl CoefficientModel {
    pub fn new(kind: CoefficientKind, support_rule: SupportRule) -> Self {
        CoefficientModel { kind, support_rule, perturbation: DEFAULT_PERTURBATION, scale: None }
    }

    pub fn identical(support_rule: SupportRule) -> Self {
        CoefficientModel::new(CoefficientKind::IdenticalUniform, support_rule)
    }

    pub fn scale_for(&self, k: usize) -> f64 {
        self.scale.unwrap_or(1.0 / (k as f64).sqrt())
    }

    pub fn tag(&self) -> String {
        let kind = match self.kind {
            CoefficientKind::IdenticalUniform => "identical_uniform",
            CoefficientKind::VaryingSameSupport => "varying_same_support",
            CoefficientKind::OverlapModel => "overlap_model",
        };
        format!("{kind}/{}", self.support_rule.tag())
    }
}

/// `{ j ≤ p : j = period·t + offset, t ≥ t_min }` converted to 0-based.
fn periodic(p: usize, period: usize, offset: usize, t_min: usize) -> Vec<usize> {
    (t_min..).map(|t| period * t + offset).take_while(|&j| j <= p).filter(|&j| j >= 1).map(|j| j - 1).collect()
}

fn merge(mut a: Vec<usize>, b: Vec<usize>) -> Vec<usize> {
    a.extend(b);
    a.sort_unstable();
    a.dedup();
    a
}

/// Per-task 0-based supports of a rule.
///
/// `16t` is taken with `t ≥ 1` since `t = 0` would name the invalid index 0.
pub fn task_supports(rule: &SupportRule, p: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    let need_multiple = |m: usize| -> Result<()> {
        if !p.is_multiple_of(m) || p < m {
            Err(Error::Config(format!("support rule {} needs p divisible by {m}, got p = {p}", rule.tag())))
        } else {
            Ok(())
        }
    };
    let supports = match rule {
        SupportRule::Stride8 => {
            need_multiple(8)?;
            vec![periodic(p, 8, 1, 0); k]
        }
        SupportRule::Stride16Pair => {
            need_multiple(16)?;
            vec![merge(periodic(p, 16, 0, 1), periodic(p, 16, 8, 0)); k]
        }
        SupportRule::Disjoint16 => {
            need_multiple(16)?;
            if k > 16 {
                return Err(Error::Config("disjoint_16 supports at most 16 tasks".into()));
            }
            (1..=k).map(|task| periodic(p, 16, task, 0)).collect()
        }
        SupportRule::Overlap24 => {
            if k + 1 > 24 {
                return Err(Error::Config("overlap_24 supports at most 23 tasks".into()));
            }
            if p < k + 1 {
                return Err(Error::Config(format!("overlap_24 with K = {k} needs p >= {}", k + 1)));
            }
            (1..=k).map(|task| merge(periodic(p, 24, task, 0), periodic(p, 24, task + 1, 0))).collect()
        }
        SupportRule::Custom(sets) => {
            if sets.len() != k {
                return Err(Error::Config(format!("custom support lists {} tasks, K = {k}", sets.len())));
            }
            sets.iter()
                .map(|set| {
                    let mut out = Vec::with_capacity(set.len());
                    for &j in set {
                        if j == 0 || j > p {
                            return Err(Error::Config(format!("custom index {j} outside 1..={p}")));
                        }
                        out.push(j - 1);
                    }
                    out.sort_unstable();
                    out.dedup();
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    if supports.iter().all(Vec::is_empty) {
        return Err(Error::Config(format!("support rule {} produces an empty support for p = {p}", rule.tag())));
    }
    Ok(supports)
}

/// Builds `B*` and its supports from a coefficient model.
pub fn build_truth(model: &CoefficientModel, p: usize, k: usize) -> Result<GroundTruth> {
    if p == 0 || k == 0 {
        return Err(Error::Dimension("p and K must be positive".into()));
    }
    let scale = model.scale_for(k);
    if !(scale.is_finite() && scale != 0.0) {
        return Err(Error::Config(format!("coefficient scale must be finite and nonzero, got {scale}")));
    }
    let delta = model.perturbation;
    let mut b = DMatrix::zeros(p, k);
    match model.kind {
        CoefficientKind::IdenticalUniform => {
            for (task, support) in task_supports(&model.support_rule, p, k)?.iter().enumerate() {
                for &j in support {
                    b[(j, task)] = scale;
                }
            }
        }
        CoefficientKind::VaryingSameSupport => {
            if model.support_rule != SupportRule::Stride16Pair {
                return Err(Error::Config("varying_same_support requires the stride_16_pair rule".into()));
            }
            if !(1.0 - k as f64 * delta > 0.0) {
                return Err(Error::Config(format!("1 - K·δ must stay positive (K = {k}, δ = {delta})")));
            }
            task_supports(&model.support_rule, p, k)?;
            for task in 1..=k {
                let kd = task as f64 * delta;
                for j in periodic(p, 16, 0, 1) {
                    b[(j, task - 1)] = scale * (1.0 + kd);
                }
                for j in periodic(p, 16, 8, 0) {
                    b[(j, task - 1)] = scale * (1.0 - kd);
                }
            }
        }
        CoefficientKind::OverlapModel => {
            if model.support_rule != SupportRule::Overlap24 || k != 2 {
                return Err(Error::Config("overlap_model requires K = 2 and the overlap_24 rule".into()));
            }
            task_supports(&model.support_rule, p, k)?;
            for j in periodic(p, 24, 1, 0) {
                b[(j, 0)] = 1.0;
            }
            for j in periodic(p, 24, 2, 0) {
                b[(j, 0)] = scale * (1.0 + delta);
                b[(j, 1)] = scale * (1.0 - delta);
            }
            for j in periodic(p, 24, 3, 0) {
                b[(j, 1)] = 1.0;
            }
        }
    }
    GroundTruth::new(CoefficientMatrix::new(b, Role::Truth))
}

/// Draws one problem instance: rows of `X⁽ᵏ⁾` are `L⁽ᵏ⁾z` with `z ~ N(0, I)`,
/// `W⁽ᵏ⁾` has i.i.d. `N(0, σ_k²)` entries and `Y⁽ᵏ⁾ = X⁽ᵏ⁾β*⁽ᵏ⁾ + W⁽ᵏ⁾`.
///
/// Draw order: for each task, the `n × p` design entries row by row, then
/// the `n` noise entries.
pub fn sample_problem(
    truth: &GroundTruth,
    covs: &CovarianceSet,
    noise: &NoiseSpec,
    n: usize,
    seed: u64,
) -> Result<MvmrProblem> {
    let (p, k) = (truth.dim(), truth.num_tasks());
    if n == 0 {
        return Err(Error::Dimension("n must be at least 1".into()));
    }
    if covs.dim() != p || covs.num_tasks() != k {
        return Err(Error::Dimension(format!(
            "covariance set is {}x{} for {} tasks, truth needs {p}x{p} for {k}",
            covs.dim(),
            covs.dim(),
            covs.num_tasks()
        )));
    }
    if noise.num_tasks() != k {
        return Err(Error::Dimension(format!("noise spec has {} tasks, truth has {k}", noise.num_tasks())));
    }
    let mut rng = rng_from_seed(seed);
    let mut designs = Vec::with_capacity(k);
    let mut responses = Vec::with_capacity(k);
    let mut noises = Vec::with_capacity(k);
    for task in 0..k {
        let mut z = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                z[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        let l = covs.cholesky_factor(task);
        let x = if l.is_identity(0.0) { z } else { z * l.transpose() };
        let sigma = noise.sigma_w()[task];
        let w = DVector::from_fn(n, |_, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            sigma * e
        });
        let beta = truth.b_star().column(task);
        let y = &x * beta + &w;
        designs.push(x);
        responses.push(y);
        noises.push(w);
    }
    MvmrProblem::new(designs, responses)?.with_noise(noises)
}

/// `3.5·√(ln(p − s)·ln(s)/n)` with natural logarithms.
pub fn lambda_rule(p: usize, s: usize, n: usize) -> Result<f64> {
    if s < 2 || p <= s {
        return Err(Error::Domain(format!("lambda rule needs p > s >= 2, got p = {p}, s = {s}")));
    }
    if n == 0 {
        return Err(Error::Domain("lambda rule needs n >= 1".into()));
    }
    let (p, s, n) = (p as f64, s as f64, n as f64);
    Ok(3.5 * ((p - s).ln() * s.ln() / n).sqrt())
}

/// How the regularization weight of an experiment is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaRule {
    Named(NamedLambdaRule),
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedLambdaRule {
    /// [`lambda_rule`].
    Paper35,
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Named(NamedLambdaRule::Paper35)
    }
}

impl LambdaRule {
    pub fn evaluate(&self, p: usize, s: usize, n: usize) -> Result<f64> {
        match *self {
            LambdaRule::Named(NamedLambdaRule::Paper35) => lambda_rule(p, s, n),
            LambdaRule::Fixed(v) if v > 0.0 && v.is_finite() => Ok(v),
            LambdaRule::Fixed(v) => Err(Error::Config(format!("fixed lambda must be positive, got {v}"))),
        }
    }
}
