//! Experiment configuration files (JSON or TOML).
//!
//! ```toml
//! p = [64, 128]            # integer or list
//! K = 2                    # integer or list
//! alpha = 0.125            # or `s = 16`; default 1/8
//! covariance_model = "identity"
//! sigma_w = 0.5            # scalar or one value per task
//! spd_floor = 0.05
//! lambda_rule = "paper35"  # or a fixed positive number
//! trials = 100
//! base_seed = 1
//! v = 0.1
//!
//! [coefficient_model]
//! kind = "identical_uniform"
//! support_rule = "stride_8"
//!
//! [n_grid]                 # or `n_grid = [50, 100, 200]`
//! theta_min = 0.25
//! theta_max = 4.0
//! points = 24
//! ```
//!
//! A rescaled grid places `points` log-spaced values of `θ` in
//! `[theta_min, theta_max]` and uses `n = round(θ·2ψ·ln(p−s))`.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::datagen::{
    build_covariance, build_truth, CoefficientModel, CovarianceModel, CovarianceSet, LambdaRule, DEFAULT_SIGMA_W,
    DEFAULT_SPD_FLOOR,
};
use crate::error::{Error, Result};
use crate::model::{GroundTruth, NoiseSpec};
use crate::solver::SolverConfig;
use crate::theory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> From<OneOrMany<T>> for Vec<T> {
    fn from(v: OneOrMany<T>) -> Self {
        match v {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(xs) => xs,
        }
    }
}

fn one_or_many<'de, D, T>(de: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    OneOrMany::deserialize(de).map(Vec::from)
}

/// Sample sizes of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NGrid {
    Explicit(Vec<usize>),
    Rescaled {
        #[serde(default = "default_theta_min")]
        theta_min: f64,
        #[serde(default = "default_theta_max")]
        theta_max: f64,
        #[serde(default = "default_points")]
        points: usize,
    },
}

fn default_theta_min() -> f64 {
    0.25
}
fn default_theta_max() -> f64 {
    4.0
}
fn default_points() -> usize {
    24
}

impl Default for NGrid {
    fn default() -> Self {
        NGrid::Rescaled { theta_min: default_theta_min(), theta_max: default_theta_max(), points: default_points() }
    }
}

impl NGrid {
    /// Sample sizes for an ensemble with the given `ψ`, sorted and deduplicated.
    pub fn sample_sizes(&self, psi: f64, p: usize, s: usize) -> Vec<usize> {
        let mut ns: Vec<usize> = match self {
            NGrid::Explicit(ns) => ns.clone(),
            NGrid::Rescaled { theta_min, theta_max, points } => {
                let scale = 2.0 * psi * ((p - s) as f64).ln();
                let (lo, hi) = (theta_min.ln(), theta_max.ln());
                (0..*points)
                    .map(|i| {
                        let frac = if *points == 1 { 0.0 } else { i as f64 / (*points - 1) as f64 };
                        let theta = (lo + frac * (hi - lo)).exp();
                        ((theta * scale).round() as usize).max(1)
                    })
                    .collect()
            }
        };
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    fn validate(&self) -> Result<()> {
        match self {
            NGrid::Explicit(ns) if ns.is_empty() => Err(Error::Config("n_grid list is empty".into())),
            NGrid::Explicit(ns) if ns.contains(&0) => Err(Error::Config("n_grid entries must be >= 1".into())),
            NGrid::Explicit(_) => Ok(()),
            NGrid::Rescaled { theta_min, theta_max, points } => {
                if !(*theta_min > 0.0 && theta_max >= theta_min && theta_max.is_finite()) {
                    return Err(Error::Config(format!(
                        "need 0 < theta_min <= theta_max, got [{theta_min}, {theta_max}]"
                    )));
                }
                if *points == 0 {
                    return Err(Error::Config("n_grid needs at least one point".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "p", deserialize_with = "one_or_many")]
    pub p_list: Vec<usize>,
    #[serde(rename = "K", alias = "k", deserialize_with = "one_or_many")]
    pub k_list: Vec<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub s: Option<usize>,
    pub coefficient_model: CoefficientModel,
    #[serde(default = "default_covariance")]
    pub covariance_model: CovarianceModel,
    #[serde(default = "default_sigma", deserialize_with = "one_or_many")]
    pub sigma_w: Vec<f64>,
    #[serde(default = "default_spd_floor")]
    pub spd_floor: f64,
    #[serde(default)]
    pub lambda_rule: LambdaRule,
    #[serde(default)]
    pub n_grid: NGrid,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_v")]
    pub v: f64,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_covariance() -> CovarianceModel {
    CovarianceModel::Identity
}
fn default_sigma() -> Vec<f64> {
    vec![DEFAULT_SIGMA_W]
}
fn default_spd_floor() -> f64 {
    DEFAULT_SPD_FLOOR
}
fn default_trials() -> usize {
    100
}
fn default_v() -> f64 {
    0.1
}

pub const DEFAULT_ALPHA: f64 = 0.125;

/// One `(p, K)` combination with its generated truth and covariances.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub p: usize,
    pub k: usize,
    /// `α·p` (or the explicit `s`).
    pub s_declared: usize,
    pub truth: GroundTruth,
    pub covs: CovarianceSet,
    pub noise: NoiseSpec,
    pub psi: f64,
}

impl Ensemble {
    /// Size of the support union actually generated.
    pub fn s(&self) -> usize {
        self.truth.sparsity()
    }
}

impl ExperimentConfig {
    /// A config with every optional key at its default.
    pub fn new(p_list: Vec<usize>, k_list: Vec<usize>, coefficient_model: CoefficientModel) -> Self {
        ExperimentConfig {
            p_list,
            k_list,
            alpha: None,
            s: None,
            coefficient_model,
            covariance_model: default_covariance(),
            sigma_w: default_sigma(),
            spd_floor: default_spd_floor(),
            lambda_rule: LambdaRule::default(),
            n_grid: NGrid::default(),
            trials: default_trials(),
            base_seed: 0,
            v: default_v(),
            solver: SolverConfig::default(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.json` or `.toml` file; other extensions are sniffed.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            Some("toml") => Self::from_toml_str(&text),
            _ if text.trim_start().starts_with('{') => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    /// `s` declared for dimension `p`.
    pub fn declared_sparsity(&self, p: usize) -> Result<usize> {
        match (self.s, self.alpha) {
            (Some(_), Some(_)) => Err(Error::Config("give either alpha or s, not both".into())),
            (Some(s), None) => {
                if s == 0 || s >= p {
                    return Err(Error::Config(format!("s must lie in 1..p, got s = {s}, p = {p}")));
                }
                Ok(s)
            }
            (None, alpha) => {
                let alpha = alpha.unwrap_or(DEFAULT_ALPHA);
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
                }
                let s = alpha * p as f64;
                let rounded = s.round();
                if (s - rounded).abs() > 1e-9 || rounded < 1.0 {
                    return Err(Error::Config(format!("alpha·p = {s} is not a positive integer for p = {p}")));
                }
                Ok(rounded as usize)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_list.is_empty() || self.k_list.is_empty() {
            return Err(Error::Config("p and K must each list at least one value".into()));
        }
        if self.k_list.contains(&0) {
            return Err(Error::Config("K must be at least 1".into()));
        }
        for &p in &self.p_list {
            self.declared_sparsity(p)?;
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.sigma_w.len() != 1 && self.k_list.iter().any(|&k| k != self.sigma_w.len()) {
            return Err(Error::Config("sigma_w must be a scalar or have one entry per task".into()));
        }
        if !(self.spd_floor > 0.0) {
            return Err(Error::Config(format!("spd_floor must be positive, got {}", self.spd_floor)));
        }
        if !(self.v > 0.0 && self.v < 1.0) {
            return Err(Error::Config(format!("v must lie in (0, 1), got {}", self.v)));
        }
        if let LambdaRule::Fixed(l) = self.lambda_rule {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("fixed lambda must be positive, got {l}")));
            }
        }
        self.n_grid.validate()
    }

    fn noise_for(&self, k: usize) -> Result<NoiseSpec> {
        if self.sigma_w.len() == 1 {
            NoiseSpec::uniform(self.sigma_w[0], k)
        } else {
            NoiseSpec::new(self.sigma_w.clone())
        }
    }

    /// Builds one ensemble.
    pub fn ensemble(&self, p: usize, k: usize) -> Result<Ensemble> {
        let s_declared = self.declared_sparsity(p)?;
        let truth = build_truth(&self.coefficient_model, p, k)?;
        if truth.sparsity() >= p {
            return Err(Error::Config(format!("support union fills all of p = {p}")));
        }
        let covs = build_covariance(self.covariance_model, p, k, self.spd_floor)?;
        let psi = theory::psi(truth.b_star(), &covs, truth.support_union())?;
        Ok(Ensemble { p, k, s_declared, truth, covs, noise: self.noise_for(k)?, psi })
    }

    /// Ensembles in `p`-major, then `K`, order.
    pub fn ensembles(&self) -> Result<Vec<Ensemble>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.p_list.len() * self.k_list.len());
        for &p in &self.p_list {
            for &k in &self.k_list {
                out.push(self.ensemble(p, k)?);
            }
        }
        Ok(out)
    }
}
