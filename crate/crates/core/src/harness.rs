//! Monte-Carlo sweeps of support-recovery probability over sample size.
//!
//! Every `(p, K, n)` cell runs `trials` independent problems. Trial `t` of a
//! cell draws from `base_seed ⊕ hash(p, K, n, t)`, so a cell's outcome does
//! not depend on the rest of the grid, and results are identical for any
//! worker count: per-trial outcomes are collected in index order before they
//! are summed.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Ensemble, ExperimentConfig};
use crate::datagen::sample_problem;
use crate::error::{Error, Result};
use crate::model::recovery_check;
use crate::rng::{hash_words, trial_seed, RNG_ALGORITHM};
use crate::solver::{solve, SolverConfig};
use crate::theory;

/// Which normalization of `n` the `theta` column holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AxisMode {
    /// `θ = n/(2ψ·ln(p−s))`
    #[default]
    ThetaPsi,
    /// `θ = n/(s·ln(p−s))`
    ThetaSlog,
}

impl AxisMode {
    pub fn theta(self, n: usize, psi: f64, p: usize, s: usize) -> f64 {
        let log_term = ((p - s) as f64).ln();
        match self {
            AxisMode::ThetaPsi => n as f64 / (2.0 * psi * log_term),
            AxisMode::ThetaSlog => n as f64 / (s as f64 * log_term),
        }
    }
}

/// Fixed CSV column order.
pub const CSV_COLUMNS: [&str; 15] = [
    "p",
    "K",
    "s",
    "coefficient_model",
    "covariance_model",
    "n",
    "lambda",
    "psi",
    "theta",
    "successes",
    "nonconverged",
    "trials",
    "success_prob",
    "mean_linf_l2_error",
    "mean_solve_iters",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub s: usize,
    pub coefficient_model: String,
    pub covariance_model: String,
    pub n: usize,
    pub lambda: f64,
    pub psi: f64,
    pub theta: f64,
    pub successes: usize,
    pub nonconverged: usize,
    pub trials: usize,
    pub success_prob: f64,
    pub mean_linf_l2_error: f64,
    pub mean_solve_iters: f64,
}

impl SweepRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.p,
            self.k,
            self.s,
            self.coefficient_model,
            self.covariance_model,
            self.n,
            self.lambda,
            self.psi,
            self.theta,
            self.successes,
            self.nonconverged,
            self.trials,
            self.success_prob,
            self.mean_linf_l2_error,
            self.mean_solve_iters
        )
    }

    fn same_curve(&self, other: &SweepRow) -> bool {
        self.p == other.p
            && self.k == other.k
            && self.coefficient_model == other.coefficient_model
            && self.covariance_model == other.covariance_model
    }
}

/// Theoretical thresholds for one `(p, K)`; `None` where undefined
/// (`γ ≤ 0` or `|Sᶜ| < 2`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOverlay {
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub s: usize,
    pub psi: f64,
    pub gamma: f64,
    pub rho_u: f64,
    pub rho_l: Option<f64>,
    pub v: f64,
    pub n_achievability: Option<f64>,
    pub n_converse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: AxisMode,
    pub trials: usize,
    pub base_seed: u64,
    pub rng: String,
    pub rows: Vec<SweepRow>,
    pub threshold_overlay: Vec<ThresholdOverlay>,
}

/// Outcome of a single simulated problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    pub success: bool,
    pub converged: bool,
    pub linf_l2_error: f64,
    pub iterations: usize,
}

/// Seed key of a `(p, K, n)` cell.
pub fn cell_key(p: usize, k: usize, n: usize) -> u64 {
    hash_words(&[p as u64, k as u64, n as u64])
}

/// Samples, solves and scores one problem. Solver failures of any kind count
/// as non-converged failures.
pub fn run_trial(ensemble: &Ensemble, n: usize, lambda: f64, seed: u64, solver: &SolverConfig) -> Result<TrialOutcome> {
    let problem = sample_problem(&ensemble.truth, &ensemble.covs, &ensemble.noise, n, seed)?;
    let report = match solve(&problem, lambda, solver) {
        Ok(r) => r,
        Err(_) => return Ok(TrialOutcome { success: false, converged: false, linf_l2_error: f64::NAN, iterations: 0 }),
    };
    let check = recovery_check(&report.estimate, &ensemble.truth, 0.0)?;
    Ok(TrialOutcome {
        success: report.converged && check.support_match,
        converged: report.converged,
        linf_l2_error: check.linf_l2_error,
        iterations: report.iterations,
    })
}

fn overlay(e: &Ensemble, v: f64) -> Result<ThresholdOverlay> {
    let support = e.truth.support_union();
    let irr = theory::irrepresentability(&e.covs, support)?;
    let rho = theory::rho_bounds(&e.covs, support)?;
    let (n_ach, n_conv) = match rho.rho_l {
        Some(rho_l) if irr.gamma > 0.0 => {
            let t = theory::thresholds(e.psi, e.p, e.s(), rho.rho_u, rho_l, irr.gamma.min(1.0), v)?;
            (Some(t.n_achievability), Some(t.n_converse))
        }
        _ => (None, None),
    };
    Ok(ThresholdOverlay {
        p: e.p,
        k: e.k,
        s: e.s(),
        psi: e.psi,
        gamma: irr.gamma,
        rho_u: rho.rho_u,
        rho_l: rho.rho_l,
        v,
        n_achievability: n_ach,
        n_converse: n_conv,
    })
}

/// Runs the sweep on at most `jobs` worker threads (`None`: rayon's default).
pub fn run_sweep(config: &ExperimentConfig, jobs: Option<usize>) -> Result<SweepResult> {
    let ensembles = config.ensembles()?;
    match jobs {
        Some(0) => Err(Error::Config("jobs must be at least 1".into())),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            pool.install(|| sweep_ensembles(config, &ensembles))
        }
        None => sweep_ensembles(config, &ensembles),
    }
}

struct Cell {
    ensemble: usize,
    n: usize,
    lambda: f64,
}

fn sweep_ensembles(config: &ExperimentConfig, ensembles: &[Ensemble]) -> Result<SweepResult> {
    let mut cells = Vec::new();
    for (i, e) in ensembles.iter().enumerate() {
        for n in config.n_grid.sample_sizes(e.psi, e.p, e.s()) {
            let lambda = config.lambda_rule.evaluate(e.p, e.s_declared, n)?;
            cells.push(Cell { ensemble: i, n, lambda });
        }
    }
    let trials = config.trials;
    let outcomes: Vec<TrialOutcome> = (0..cells.len() * trials)
        .into_par_iter()
        .map(|job| {
            let cell = &cells[job / trials];
            let e = &ensembles[cell.ensemble];
            let seed = trial_seed(config.base_seed, cell_key(e.p, e.k, cell.n), (job % trials) as u64);
            run_trial(e, cell.n, cell.lambda, seed, &config.solver)
        })
        .collect::<Result<_>>()?;

    let coefficient_model = config.coefficient_model.tag();
    let covariance_model = config.covariance_model.tag().to_string();
    let rows = cells
        .iter()
        .zip(outcomes.chunks(trials))
        .map(|(cell, chunk)| {
            let e = &ensembles[cell.ensemble];
            let successes = chunk.iter().filter(|o| o.success).count();
            let nonconverged = chunk.iter().filter(|o| !o.converged).count();
            let mean = |f: fn(&TrialOutcome) -> f64| chunk.iter().map(f).sum::<f64>() / trials as f64;
            SweepRow {
                p: e.p,
                k: e.k,
                s: e.s(),
                coefficient_model: coefficient_model.clone(),
                covariance_model: covariance_model.clone(),
                n: cell.n,
                lambda: cell.lambda,
                psi: e.psi,
                theta: AxisMode::ThetaPsi.theta(cell.n, e.psi, e.p, e.s()),
                successes,
                nonconverged,
                trials,
                success_prob: successes as f64 / trials as f64,
                mean_linf_l2_error: mean(|o| o.linf_l2_error),
                mean_solve_iters: mean(|o| o.iterations as f64),
            }
        })
        .collect();
    let threshold_overlay = ensembles.iter().map(|e| overlay(e, config.v)).collect::<Result<_>>()?;
    Ok(SweepResult {
        axis: AxisMode::ThetaPsi,
        trials,
        base_seed: config.base_seed,
        rng: RNG_ALGORITHM.to_string(),
        rows,
        threshold_overlay,
    })
}

/// Recomputes the `theta` column under `mode`.
pub fn rescale_axis(result: &SweepResult, mode: AxisMode) -> SweepResult {
    let mut out = result.clone();
    out.axis = mode;
    for row in &mut out.rows {
        row.theta = mode.theta(row.n, row.psi, row.p, row.s);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingStatus {
    Defined,
    /// The curve never reaches the level.
    NeverReached,
    /// The curve is already at or above the level at the smallest `n`.
    AboveAtStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub coefficient_model: String,
    pub covariance_model: String,
    pub level: f64,
    pub status: CrossingStatus,
    pub n: Option<f64>,
    pub theta: Option<f64>,
    /// `√(L(1−L)/trials)` divided by the local slope of the curve.
    pub n_std_error: Option<f64>,
}

impl Crossing {
    pub fn is_defined(&self) -> bool {
        self.status == CrossingStatus::Defined
    }
}

/// Splits rows into curves (consecutive rows of one `(p, K, models)` cell
/// group), each sorted by `n`.
pub fn curves(result: &SweepResult) -> Vec<Vec<&SweepRow>> {
    let mut out: Vec<Vec<&SweepRow>> = Vec::new();
    for row in &result.rows {
        match out.iter_mut().find(|c| c[0].same_curve(row)) {
            Some(c) => c.push(row),
            None => out.push(vec![row]),
        }
    }
    for c in &mut out {
        c.sort_by_key(|r| r.n);
    }
    out
}

/// First upward crossing of `level` per curve, linearly interpolated.
pub fn crossing_point(result: &SweepResult, level: f64) -> Result<Vec<Crossing>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(curves(result).into_iter().map(|c| crossing_of_curve(&c, level)).collect())
}

fn crossing_of_curve(curve: &[&SweepRow], level: f64) -> Crossing {
    let first = curve[0];
    let mut crossing = Crossing {
        p: first.p,
        k: first.k,
        coefficient_model: first.coefficient_model.clone(),
        covariance_model: first.covariance_model.clone(),
        level,
        status: CrossingStatus::NeverReached,
        n: None,
        theta: None,
        n_std_error: None,
    };
    let Some(i) = curve.iter().position(|r| r.success_prob >= level) else {
        return crossing;
    };
    if i == 0 {
        crossing.status = CrossingStatus::AboveAtStart;
        return crossing;
    }
    let (a, b) = (curve[i - 1], curve[i]);
    let frac = (level - a.success_prob) / (b.success_prob - a.success_prob);
    let dn = b.n as f64 - a.n as f64;
    let slope = (b.success_prob - a.success_prob) / dn;
    crossing.status = CrossingStatus::Defined;
    crossing.n = Some(a.n as f64 + frac * dn);
    crossing.theta = Some(a.theta + frac * (b.theta - a.theta));
    crossing.n_std_error = Some((level * (1.0 - level) / a.trials as f64).sqrt() / slope);
    crossing
}

/// Largest drop in success probability between adjacent grid points of any curve.
pub fn max_adjacent_drop(result: &SweepResult) -> f64 {
    curves(result).iter().flat_map(|c| c.windows(2).map(|w| w[0].success_prob - w[1].success_prob)).fold(0.0, f64::max)
}

pub fn to_csv(result: &SweepResult) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for row in &result.rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

pub fn to_json(result: &SweepResult) -> Result<String> {
    Ok(serde_json::to_string_pretty(result)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.1}"))
}

/// Markdown summary with threshold overlays and 50% crossings.
pub fn to_report(result: &SweepResult) -> Result<String> {
    let mut md = String::new();
    let _ = writeln!(md, "# Support recovery sweep\n");
    let _ = writeln!(md, "- trials per cell: {}", result.trials);
    let _ = writeln!(md, "- base seed: {}", result.base_seed);
    let _ = writeln!(md, "- rng: {}", result.rng);
    let axis = match result.axis {
        AxisMode::ThetaPsi => "n / (2 psi ln(p - s))",
        AxisMode::ThetaSlog => "n / (s ln(p - s))",
    };
    let _ = writeln!(md, "- theta axis: {axis}\n");
    let _ = writeln!(md, "## Thresholds\n");
    let _ = writeln!(md, "| p | K | s | psi | gamma | rho_u | rho_l | n_achievability | n_converse |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|");
    for o in &result.threshold_overlay {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {} | {} | {} |",
            o.p,
            o.k,
            o.s,
            o.psi,
            o.gamma,
            o.rho_u,
            o.rho_l.map_or_else(|| "undefined".into(), |x| format!("{x:.4}")),
            fmt_opt(o.n_achievability),
            fmt_opt(o.n_converse)
        );
    }
    let _ = writeln!(md, "\n## 50% crossings\n");
    let _ = writeln!(md, "| p | K | coefficient model | covariance model | n | theta | std. error (n) |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|");
    for c in crossing_point(result, 0.5)? {
        let status = match c.status {
            CrossingStatus::Defined => fmt_opt(c.n),
            CrossingStatus::NeverReached => "never reached".into(),
            CrossingStatus::AboveAtStart => "above at first n".into(),
        };
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} |",
            c.p,
            c.k,
            c.coefficient_model,
            c.covariance_model,
            status,
            c.theta.map_or_else(|| "-".into(), |t| format!("{t:.3}")),
            c.n_std_error.map_or_else(|| "-".into(), |e| format!("{e:.1}"))
        );
    }
    let _ = writeln!(md, "\n## Success probability\n");
    let _ = writeln!(md, "| p | K | n | theta | lambda | success | nonconverged | mean linf/l2 error |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|");
    for r in &result.rows {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.3} | {:.4} | {:.2} | {} | {:.4} |",
            r.p, r.k, r.n, r.theta, r.lambda, r.success_prob, r.nonconverged, r.mean_linf_l2_error
        );
    }
    Ok(md)
}

/// Writes `sweep.csv`, `sweep.json` and `report.md` into `dir`.
pub fn write_outputs(result: &SweepResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("sweep.csv"), to_csv(result))?;
    std::fs::write(dir.join("sweep.json"), to_json(result)?)?;
    std::fs::write(dir.join("report.md"), to_report(result)?)?;
    Ok(())
}
