use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mvmr_core::datagen::sample_problem;
use mvmr_core::harness::{self, AxisMode};
use mvmr_core::solver::{self, Method, SolverConfig};
use mvmr_core::theory::{self, ConditionReport, DeclaredBounds, Thresholds};
use mvmr_core::{ExperimentConfig, MvmrProblem};

#[derive(Parser)]
#[command(name = "mvmr", version, about = "Support recovery for multi-response regression with l1/l2 regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Bcd,
    Pg,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    ThetaPsi,
    ThetaSlog,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem stored as JSON.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long, value_enum, default_value = "bcd")]
        method: MethodArg,
        /// Output JSON file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print ψ, irrepresentability, ρ bounds and thresholds for every (p, K).
    Theory {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's threshold slack.
        #[arg(long)]
        v: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte-Carlo sweep; writes sweep.csv, sweep.json and report.md.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, value_enum, default_value = "theta-psi")]
        axis: AxisArg,
    },
    /// Sample one problem from a config and write it as JSON.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the first entry of the config's p list.
        #[arg(long)]
        p: Option<usize>,
        /// Defaults to the first entry of the config's K list.
        #[arg(long = "K", alias = "k")]
        k: Option<usize>,
        /// Defaults to the smallest n of the config's grid.
        #[arg(long)]
        n: Option<usize>,
        /// Also write B* as CSV.
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).with_context(|| format!("reading config {}", path.display()))
}

#[derive(Serialize)]
struct TheoryEntry {
    p: usize,
    #[serde(rename = "K")]
    k: usize,
    s: usize,
    s_declared: usize,
    conditions: ConditionReport,
    thresholds: Option<Thresholds>,
    psi_scale: f64,
}

fn run_solve(
    problem: &Path,
    lambda: f64,
    tol: f64,
    max_iters: usize,
    method: MethodArg,
    out: Option<&Path>,
) -> Result<()> {
    let text = std::fs::read_to_string(problem).with_context(|| format!("reading {}", problem.display()))?;
    let problem: MvmrProblem = serde_json::from_str(&text).context("parsing problem JSON")?;
    let method = match method {
        MethodArg::Bcd => Method::Bcd,
        MethodArg::Pg => Method::ProximalGradient,
    };
    let config = SolverConfig::default().with_tol(tol).with_max_iters(max_iters).with_method(method);
    let report = solver::solve(&problem, lambda, &config)?;
    if !report.converged {
        eprintln!(
            "warning: stopped after {} iterations with KKT residual {:.3e}",
            report.iterations, report.final_kkt_residual
        );
    }
    write_or_print(out, &serde_json::to_string_pretty(&report)?)
}

fn run_theory(config: &Path, v: Option<f64>, out: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(v) = v {
        cfg.v = v;
        cfg.validate()?;
    }
    let mut entries = Vec::new();
    for e in cfg.ensembles()? {
        let conditions = theory::condition_report(&e.truth, &e.covs, &DeclaredBounds::default())?;
        let thresholds = match conditions.rho_l {
            Some(rho_l) if conditions.gamma > 0.0 => {
                Some(theory::thresholds(e.psi, e.p, e.s(), conditions.rho_u, rho_l, conditions.gamma.min(1.0), cfg.v)?)
            }
            _ => None,
        };
        entries.push(TheoryEntry {
            p: e.p,
            k: e.k,
            s: e.s(),
            s_declared: e.s_declared,
            psi_scale: 2.0 * e.psi * ((e.p - e.s()) as f64).ln(),
            conditions,
            thresholds,
        });
    }
    write_or_print(out, &serde_json::to_string_pretty(&entries)?)
}

fn run_sweep(config: &Path, out: &Path, jobs: Option<usize>, axis: AxisArg) -> Result<()> {
    let cfg = load_config(config)?;
    let mut result = harness::run_sweep(&cfg, jobs)?;
    if let AxisArg::ThetaSlog = axis {
        result = harness::rescale_axis(&result, AxisMode::ThetaSlog);
    }
    harness::write_outputs(&result, out)?;
    let nonconverged: usize = result.rows.iter().map(|r| r.nonconverged).sum();
    if nonconverged > 0 {
        eprintln!("warning: {nonconverged} trials did not converge and were counted as failures");
    }
    eprintln!("wrote {} rows to {}", result.rows.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_gen(
    config: &Path,
    seed: u64,
    out: &Path,
    p: Option<usize>,
    k: Option<usize>,
    n: Option<usize>,
    truth_out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let p = p.unwrap_or(cfg.p_list[0]);
    let k = k.unwrap_or(cfg.k_list[0]);
    let e = cfg.ensemble(p, k)?;
    let n = match n {
        Some(n) => n,
        None => match cfg.n_grid.sample_sizes(e.psi, e.p, e.s()).first() {
            Some(&n) => n,
            None => bail!("config n_grid is empty"),
        },
    };
    let problem = sample_problem(&e.truth, &e.covs, &e.noise, n, seed)?;
    std::fs::write(out, serde_json::to_string(&problem)?).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = truth_out {
        std::fs::write(path, e.truth.b_star().to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { problem, lambda, tol, max_iters, method, out } => {
            run_solve(&problem, lambda, tol, max_iters, method, out.as_deref())
        }
        Command::Theory { config, v, out } => run_theory(&config, v, out.as_deref()),
        Command::Sweep { config, out, jobs, axis } => run_sweep(&config, &out, jobs, axis),
        Command::Gen { config, seed, out, p, k, n, truth_out } => {
            run_gen(&config, seed, &out, p, k, n, truth_out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
