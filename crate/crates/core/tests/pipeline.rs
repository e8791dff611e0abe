use mvmr_core::datagen::sample_problem;
use mvmr_core::model::{self, support_of};
use mvmr_core::solver::{self, SolverConfig};
use mvmr_core::{run_sweep, CoefficientModel, ExperimentConfig, NGrid, SupportRule};

fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(vec![64], vec![2], CoefficientModel::identical(SupportRule::Stride8));
    cfg.trials = 8;
    cfg.base_seed = 17;
    cfg.n_grid = NGrid::Explicit(vec![20, 600]);
    cfg
}

#[test]
fn large_sample_recovers_support_and_certifies_witness() {
    let cfg = config();
    let e = cfg.ensemble(64, 2).unwrap();
    let problem = sample_problem(&e.truth, &e.covs, &e.noise, 600, 1).unwrap();
    let lambda = cfg.lambda_rule.evaluate(64, e.s_declared, 600).unwrap();
    let report = solver::solve(&problem, lambda, &SolverConfig::default().with_tol(1e-9)).unwrap();
    assert!(report.converged);
    assert_eq!(support_of(&report.estimate, 0.0), e.truth.support_union());
    assert!(model::kkt_residual(&problem, &report.estimate, lambda).unwrap() <= 1e-9);
    let witness = solver::dual_witness(&problem, &report.estimate, &e.truth, lambda).unwrap();
    assert!(witness.strict_feasible);
}

#[test]
fn sweep_success_rises_with_n_and_reruns_identically() {
    let cfg = config();
    let a = run_sweep(&cfg, Some(1)).unwrap();
    let b = run_sweep(&cfg, Some(3)).unwrap();
    assert_eq!(a.rows.len(), 2);
    assert_eq!(a.rows[0].success_prob, 0.0);
    assert_eq!(a.rows[1].success_prob, 1.0);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
