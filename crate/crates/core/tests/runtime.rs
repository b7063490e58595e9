mod common;

use dspg::experiment::{run_sweep, SweepOptions};
use dspg::objective::{make_quadratic_set, Constant, LocalObjective, ObjectiveSet};
use dspg::runtime::{
    run_simulation, staleness_decay_report, ActivationPolicy, Init, Simulation, SimulationConfig, StepSchedule, TrialStatus,
};
use std::sync::Arc;

fn d4_config(c: f64, p: f64, seed: u64) -> SimulationConfig {
    let set = make_quadratic_set(4, 2).unwrap().objective_set();
    SimulationConfig::new(set, c, p, seed).unwrap()
}

#[test]
fn clocks_count_active_updates() {
    let mut cfg = d4_config(1.0, 0.7, 3);
    cfg.iterations = 2000;
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.local_clocks, vec![2000; 4]);
    assert_eq!(out.total_updates, 8000);

    cfg.activation = ActivationPolicy::RoundRobin;
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.local_clocks, vec![500; 4]);

    cfg.activation = ActivationPolicy::Bernoulli { p_active: 0.5 };
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.local_clocks.iter().sum::<u64>(), out.total_updates);
}

#[test]
fn bernoulli_activation_is_fair() {
    let mut cfg = d4_config(1.0, 0.9, 11);
    cfg.iterations = 20_000;
    cfg.activation = ActivationPolicy::Bernoulli { p_active: 0.5 };
    let out = run_simulation(&cfg).unwrap();
    for clock in out.local_clocks {
        let share = clock as f64 / 20_000.0;
        assert!((share - 0.5).abs() <= 0.05, "activation share {share}");
    }
}

#[test]
fn step_reports_staleness_errors_and_advances() {
    let cfg = d4_config(0.5, 0.5, 4);
    let mut sim = Simulation::new(&cfg).unwrap();
    for n in 0..50 {
        assert_eq!(sim.tick(), n);
        let errors = sim.step().unwrap().unwrap();
        assert_eq!(errors.len(), 4);
        assert!(errors.iter().all(|e| *e >= 0.0));
    }
}

#[test]
fn constant_objective_never_moves() {
    let fs: Vec<Arc<dyn LocalObjective>> = (0..3).map(|_| Arc::new(Constant { dim: 3, value: 2.5 }) as _).collect();
    let mut cfg = SimulationConfig::new(ObjectiveSet::new(fs).unwrap(), 1.0, 0.5, 1).unwrap();
    cfg.iterations = 300;
    cfg.init = Init::Fixed(vec![1.0, -2.0, 3.0]);
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.final_estimate.coords(), &[1.0, -2.0, 3.0]);
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = d4_config(1.0, 0.5, 42);
    cfg.iterations = 3000;
    cfg.record_deliveries = true;
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.deliveries, b.deliveries);
    assert_eq!(a.final_estimate, b.final_estimate);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    a.trace.write_csv(&mut x).unwrap();
    b.trace.write_csv(&mut y).unwrap();
    assert_eq!(x, y);
    cfg.seed = 43;
    assert_ne!(run_simulation(&cfg).unwrap().final_estimate, a.final_estimate);
}

#[test]
fn residual_grows_with_c_at_both_probabilities() {
    let mut cfg = common::load_config("surface_d4.toml");
    cfg.c = vec![0.1, 5.0, 10.0];
    cfg.p_c = vec![0.3, 0.9];
    let out = run_sweep(&cfg, SweepOptions::default()).unwrap();
    for p in [0.3, 0.9] {
        let m: Vec<f64> = [0.1, 5.0, 10.0].iter().map(|&c| out.summary.row(c, p).unwrap().mean_final_norm).collect();
        assert!(m[0] < m[1] && m[1] < m[2], "p={p}: {m:?}");
    }
}

#[test]
fn no_divergence_for_small_c_under_hybrid_schedule() {
    let mut cfg = common::load_config("surface_d4.toml");
    cfg.c = vec![0.1, 0.5, 1.0];
    cfg.p_c = vec![0.3, 0.6, 0.9];
    cfg.trials = 5;
    let out = run_sweep(&cfg, SweepOptions::default()).unwrap();
    assert!(out.trials.iter().all(|t| t.status == TrialStatus::Completed), "a trial hit the guard");
}

#[test]
fn staleness_report_flags_constant_schedule() {
    let mut cfg = d4_config(1.0, 0.5, 5);
    cfg.iterations = 4000;
    cfg.subsample_stride = 1;
    cfg.schedule = StepSchedule::Constant { gamma0: 0.001 };
    let report = staleness_decay_report(&run_simulation(&cfg).unwrap().trace, 1000).unwrap();
    assert!(!report.premise_holds);
    assert_eq!(report.decayed(), None);
}

#[test]
fn invalid_configs_rejected() {
    let mut cfg = d4_config(1.0, 0.5, 5);
    cfg.subsample_stride = 0;
    assert!(Simulation::new(&cfg).is_err());
    let mut cfg = d4_config(1.0, 0.5, 5);
    cfg.sensitivity.pop();
    assert!(Simulation::new(&cfg).is_err());
    let mut cfg = d4_config(1.0, 0.5, 5);
    cfg.init = Init::Fixed(vec![0.0; 3]);
    assert!(Simulation::new(&cfg).is_err());
}
