mod common;

use common::{geometric_moments, quad_gradient};
use dspg::consensus::{
    compute_shares, compute_shares_with, consensus_update, run_consensus, ConsensusConfig, ConsensusSimulation, ShareMode,
};
use dspg::estimator::{dspg_estimate, sample_perturbation, PerturbationVector, SensitivityParam};
use dspg::network::ChannelConfig;
use dspg::objective::{make_quadratic_set, LocalObjective, ObjectiveSet, Quadratic};
use dspg::runtime::{AgentState, Init, StepSchedule};
use dspg::seed::rng_from_seed;
use proptest::prelude::*;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Wraps an objective and counts evaluations.
#[derive(Debug)]
struct Counted {
    inner: Arc<dyn LocalObjective>,
    calls: Arc<AtomicU64>,
}

impl LocalObjective for Counted {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.value(x)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.inner.gradient(x)
    }
}

fn counted_set(d: usize, seed: u64) -> (ObjectiveSet, Vec<Arc<AtomicU64>>) {
    let spec = make_quadratic_set(d, seed).unwrap();
    let calls: Vec<Arc<AtomicU64>> = (0..d).map(|_| Arc::new(AtomicU64::new(0))).collect();
    let fs: Vec<Arc<dyn LocalObjective>> = spec
        .matrices
        .into_iter()
        .zip(&calls)
        .map(|(a, calls)| {
            let inner = Arc::new(Quadratic::new(a).unwrap());
            Arc::new(Counted { inner, calls: calls.clone() }) as Arc<dyn LocalObjective>
        })
        .collect();
    (ObjectiveSet::new(fs).unwrap(), calls)
}

#[test]
fn two_evaluations_per_active_tick() {
    for d in [2, 4, 8] {
        let (set, calls) = counted_set(d, 5);
        let mut cfg = ConsensusConfig::new(set, 0.5, 0.7, 1).unwrap();
        cfg.iterations = 300;
        let out = run_consensus(&cfg).unwrap();
        for (i, c) in calls.iter().enumerate() {
            assert_eq!(c.load(Ordering::Relaxed), 2 * out.local_clocks[i], "d={d} agent {i}");
        }
        assert_eq!(out.evaluations, 2 * 300 * d as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shares_are_unbiased_on_quadratics(d in 1usize..6, seed in any::<u64>(), c in 0.05f64..5.0) {
        let spec = make_quadratic_set(d, seed).unwrap();
        let set = spec.objective_set();
        let view: Vec<f64> = (0..d).map(|k| 1.5 - 0.7 * k as f64).collect();
        let sens = SensitivityParam::new(c).unwrap();
        for origin in 0..d {
            let g = quad_gradient(&spec.matrices[origin], &view);
            let mut mean = vec![0.0; d];
            for mask in 0..(1u64 << d) {
                let delta = PerturbationVector::from_mask(d, mask);
                let shares = compute_shares_with(&set, origin, &view, &delta, sens, 0).unwrap();
                prop_assert_eq!(shares.len(), d);
                for s in shares {
                    prop_assert_eq!(s.origin, origin);
                    mean[s.target] += s.value / (1u64 << d) as f64;
                }
            }
            for k in 0..d {
                prop_assert!((mean[k] - g[k]).abs() < 1e-10 * (1.0 + g[k].abs()), "{} vs {}", mean[k], g[k]);
            }
        }
    }
}

#[test]
fn own_share_equals_the_dspg_estimate() {
    let set = make_quadratic_set(4, 2).unwrap().objective_set();
    let view = [0.3, -0.2, 1.0, 0.5];
    let sens = SensitivityParam::new(0.1).unwrap();
    let mut rng = rng_from_seed(4);
    let mut replay = rng.clone();
    let shares = compute_shares(&set, 2, &view, sens, &mut rng, 9).unwrap();
    assert!(shares.iter().all(|s| s.origin_tick == 9));
    let delta = sample_perturbation(&mut replay, 4).unwrap();
    let own = dspg_estimate(&set, 2, &view, &delta, sens).unwrap();
    assert_eq!(shares[2].value.to_bits(), own.to_bits());
    // the other shares differ from the own one only by the sign ratio
    for s in &shares {
        assert_eq!(s.value, own * delta.signs()[2] / delta.signs()[s.target]);
    }
}

#[test]
fn update_subtracts_scaled_sum() {
    let mut state = AgentState::new(0, 3, 1.0, SensitivityParam::new(1.0).unwrap(), rng_from_seed(0));
    consensus_update(&mut state, &[1.0, 2.0, -0.5], 0.1).unwrap();
    assert!((state.own_coord() - 0.75).abs() < 1e-15);
    assert_eq!(state.local_clock(), 1);
    assert!(consensus_update(&mut state, &[1.0], 1.5).is_err());
}

#[test]
fn exact_mode_tracks_gradient_descent() {
    let spec = make_quadratic_set(4, 2).unwrap();
    let centers: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| ((i * 4 + j) % 5) as f64 * 0.4 - 0.8).collect()).collect();
    let set = spec.with_centers(&centers).unwrap();
    let gamma = 0.005;
    let x0 = vec![2.0, -1.0, 0.5, 3.0];
    let mut cfg = ConsensusConfig::new(set, 0.3, 1.0, 7).unwrap();
    cfg.channels = ChannelConfig::perfect();
    cfg.share_mode = ShareMode::EnumeratedMean;
    cfg.schedule = StepSchedule::Constant { gamma0: gamma };
    cfg.init = Init::Fixed(x0.clone());
    cfg.iterations = 400;
    let mut sim = ConsensusSimulation::new(&cfg).unwrap();

    // oracle: x ← x − γ Σ_i (A_i + A_iᵀ)(x − b_i)
    let mut x = x0;
    for n in 0..400 {
        let mut grad = [0.0; 4];
        for (a, b) in spec.matrices.iter().zip(&centers) {
            let shifted: Vec<f64> = x.iter().zip(b).map(|(u, v)| u - v).collect();
            for (g, v) in grad.iter_mut().zip(quad_gradient(a, &shifted)) {
                *g += v;
            }
        }
        for (u, g) in x.iter_mut().zip(grad) {
            *u -= gamma * g;
        }
        sim.step().unwrap();
        for (u, v) in x.iter().zip(sim.coords()) {
            assert!((u - v).abs() < 1e-9 * (1.0 + u.abs()), "tick {n}: {x:?} vs {:?}", sim.coords());
        }
    }
}

#[test]
fn exact_mode_converges_linearly() {
    let spec = make_quadratic_set(4, 2).unwrap();
    let l_sum = spec.summed_hessian_max_eigenvalue();
    let gamma = 1.0 / l_sum;
    let mut cfg = ConsensusConfig::new(spec.objective_set(), 0.5, 1.0, 3).unwrap();
    cfg.share_mode = ShareMode::EnumeratedMean;
    cfg.schedule = StepSchedule::Constant { gamma0: gamma };
    cfg.subsample_stride = 1;
    cfg.iterations = 200;
    let out = run_consensus(&cfg).unwrap();
    let norms: Vec<f64> = out.trace.rows().iter().map(|r| r.norm).collect();
    // contraction factor of gradient descent is at most 1 − γ·λ_min
    let lambda_min = spec.summed_hessian().symmetric_eigenvalues().min();
    let rate = 1.0 - gamma * lambda_min;
    let start = out.initial_estimate.norm();
    for (n, v) in norms.iter().enumerate() {
        let bound = start * rate.powi(n as i32 + 1) * (1.0 + 1e-9) + 1e-15;
        assert!(*v <= bound, "tick {n}: {v} > {bound}");
    }
}

#[test]
fn compound_staleness_second_moment() {
    for p in [0.5, 0.9] {
        let set = make_quadratic_set(3, 1).unwrap().objective_set();
        let mut cfg = ConsensusConfig::new(set, 1.0, p, 21).unwrap();
        cfg.iterations = 40_000;
        cfg.schedule = StepSchedule::Constant { gamma0: 0.001 };
        let mut sim = ConsensusSimulation::new(&cfg).unwrap();
        let (mut sum2, mut count) = (0.0, 0.0);
        for n in 0..cfg.iterations {
            sim.step().unwrap();
            if n >= 100 {
                for s in sim.compound_staleness() {
                    sum2 += (s * s) as f64;
                    count += 1.0;
                }
            }
        }
        let (m1, m2) = geometric_moments(p);
        let expected = 2.0 * m2 + 2.0 * m1 * m1;
        let got = sum2 / count;
        assert!((got - expected).abs() <= 0.15 * expected, "p={p}: {got} vs {expected}");
    }
}

#[test]
fn perfect_channels_have_no_compound_staleness() {
    let set = make_quadratic_set(3, 1).unwrap().objective_set();
    let mut cfg = ConsensusConfig::new(set, 1.0, 1.0, 2).unwrap();
    cfg.iterations = 50;
    let mut sim = ConsensusSimulation::new(&cfg).unwrap();
    for _ in 0..50 {
        sim.step().unwrap();
        assert!(sim.compound_staleness().iter().all(|&s| s == 0));
    }
}
