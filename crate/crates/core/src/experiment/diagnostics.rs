use std::io::Write;
use std::path::Path;

use rand::Rng;

use super::config::{ExperimentConfig, Mode};
use super::sweep::{build_problem, create_output, prepare_dir, trial_seed};
use crate::error::{Error, Result};
use crate::estimator::{enumerate_diagnostics, sample_diagnostics, variance_bound, SensitivityParam};
use crate::runtime::format_float;
use crate::seed::{derive_rng, Stream};

/// Estimator moments for one agent at one probe point and one `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub probe: usize,
    pub c: f64,
    pub agent: usize,
    pub x: Vec<f64>,
    pub true_gradient: f64,
    pub enumerated_mean: f64,
    pub bias: f64,
    pub variance: f64,
    /// `4 Σ_{j≠i} (∂F_i/∂x(j))²`.
    pub bound: f64,
    pub sampled_mean: f64,
    pub sampled_std_error: f64,
}

/// Probe points from `probe_points`, or `probes` uniform draws from
/// `[−probe_radius, probe_radius]^d`.
pub fn probe_points(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    if let Some(pts) = &cfg.probe_points {
        return pts.clone();
    }
    let r = cfg.probe_radius;
    let mut rng = derive_rng(cfg.master_seed, Stream::Probe, 0);
    (0..cfg.probes).map(|_| (0..cfg.d).map(|_| rng.random_range(-r..=r)).collect()).collect()
}

pub fn run_diagnostics(cfg: &ExperimentConfig) -> Result<Vec<DiagnosticsRow>> {
    if cfg.mode != Mode::Diagnostics {
        return Err(Error::Unsupported("diagnose needs mode = diagnostics"));
    }
    let problem = build_problem(cfg, trial_seed(cfg.master_seed, 0))?;
    let obj = &problem.objective;
    let mut rows = Vec::new();
    for (probe, x) in probe_points(cfg).into_iter().enumerate() {
        for &c in &cfg.c {
            let sens = SensitivityParam::new(c)?;
            for agent in 0..obj.dim() {
                let exact = enumerate_diagnostics(obj, agent, &x, sens)?;
                let grad_i = obj.analytic_gradient(agent, &x)?;
                let mut rng = derive_rng(cfg.master_seed, Stream::Probe, 1 + rows.len() as u64);
                let sampled = sample_diagnostics(obj, agent, &x, sens, cfg.diag_samples, &mut rng)?;
                rows.push(DiagnosticsRow {
                    probe,
                    c,
                    agent,
                    x: x.clone(),
                    true_gradient: exact.true_gradient[agent],
                    enumerated_mean: exact.mean[agent],
                    bias: exact.bias[agent],
                    variance: exact.variance[agent],
                    bound: variance_bound(&grad_i, agent),
                    sampled_mean: sampled.mean,
                    sampled_std_error: sampled.std_error,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_diagnostics<W: Write>(rows: &[DiagnosticsRow], out: W) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.x.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = vec!["probe".into(), "c".into(), "agent".into()];
    header.extend((0..d).map(|i| format!("x_{i}")));
    header.extend(
        ["true_gradient", "enumerated_mean", "bias", "variance", "bound", "sampled_mean", "sampled_std_error"].map(String::from),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.probe.to_string(), format_float(r.c), r.agent.to_string()];
        rec.extend(r.x.iter().map(|&v| format_float(v)));
        rec.extend(
            [r.true_gradient, r.enumerated_mean, r.bias, r.variance, r.bound, r.sampled_mean, r.sampled_std_error]
                .map(format_float),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `diagnostics.csv` into `out_dir`.
pub fn run_diagnostics_to_dir(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<DiagnosticsRow>> {
    prepare_dir(out_dir)?;
    let out = create_output(&out_dir.join("diagnostics.csv"))?;
    let rows = run_diagnostics(cfg)?;
    write_diagnostics(&rows, out)?;
    Ok(rows)
}
