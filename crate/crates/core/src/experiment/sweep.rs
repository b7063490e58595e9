use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Mode, ObjectiveKind};
use crate::consensus::{run_consensus, ConsensusConfig};
use crate::error::{Error, Result};
use crate::estimator::SensitivityParam;
use crate::network::{ChannelConfig, DeliveryRecord};
use crate::objective::{euclidean_norm, make_quartic_1d, make_scaled_quadratic_set, Estimate, ObjectiveSet};
use crate::runtime::{format_float, run_simulation, SimulationConfig, Trace, TrialStatus, DIVERGENCE_GUARD};
use crate::seed::{derive, derive_rng, Stream};

/// Seed of trial `trial`. Every grid cell reuses the same trial seeds, so
/// cells differ only in `(c, p_c)`.
pub fn trial_seed(master_seed: u64, trial: u64) -> u64 {
    derive(master_seed, Stream::Trial, trial)
}

/// The objectives a trial runs on, with the point they are minimized at.
#[derive(Debug, Clone)]
pub struct Problem {
    pub objective: ObjectiveSet,
    pub minimizer: Vec<f64>,
}

/// Builds the objective set for a trial. Unless `objective_per_trial` is set
/// the result does not depend on `trial_seed`.
pub fn build_problem(cfg: &ExperimentConfig, trial_seed: u64) -> Result<Problem> {
    match cfg.objective {
        ObjectiveKind::Quartic1d => Ok(Problem { objective: make_quartic_1d(), minimizer: vec![0.0] }),
        ObjectiveKind::QuadraticRandom => {
            let seed = if cfg.objective_per_trial { derive(trial_seed, Stream::Objective, 0) } else { cfg.objective_seed };
            let spec = make_scaled_quadratic_set(cfg.d, seed, cfg.matrix_entry_std)?;
            if let Some(r) = cfg.center_radius {
                let mut rng = derive_rng(seed, Stream::Objective, 1);
                let centers: Vec<Vec<f64>> = (0..cfg.d)
                    .map(|_| (0..cfg.d).map(|_| if r == 0.0 { 0.0 } else { rng.random_range(-r..=r) }).collect())
                    .collect();
                let minimizer = spec.summed_minimizer(&centers)?;
                return Ok(Problem { objective: spec.with_centers(&centers)?, minimizer });
            }
            match &cfg.minimizer {
                Some(m) => Ok(Problem { objective: spec.translated(m)?, minimizer: m.clone() }),
                None => Ok(Problem { objective: spec.objective_set(), minimizer: vec![0.0; cfg.d] }),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: u64,
    pub seed: u64,
    pub c: f64,
    pub p_c: f64,
    pub final_estimate: Estimate,
    /// `‖x_N − x*‖`.
    pub final_norm: f64,
    pub status: TrialStatus,
    pub trace: Option<Trace>,
    pub deliveries: Vec<DeliveryRecord>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrialOptions {
    pub keep_trace: bool,
    pub record_deliveries: bool,
}

pub fn run_trial(cfg: &ExperimentConfig, c: f64, p_c: f64, trial: u64, opts: TrialOptions) -> Result<TrialResult> {
    let seed = trial_seed(cfg.master_seed, trial);
    let problem = build_problem(cfg, seed)?;
    let channels = ChannelConfig::new(p_c, cfg.delivery)?;
    let d = problem.objective.dim();
    let (final_estimate, status, trace, deliveries) = match cfg.mode {
        Mode::Dspg => {
            let sim = SimulationConfig {
                objective: problem.objective,
                sensitivity: vec![SensitivityParam::new(c)?; d],
                channels,
                activation: cfg.activation,
                schedule: cfg.schedule,
                iterations: cfg.iterations,
                seed,
                init: cfg.init.clone(),
                subsample_stride: cfg.subsample_stride,
                divergence_guard: DIVERGENCE_GUARD,
                record_deliveries: opts.record_deliveries,
            };
            let out = run_simulation(&sim)?;
            (out.final_estimate, out.status, out.trace, out.deliveries)
        }
        Mode::Consensus => {
            let sim = ConsensusConfig {
                objective: problem.objective,
                sensitivity: vec![SensitivityParam::new(c)?; d],
                channels,
                activation: cfg.activation,
                schedule: cfg.schedule,
                iterations: cfg.iterations,
                seed,
                init: cfg.init.clone(),
                subsample_stride: cfg.subsample_stride,
                divergence_guard: DIVERGENCE_GUARD,
                share_mode: cfg.share_mode,
            };
            let out = run_consensus(&sim)?;
            (out.final_estimate, out.status, out.trace, Vec::new())
        }
        Mode::Diagnostics => return Err(Error::Unsupported("diagnostics configs have no trials to run")),
    };
    let offset: Vec<f64> = final_estimate.iter().zip(&problem.minimizer).map(|(x, m)| x - m).collect();
    Ok(TrialResult {
        trial,
        seed,
        c,
        p_c,
        final_norm: euclidean_norm(&offset),
        final_estimate,
        status,
        trace: opts.keep_trace.then_some(trace),
        deliveries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub c: f64,
    pub p_c: f64,
    /// Mean over non-diverged trials; NaN when every trial diverged.
    pub mean_final_norm: f64,
    /// Sample standard deviation over non-diverged trials.
    pub std_final_norm: f64,
    pub diverged_count: u64,
    pub trials: u64,
}

impl SummaryRow {
    pub fn from_trials(c: f64, p_c: f64, results: &[TrialResult]) -> Self {
        let norms: Vec<f64> = results.iter().filter(|r| !r.status.is_diverged()).map(|r| r.final_norm).collect();
        let n = norms.len() as f64;
        let mean = if norms.is_empty() { f64::NAN } else { norms.iter().sum::<f64>() / n };
        let std = if norms.len() < 2 {
            0.0
        } else {
            (norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        SummaryRow {
            c,
            p_c,
            mean_final_norm: mean,
            std_final_norm: std,
            diverged_count: results.len() as u64 - norms.len() as u64,
            trials: results.len() as u64,
        }
    }

    pub fn all_diverged(&self) -> bool {
        self.trials > 0 && self.diverged_count == self.trials
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepSummary {
    pub rows: Vec<SummaryRow>,
}

impl SweepSummary {
    pub fn row(&self, c: f64, p_c: f64) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.c == c && r.p_c == p_c)
    }

    pub fn any_cell_all_diverged(&self) -> bool {
        self.rows.iter().any(SummaryRow::all_diverged)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["c", "p_c", "mean_final_norm", "std_final_norm", "diverged_count", "trials"])?;
        for r in &self.rows {
            w.write_record([
                format_float(r.c),
                format_float(r.p_c),
                format_float(r.mean_final_norm),
                format_float(r.std_final_norm),
                r.diverged_count.to_string(),
                r.trials.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub verbose: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { verbose: false, threads: Some(1) }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub summary: SweepSummary,
    /// Every trial, ordered by `c`, then `p_c`, then trial index.
    pub trials: Vec<TrialResult>,
}

/// Runs every `(c, p_c, trial)` job. Results do not depend on the thread count.
pub fn run_sweep(cfg: &ExperimentConfig, opts: SweepOptions) -> Result<SweepOutput> {
    if cfg.mode == Mode::Diagnostics {
        return Err(Error::Unsupported("diagnostics configs are run with the diagnose command"));
    }
    let total = cfg.total_trials();
    if total > super::config::MAX_TOTAL_TRIALS {
        return Err(Error::InvalidParameter { name: "trials", reason: format!("grid has {total} trials") });
    }
    let jobs: Vec<(f64, f64, u64)> = cfg
        .c
        .iter()
        .flat_map(|&c| cfg.p_c.iter().flat_map(move |&p| (0..cfg.trials).map(move |t| (c, p, t))))
        .collect();
    let trial_opts = TrialOptions { keep_trace: opts.verbose, record_deliveries: false };
    let work = || jobs.par_iter().map(|&(c, p, t)| run_trial(cfg, c, p, t, trial_opts)).collect::<Result<Vec<_>>>();
    let trials = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter { name: "parallel", reason: e.to_string() })?
            .install(work)?,
        None => work()?,
    };
    let per_cell = cfg.trials as usize;
    let summary = SweepSummary {
        rows: trials.chunks(per_cell).map(|chunk| SummaryRow::from_trials(chunk[0].c, chunk[0].p_c, chunk)).collect(),
    };
    Ok(SweepOutput { summary, trials })
}

/// Creates `path` for writing, attaching the path to any failure.
pub(crate) fn create_output(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Output { path: path.to_path_buf(), source })
}

pub(crate) fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Output { path: dir.to_path_buf(), source })
}

/// Writes `finals.csv`-style rows: `trial,seed,c,p_c,final_norm,status,x_0..`.
pub fn write_finals<W: Write>(trials: &[TrialResult], out: W) -> Result<()> {
    let d = trials.first().map_or(0, |t| t.final_estimate.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["trial", "seed", "c", "p_c", "final_norm", "status"].iter().map(|s| s.to_string()).collect();
    header.extend((0..d).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for t in trials {
        let mut rec = vec![
            t.trial.to_string(),
            t.seed.to_string(),
            format_float(t.c),
            format_float(t.p_c),
            format_float(t.final_norm),
            t.status.label().to_string(),
        ];
        rec.extend(t.final_estimate.iter().map(|&x| format_float(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_deliveries<W: Write>(records: &[DeliveryRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tick", "from", "to", "delivered"])?;
    for r in records {
        w.write_record([r.tick.to_string(), r.from.to_string(), r.to.to_string(), u8::from(r.delivered).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_file_name(c: f64, p_c: f64, trial: u64) -> String {
    format!("trace_c{c}_p{p_c}_trial{trial}.csv")
}

/// Files a sweep writes into its output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepFiles {
    pub summary: PathBuf,
    pub finals: Option<PathBuf>,
    pub traces: Option<PathBuf>,
}

/// Runs the sweep and writes `summary.csv`, plus `finals.csv` and `traces/`
/// when verbose. The output directory is checked before any trial runs.
pub fn run_sweep_to_dir(cfg: &ExperimentConfig, out_dir: &Path, opts: SweepOptions) -> Result<(SweepOutput, SweepFiles)> {
    prepare_dir(out_dir)?;
    let files = SweepFiles {
        summary: out_dir.join("summary.csv"),
        finals: opts.verbose.then(|| out_dir.join("finals.csv")),
        traces: opts.verbose.then(|| out_dir.join("traces")),
    };
    let summary_out = create_output(&files.summary)?;
    let finals_out = files.finals.as_deref().map(create_output).transpose()?;
    if let Some(dir) = &files.traces {
        prepare_dir(dir)?;
    }

    let output = run_sweep(cfg, opts)?;
    output.summary.write_csv(summary_out)?;
    if let Some(out) = finals_out {
        write_finals(&output.trials, out)?;
    }
    if let Some(dir) = &files.traces {
        for t in &output.trials {
            if let Some(trace) = &t.trace {
                trace.write_csv(create_output(&dir.join(trace_file_name(t.c, t.p_c, t.trial)))?)?;
            }
        }
    }
    Ok((output, files))
}

/// One trial at the first grid cell: writes `trace.csv`, `final.csv` and,
/// when verbose, `deliveries.csv`.
pub fn run_single_to_dir(cfg: &ExperimentConfig, out_dir: &Path, verbose: bool) -> Result<TrialResult> {
    if cfg.mode == Mode::Diagnostics {
        return Err(Error::Unsupported("diagnostics configs are run with the diagnose command"));
    }
    prepare_dir(out_dir)?;
    let trace_out = create_output(&out_dir.join("trace.csv"))?;
    let final_out = create_output(&out_dir.join("final.csv"))?;
    let deliveries_out = if verbose { Some(create_output(&out_dir.join("deliveries.csv"))?) } else { None };
    let opts = TrialOptions { keep_trace: true, record_deliveries: verbose && cfg.mode == Mode::Dspg };
    let result = run_trial(cfg, cfg.c[0], cfg.p_c[0], 0, opts)?;
    if let Some(trace) = &result.trace {
        trace.write_csv(trace_out)?;
    }
    write_finals(std::slice::from_ref(&result), final_out)?;
    if let Some(out) = deliveries_out {
        write_deliveries(&result.deliveries, out)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::parse_config;

    fn cfg(extra: &str) -> ExperimentConfig {
        let text = format!(
            "mode = \"dspg\"\nd = 3\nobjective = \"quadratic-random\"\nobjective_seed = 2\nc = [0.1, 1.0]\np_c = [0.5, 0.9]\nschedule = \"hybrid\"\niterations = 300\ntrials = 3\nmaster_seed = 5\nsubsample_stride = 50\n{extra}"
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn summary_excludes_diverged_trials() {
        let mk = |norm, status| TrialResult {
            trial: 0,
            seed: 0,
            c: 1.0,
            p_c: 0.5,
            final_estimate: Estimate::new(vec![norm]),
            final_norm: norm,
            status,
            trace: None,
            deliveries: Vec::new(),
        };
        let rows = [mk(1.0, TrialStatus::Completed), mk(3.0, TrialStatus::Completed), mk(1e13, TrialStatus::Diverged { tick: 4 })];
        let r = SummaryRow::from_trials(1.0, 0.5, &rows);
        assert_eq!(r.mean_final_norm, 2.0);
        assert!((r.std_final_norm - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.diverged_count, 1);
        assert_eq!(r.trials, 3);
        assert!(!r.all_diverged());
        let all = SummaryRow::from_trials(1.0, 0.5, &rows[2..]);
        assert!(all.all_diverged() && all.mean_final_norm.is_nan());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = cfg("");
        let a = run_sweep(&c, SweepOptions { verbose: false, threads: Some(1) }).unwrap();
        let b = run_sweep(&c, SweepOptions { verbose: false, threads: Some(3) }).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.summary.rows.len(), 4);
    }

    #[test]
    fn single_cell_sweep_matches_direct_run() {
        let c = cfg("").clone();
        let mut one = c.clone();
        one.c = vec![1.0];
        one.p_c = vec![0.9];
        one.trials = 1;
        let sweep = run_sweep(&one, SweepOptions::default()).unwrap();
        let direct = run_trial(&one, 1.0, 0.9, 0, TrialOptions::default()).unwrap();
        assert_eq!(sweep.summary.rows[0].mean_final_norm, direct.final_norm);
        assert_eq!(sweep.trials[0].final_estimate, direct.final_estimate);
    }

    #[test]
    fn per_trial_objectives_differ() {
        let c = cfg("objective_per_trial = true\n");
        let a = build_problem(&c, trial_seed(5, 0)).unwrap();
        let b = build_problem(&c, trial_seed(5, 1)).unwrap();
        let x = [1.0, -1.0, 0.5];
        assert_ne!(a.objective.evaluate(0, &x).unwrap(), b.objective.evaluate(0, &x).unwrap());
        let fixed = cfg("");
        let a = build_problem(&fixed, trial_seed(5, 0)).unwrap();
        let b = build_problem(&fixed, trial_seed(5, 1)).unwrap();
        assert_eq!(a.objective.evaluate(0, &x).unwrap(), b.objective.evaluate(0, &x).unwrap());
    }

    #[test]
    fn diagnostics_mode_rejected() {
        let c = parse_config("mode = \"diagnostics\"\nd = 1\nobjective = \"quartic-1d\"\nc = 0.1\n").unwrap();
        assert!(run_sweep(&c, SweepOptions::default()).is_err());
    }
}
