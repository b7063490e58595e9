//! Flat key-value experiment files.
//!
//! The document is TOML restricted to top-level keys. Numeric sweep axes
//! (`c`, `p_c`) accept a scalar, an array, or an inline range table
//! `{ start = 0.1, stop = 10.0, step = 0.1 }` with inclusive `stop`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::consensus::ShareMode;
use crate::error::{Error, Result};
use crate::network::DeliveryMode;
use crate::runtime::{ActivationPolicy, DecayAnchor, Init, StepSchedule};

/// Grids larger than this are refused.
pub const MAX_TOTAL_TRIALS: u64 = 1_000_000;

/// Largest range expansion accepted for a single axis.
const MAX_AXIS_LEN: usize = 100_000;

const KNOWN_KEYS: &[&str] = &[
    "mode",
    "d",
    "objective",
    "objective_seed",
    "objective_per_trial",
    "matrix_entry_std",
    "minimizer",
    "center_radius",
    "c",
    "p_c",
    "activation",
    "p_active",
    "schedule",
    "gamma0",
    "switch_tick",
    "a",
    "b",
    "anchor",
    "iterations",
    "trials",
    "master_seed",
    "subsample_stride",
    "output_path",
    "delay_mode",
    "max_queue_delay",
    "init_radius",
    "init",
    "share_mode",
    "probes",
    "probe_radius",
    "probe_points",
    "diag_samples",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Dspg,
    Consensus,
    Diagnostics,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Dspg => "dspg",
            Mode::Consensus => "consensus",
            Mode::Diagnostics => "diagnostics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    QuadraticRandom,
    Quartic1d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub d: usize,
    pub objective: ObjectiveKind,
    pub objective_seed: u64,
    /// Draw a fresh quadratic set for every trial instead of one per sweep.
    pub objective_per_trial: bool,
    /// Standard deviation of the entries of `M` in `A = MᵀM + 0.1·I`.
    pub matrix_entry_std: f64,
    /// Common minimizer the quadratics are translated to.
    pub minimizer: Option<Vec<f64>>,
    /// Consensus only: per-agent centers drawn from `[−r, r]^d`.
    pub center_radius: Option<f64>,
    pub c: Vec<f64>,
    pub p_c: Vec<f64>,
    pub activation: ActivationPolicy,
    pub schedule: StepSchedule,
    pub iterations: u64,
    pub trials: u64,
    pub master_seed: u64,
    pub subsample_stride: u64,
    pub output_path: Option<PathBuf>,
    pub delivery: DeliveryMode,
    pub init: Init,
    pub share_mode: ShareMode,
    pub probes: usize,
    pub probe_radius: f64,
    pub probe_points: Option<Vec<Vec<f64>>>,
    pub diag_samples: usize,
}

impl ExperimentConfig {
    /// Number of `(c, p_c)` cells.
    pub fn cells(&self) -> usize {
        self.c.len() * self.p_c.len()
    }

    pub fn total_trials(&self) -> u64 {
        self.cells() as u64 * self.trials
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
        parse_config(&text)
    }
}

/// Parses and validates a config document, reporting every problem found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
    let mut p = Parser { table: &table, errors: Vec::new() };

    let known: BTreeSet<&str> = KNOWN_KEYS.iter().copied().collect();
    for key in table.keys() {
        if !known.contains(key.as_str()) {
            p.errors.push(format!("unknown key `{key}`"));
        }
    }

    let mode = match p.string("mode") {
        Some("dspg") => Some(Mode::Dspg),
        Some("consensus") => Some(Mode::Consensus),
        Some("diagnostics") => Some(Mode::Diagnostics),
        Some(other) => {
            p.errors.push(format!("mode: expected one of dspg, consensus, diagnostics; got `{other}`"));
            None
        }
        None => {
            p.missing("mode");
            None
        }
    };
    let simulating = mode.is_some_and(|m| m != Mode::Diagnostics);

    let d = p.required_int("d", 1, 1_000).map(|v| v as usize);
    let objective = match p.string("objective") {
        Some("quadratic-random") => Some(ObjectiveKind::QuadraticRandom),
        Some("quartic-1d") => Some(ObjectiveKind::Quartic1d),
        Some(other) => {
            p.errors.push(format!("objective: expected quadratic-random or quartic-1d; got `{other}`"));
            None
        }
        None => {
            p.missing("objective");
            None
        }
    };
    if let (Some(ObjectiveKind::Quartic1d), Some(d)) = (objective, d) {
        if d != 1 {
            p.errors.push(format!("objective quartic-1d requires d = 1, got d = {d}"));
        }
    }
    let objective_seed = p.int("objective_seed", 0, i64::MAX).unwrap_or(0) as u64;
    let objective_per_trial = p.boolean("objective_per_trial").unwrap_or(false);
    let matrix_entry_std = p.float("matrix_entry_std", Bound::Open(0.0), Bound::Unbounded).unwrap_or(1.0);
    let minimizer = p.float_list("minimizer");
    if let (Some(m), Some(d)) = (&minimizer, d) {
        if m.len() != d {
            p.errors.push(format!("minimizer: expected {d} coordinates, got {}", m.len()));
        }
    }
    let center_radius = p.float("center_radius", Bound::Closed(0.0), Bound::Unbounded);
    if center_radius.is_some() && mode != Some(Mode::Consensus) {
        p.errors.push("center_radius: only valid with mode = consensus".into());
    }
    if center_radius.is_some() && minimizer.is_some() {
        p.errors.push("center_radius and minimizer are mutually exclusive".into());
    }
    if objective == Some(ObjectiveKind::Quartic1d) && (minimizer.is_some() || center_radius.is_some()) {
        p.errors.push("minimizer and center_radius apply to quadratic-random only".into());
    }

    let c = p.axis("c", Bound::Open(0.0), Bound::Unbounded, true);
    let p_c = p.axis("p_c", Bound::Open(0.0), Bound::Closed(1.0), simulating).unwrap_or_else(|| vec![1.0]);

    let p_active = p.float("p_active", Bound::Open(0.0), Bound::Closed(1.0));
    let activation = match p.string("activation") {
        None | Some("bernoulli") if p_active.is_some() => ActivationPolicy::Bernoulli { p_active: p_active.unwrap_or(1.0) },
        None | Some("all") => ActivationPolicy::AllActive,
        Some("round-robin") => ActivationPolicy::RoundRobin,
        Some("bernoulli") => {
            p.missing("p_active");
            ActivationPolicy::AllActive
        }
        Some(other) => {
            p.errors.push(format!("activation: expected all, bernoulli or round-robin; got `{other}`"));
            ActivationPolicy::AllActive
        }
    };
    if p_active.is_some() && !matches!(activation, ActivationPolicy::Bernoulli { .. }) {
        p.errors.push("p_active: only valid with activation = bernoulli".into());
    }

    let schedule = p.schedule(simulating);

    let iterations = if simulating { p.required_int("iterations", 0, i64::MAX) } else { p.int("iterations", 0, i64::MAX) };
    let trials = if simulating { p.required_int("trials", 1, i64::MAX) } else { p.int("trials", 1, i64::MAX) };
    let master_seed = if simulating { p.required_int("master_seed", 0, i64::MAX) } else { p.int("master_seed", 0, i64::MAX) };
    let subsample_stride = p.int("subsample_stride", 1, i64::MAX).unwrap_or(100) as u64;
    let output_path = p.string("output_path").map(PathBuf::from);

    let max_queue_delay = p.int("max_queue_delay", 1, 1_000_000);
    let delivery = match p.string("delay_mode") {
        None | Some("erasure-latest") => {
            if max_queue_delay.is_some() {
                p.errors.push("max_queue_delay: only valid with delay_mode = delayed-queue".into());
            }
            DeliveryMode::ErasureLatest
        }
        Some("delayed-queue") => DeliveryMode::DelayedQueue { max_delay: max_queue_delay.unwrap_or(5) as u64 },
        Some(other) => {
            p.errors.push(format!("delay_mode: expected erasure-latest or delayed-queue; got `{other}`"));
            DeliveryMode::ErasureLatest
        }
    };

    let init_radius = p.float("init_radius", Bound::Closed(0.0), Bound::Unbounded);
    let init_point = p.float_list("init");
    let init = match (init_radius, init_point) {
        (Some(_), Some(_)) => {
            p.errors.push("init and init_radius are mutually exclusive".into());
            Init::default()
        }
        (Some(radius), None) => Init::Uniform { radius },
        (None, Some(x)) => {
            if let Some(d) = d {
                if x.len() != d {
                    p.errors.push(format!("init: expected {d} coordinates, got {}", x.len()));
                }
            }
            Init::Fixed(x)
        }
        (None, None) => Init::default(),
    };

    let share_mode = match p.string("share_mode") {
        None | Some("sampled") => ShareMode::Sampled,
        Some("enumerated-mean") => ShareMode::EnumeratedMean,
        Some(other) => {
            p.errors.push(format!("share_mode: expected sampled or enumerated-mean; got `{other}`"));
            ShareMode::Sampled
        }
    };
    if p.table.contains_key("share_mode") && mode != Some(Mode::Consensus) {
        p.errors.push("share_mode: only valid with mode = consensus".into());
    }

    let probes = p.int("probes", 1, 1_000_000).unwrap_or(10) as usize;
    let probe_radius = p.float("probe_radius", Bound::Open(0.0), Bound::Unbounded).unwrap_or(2.0);
    let probe_points = p.point_list("probe_points");
    if let (Some(pts), Some(d)) = (&probe_points, d) {
        if pts.iter().any(|x| x.len() != d) {
            p.errors.push(format!("probe_points: every point needs {d} coordinates"));
        }
    }
    let diag_samples = p.int("diag_samples", 2, 100_000_000).unwrap_or(2000) as usize;

    if mode == Some(Mode::Diagnostics) {
        if let Some(d) = d {
            if d > crate::estimator::ENUMERATION_LIMIT {
                p.errors.push(format!("d: diagnostics enumerate 2^d patterns and need d ≤ {}, got {d}", crate::estimator::ENUMERATION_LIMIT));
            }
        }
    }
    if mode == Some(Mode::Consensus) && share_mode == ShareMode::EnumeratedMean {
        if let Some(d) = d {
            if d > crate::estimator::ENUMERATION_LIMIT {
                p.errors.push(format!("share_mode enumerated-mean needs d ≤ {}, got {d}", crate::estimator::ENUMERATION_LIMIT));
            }
        }
    }

    if let (Some(c), Some(trials)) = (&c, trials) {
        let total = (c.len() as u64).saturating_mul(p_c.len() as u64).saturating_mul(trials as u64);
        if total > MAX_TOTAL_TRIALS {
            p.errors.push(format!("grid has {total} trials; at most {MAX_TOTAL_TRIALS} are allowed"));
        }
    }

    if !p.errors.is_empty() {
        return Err(Error::Config(p.errors));
    }
    let (Some(mode), Some(d), Some(objective), Some(c)) = (mode, d, objective, c) else {
        unreachable!("missing required keys are reported as errors");
    };
    Ok(ExperimentConfig {
        mode,
        d,
        objective,
        objective_seed,
        objective_per_trial,
        matrix_entry_std,
        minimizer,
        center_radius,
        c,
        p_c,
        activation,
        schedule: schedule.unwrap_or_else(StepSchedule::reference_hybrid),
        iterations: iterations.unwrap_or(0) as u64,
        trials: trials.unwrap_or(1) as u64,
        master_seed: master_seed.unwrap_or(0) as u64,
        subsample_stride,
        output_path,
        delivery,
        init,
        share_mode,
        probes,
        probe_radius,
        probe_points,
        diag_samples,
    })
}

#[derive(Debug, Clone, Copy)]
enum Bound {
    Open(f64),
    Closed(f64),
    Unbounded,
}

impl Bound {
    fn admits_lower(self, v: f64) -> bool {
        match self {
            Bound::Open(b) => v > b,
            Bound::Closed(b) => v >= b,
            Bound::Unbounded => true,
        }
    }

    fn admits_upper(self, v: f64) -> bool {
        match self {
            Bound::Open(b) => v < b,
            Bound::Closed(b) => v <= b,
            Bound::Unbounded => true,
        }
    }
}

fn interval(lo: Bound, hi: Bound) -> String {
    let l = match lo {
        Bound::Open(b) => format!("({b}"),
        Bound::Closed(b) => format!("[{b}"),
        Bound::Unbounded => "(-inf".into(),
    };
    let h = match hi {
        Bound::Open(b) => format!("{b})"),
        Bound::Closed(b) => format!("{b}]"),
        Bound::Unbounded => "inf)".into(),
    };
    format!("{l}, {h}")
}

struct Parser<'t> {
    table: &'t Table,
    errors: Vec<String>,
}

impl<'t> Parser<'t> {
    fn missing(&mut self, key: &str) {
        self.errors.push(format!("missing required key `{key}`"));
    }

    fn string(&mut self, key: &str) -> Option<&'t str> {
        match self.table.get(key)? {
            Value::String(s) => Some(s.as_str()),
            other => {
                self.errors.push(format!("{key}: expected a string, got {}", other.type_str()));
                None
            }
        }
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        match self.table.get(key)? {
            Value::Boolean(b) => Some(*b),
            other => {
                self.errors.push(format!("{key}: expected a boolean, got {}", other.type_str()));
                None
            }
        }
    }

    fn int(&mut self, key: &str, lo: i64, hi: i64) -> Option<i64> {
        match self.table.get(key)? {
            Value::Integer(v) if (lo..=hi).contains(v) => Some(*v),
            Value::Integer(v) => {
                self.errors.push(format!("{key} = {v} is out of range: {key} ∈ [{lo}, {hi}]"));
                None
            }
            other => {
                self.errors.push(format!("{key}: expected an integer, got {}", other.type_str()));
                None
            }
        }
    }

    fn required_int(&mut self, key: &str, lo: i64, hi: i64) -> Option<i64> {
        if !self.table.contains_key(key) {
            self.missing(key);
            return None;
        }
        self.int(key, lo, hi)
    }

    fn number(&mut self, key: &str, v: &Value) -> Option<f64> {
        match v {
            Value::Float(f) if f.is_finite() => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            Value::Float(f) => {
                self.errors.push(format!("{key}: value must be finite, got {f}"));
                None
            }
            other => {
                self.errors.push(format!("{key}: expected a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn check_range(&mut self, key: &str, v: f64, lo: Bound, hi: Bound) -> bool {
        if lo.admits_lower(v) && hi.admits_upper(v) {
            true
        } else {
            self.errors.push(format!("{key} = {v} is out of range: {key} ∈ {}", interval(lo, hi)));
            false
        }
    }

    fn float(&mut self, key: &str, lo: Bound, hi: Bound) -> Option<f64> {
        let v = self.table.get(key)?;
        let v = self.number(key, v)?;
        self.check_range(key, v, lo, hi).then_some(v)
    }

    fn float_list(&mut self, key: &str) -> Option<Vec<f64>> {
        match self.table.get(key)? {
            Value::Array(items) => {
                let vals: Vec<Option<f64>> = items.iter().map(|v| self.number(key, v)).collect();
                vals.into_iter().collect()
            }
            other => {
                self.errors.push(format!("{key}: expected an array of numbers, got {}", other.type_str()));
                None
            }
        }
    }

    fn point_list(&mut self, key: &str) -> Option<Vec<Vec<f64>>> {
        match self.table.get(key)? {
            Value::Array(items) if !items.is_empty() => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::Array(coords) => {
                            let pt: Option<Vec<f64>> = coords.iter().map(|v| self.number(key, v)).collect();
                            out.push(pt?);
                        }
                        other => {
                            self.errors.push(format!("{key}: expected arrays of numbers, got {}", other.type_str()));
                            return None;
                        }
                    }
                }
                Some(out)
            }
            Value::Array(_) => {
                self.errors.push(format!("{key}: list must be nonempty"));
                None
            }
            other => {
                self.errors.push(format!("{key}: expected an array of points, got {}", other.type_str()));
                None
            }
        }
    }

    /// A sweep axis: scalar, nonempty array, or `{start, stop, step}`.
    fn axis(&mut self, key: &str, lo: Bound, hi: Bound, required: bool) -> Option<Vec<f64>> {
        let Some(v) = self.table.get(key) else {
            if required {
                self.missing(key);
            }
            return None;
        };
        let values = match v {
            Value::Array(items) if items.is_empty() => {
                self.errors.push(format!("{key}: list must be nonempty"));
                return None;
            }
            Value::Array(items) => items.iter().map(|v| self.number(key, v)).collect::<Option<Vec<_>>>()?,
            Value::Table(t) => self.range(key, t)?,
            scalar => vec![self.number(key, scalar)?],
        };
        let mut ok = true;
        for &x in &values {
            ok &= self.check_range(key, x, lo, hi);
        }
        ok.then_some(values)
    }

    fn range(&mut self, key: &str, t: &Table) -> Option<Vec<f64>> {
        let mut get = |field: &str| match t.get(field) {
            Some(v) => self.number(&format!("{key}.{field}"), v),
            None => {
                self.errors.push(format!("{key}: range needs `{field}`"));
                None
            }
        };
        let (start, stop, step) = (get("start"), get("stop"), get("step"));
        let (start, stop, step) = (start?, stop?, step?);
        if let Some(extra) = t.keys().find(|k| !["start", "stop", "step"].contains(&k.as_str())) {
            self.errors.push(format!("{key}: unknown range field `{extra}`"));
            return None;
        }
        if step <= 0.0 || stop < start {
            self.errors.push(format!("{key}: range needs step > 0 and stop ≥ start"));
            return None;
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        if count > MAX_AXIS_LEN {
            self.errors.push(format!("{key}: range expands to {count} values; at most {MAX_AXIS_LEN} allowed"));
            return None;
        }
        Some((0..count).map(|k| round_grid(start + k as f64 * step)).collect())
    }

    fn schedule(&mut self, required: bool) -> Option<StepSchedule> {
        let kind = self.string("schedule");
        let fl = |p: &mut Self, key: &str| p.float(key, Bound::Closed(0.0), Bound::Unbounded);
        let gamma0 = fl(self, "gamma0");
        let a = fl(self, "a");
        let b = fl(self, "b");
        let switch_tick = self.int("switch_tick", 0, i64::MAX).map(|v| v as u64);
        let anchor = match self.string("anchor") {
            None | Some("origin") => DecayAnchor::Origin,
            Some("switch") => DecayAnchor::Switch,
            Some(other) => {
                self.errors.push(format!("anchor: expected origin or switch; got `{other}`"));
                DecayAnchor::Origin
            }
        };
        let reject = |p: &mut Self, keys: &[&str], kind: &str| {
            for k in keys {
                if p.table.contains_key(*k) {
                    p.errors.push(format!("{k}: not used by schedule = {kind}"));
                }
            }
        };
        let schedule = match kind {
            None => {
                if required {
                    self.missing("schedule");
                }
                return None;
            }
            Some("constant") => {
                reject(self, &["a", "b", "switch_tick", "anchor"], "constant");
                StepSchedule::Constant { gamma0: gamma0.unwrap_or(0.001) }
            }
            Some("diminishing") => {
                reject(self, &["gamma0", "switch_tick", "anchor"], "diminishing");
                StepSchedule::Diminishing { a: a.unwrap_or(1.0), b: b.unwrap_or(100.0) }
            }
            Some("hybrid") => StepSchedule::Hybrid {
                gamma0: gamma0.unwrap_or(0.001),
                switch_tick: switch_tick.unwrap_or(5000),
                a: a.unwrap_or(50.0),
                b: b.unwrap_or(0.0),
                anchor,
            },
            Some(other) => {
                self.errors.push(format!("schedule: expected constant, diminishing or hybrid; got `{other}`"));
                return None;
            }
        };
        if let Err(e) = schedule.validate() {
            self.errors.push(format!("schedule: {e}"));
            return None;
        }
        Some(schedule)
    }
}

/// Snaps accumulated range values to 1e-9 so `0.1 + 2·0.1` prints as `0.3`.
fn round_grid(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}
