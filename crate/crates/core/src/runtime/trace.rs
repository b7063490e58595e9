use std::io::Write;

use crate::error::{Error, Result};

/// Plain decimal for moderate magnitudes, scientific notation otherwise.
/// Either form parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// State of the system after one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    /// Coordinates after the tick's updates.
    pub coords: Vec<f64>,
    pub norm: f64,
    /// Per-agent `‖x_n − view_i‖`, measured before the tick's updates.
    pub staleness_error: Vec<f64>,
    pub staleness_error_mean: f64,
    /// Step size agent 0 used (or would have used) this tick.
    pub gamma_agent_0: f64,
    /// Mean compound share-plus-coordinate staleness; consensus runs only.
    pub compound_staleness_mean: Option<f64>,
}

/// Subsampled per-tick records: every `stride`-th tick plus the final one.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    stride: u64,
    diminishing_schedule: bool,
    rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new(stride: u64, diminishing_schedule: bool) -> Self {
        assert!(stride > 0, "subsample stride must be positive");
        Self { stride, diminishing_schedule, rows: Vec::new() }
    }

    pub fn stride(&self) -> u64 {
        self.stride
    }

    /// Whether the run used a step-size sequence that vanishes.
    pub fn diminishing_schedule(&self) -> bool {
        self.diminishing_schedule
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn should_record(&self, tick: u64, last_tick: u64) -> bool {
        tick % self.stride == 0 || tick == last_tick
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    /// CSV with columns `tick,norm,staleness_err_mean,gamma_agent_0`, plus
    /// `compound_staleness_mean` when any row carries it.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let compound = self.rows.iter().any(|r| r.compound_staleness_mean.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["tick", "norm", "staleness_err_mean", "gamma_agent_0"];
        if compound {
            header.push("compound_staleness_mean");
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.tick.to_string(), format_float(r.norm), format_float(r.staleness_error_mean), format_float(r.gamma_agent_0)];
            if compound {
                rec.push(r.compound_staleness_mean.map(format_float).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean staleness error over the first and last `window` recorded rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StalenessDecayReport {
    pub window: usize,
    pub first_mean: f64,
    pub last_mean: f64,
    /// False when the step sizes do not vanish, in which case staleness
    /// errors are not expected to decay.
    pub premise_holds: bool,
}

impl StalenessDecayReport {
    /// `last_mean / first_mean`; zero when both are zero.
    pub fn ratio(&self) -> f64 {
        if self.first_mean == 0.0 {
            if self.last_mean == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            self.last_mean / self.first_mean
        }
    }

    /// `Some(true)` if the errors shrank, `None` if the premise fails.
    pub fn decayed(&self) -> Option<bool> {
        self.premise_holds.then(|| self.last_mean < self.first_mean || (self.first_mean == 0.0 && self.last_mean == 0.0))
    }
}

pub fn staleness_decay_report(trace: &Trace, window: usize) -> Result<StalenessDecayReport> {
    let rows = trace.rows();
    if rows.is_empty() {
        return Err(Error::InvalidParameter { name: "trace", reason: "trace has no rows".into() });
    }
    if window == 0 {
        return Err(Error::InvalidParameter { name: "window", reason: "must be positive".into() });
    }
    let w = window.min(rows.len());
    let mean = |rs: &[TraceRow]| rs.iter().map(|r| r.staleness_error_mean).sum::<f64>() / rs.len() as f64;
    Ok(StalenessDecayReport {
        window: w,
        first_mean: mean(&rows[..w]),
        last_mean: mean(&rows[rows.len() - w..]),
        premise_holds: trace.diminishing_schedule(),
    })
}
