//! The asynchronous DSPG loop.
//!
//! Each tick runs in a fixed order: channels deliver, the active set is
//! drawn, every active agent performs one step indexed by its own local
//! clock, and a trace row is recorded. A master seed derives separate streams
//! for initialization, the network, each agent's perturbations and each
//! agent's activation.

mod agent;
mod schedule;
mod trace;

use rand::Rng;

pub use agent::{ActivationPolicy, AgentState};
pub use schedule::{DecayAnchor, StepSchedule};
pub use trace::{format_float, staleness_decay_report, StalenessDecayReport, Trace, TraceRow};

use crate::error::{Error, Result};
use crate::estimator::SensitivityParam;
use crate::network::{staleness_error, ChannelConfig, DeliveryRecord, Network};
use crate::objective::{Estimate, ObjectiveSet};
use crate::seed::{derive_rng, SimRng, Stream};

/// Any coordinate beyond this magnitude marks the trial as diverged.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Starting point of a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Uniform on `[−radius, radius]^d`, drawn from the init stream.
    Uniform { radius: f64 },
    Fixed(Vec<f64>),
}

impl Default for Init {
    fn default() -> Self {
        Init::Uniform { radius: 5.0 }
    }
}

impl Init {
    pub(crate) fn draw(&self, d: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            Init::Uniform { radius } => {
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidParameter { name: "init_radius", reason: format!("got {radius}") });
                }
                let mut rng = derive_rng(seed, Stream::Init, 0);
                Ok((0..d).map(|_| if *radius == 0.0 { 0.0 } else { rng.random_range(-*radius..=*radius) }).collect())
            }
            Init::Fixed(x) => {
                if x.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter { name: "init", reason: "coordinates must be finite".into() });
                }
                Ok(x.clone())
            }
        }
    }
}

/// Everything one trial needs.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub objective: ObjectiveSet,
    /// One sensitivity per agent.
    pub sensitivity: Vec<SensitivityParam>,
    pub channels: ChannelConfig,
    pub activation: ActivationPolicy,
    pub schedule: StepSchedule,
    pub iterations: u64,
    pub seed: u64,
    pub init: Init,
    pub subsample_stride: u64,
    pub divergence_guard: f64,
    pub record_deliveries: bool,
}

impl SimulationConfig {
    /// All agents share `c`; every channel succeeds with probability `p_success`.
    /// Remaining fields take their defaults: all agents active, the reference
    /// hybrid schedule, 20000 ticks, uniform init on `[−5, 5]^d`.
    pub fn new(objective: ObjectiveSet, c: f64, p_success: f64, seed: u64) -> Result<Self> {
        let d = objective.dim();
        Ok(Self {
            objective,
            sensitivity: vec![SensitivityParam::new(c)?; d],
            channels: ChannelConfig::erasure(p_success)?,
            activation: ActivationPolicy::AllActive,
            schedule: StepSchedule::reference_hybrid(),
            iterations: 20_000,
            seed,
            init: Init::default(),
            subsample_stride: 100,
            divergence_guard: DIVERGENCE_GUARD,
            record_deliveries: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.sensitivity.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: self.sensitivity.len() });
        }
        self.activation.validate()?;
        self.schedule.validate()?;
        if self.subsample_stride == 0 {
            return Err(Error::InvalidParameter { name: "subsample_stride", reason: "must be positive".into() });
        }
        if !(self.divergence_guard > 0.0) {
            return Err(Error::InvalidParameter { name: "divergence_guard", reason: "must be positive".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Completed,
    /// A coordinate left the guard box or an objective overflowed at `tick`.
    Diverged { tick: u64 },
}

impl TrialStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, TrialStatus::Diverged { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrialStatus::Completed => "ok",
            TrialStatus::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub trace: Trace,
    pub initial_estimate: Estimate,
    pub final_estimate: Estimate,
    pub status: TrialStatus,
    pub local_clocks: Vec<u64>,
    pub total_updates: u64,
    pub deliveries: Vec<DeliveryRecord>,
}

/// A DSPG system that can be advanced one tick at a time.
#[derive(Debug)]
pub struct Simulation<'a> {
    cfg: &'a SimulationConfig,
    agents: Vec<AgentState>,
    activation_rngs: Vec<SimRng>,
    network: Network,
    initial: Vec<f64>,
    coords: Vec<f64>,
    views: Vec<f64>,
    active: Vec<bool>,
    tick: u64,
    total_updates: u64,
    status: TrialStatus,
    trace: Trace,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim();
        let initial = cfg.init.draw(d, cfg.seed)?;
        let agents = (0..d)
            .map(|i| AgentState::new(i, d, initial[i], cfg.sensitivity[i], derive_rng(cfg.seed, Stream::Estimator, i as u64)))
            .collect();
        let activation_rngs = (0..d).map(|i| derive_rng(cfg.seed, Stream::Activation, i as u64)).collect();
        let network = Network::new(cfg.channels.clone(), &initial, derive_rng(cfg.seed, Stream::Network, 0))
            .record_deliveries(cfg.record_deliveries);
        Ok(Self {
            cfg,
            agents,
            activation_rngs,
            network,
            coords: initial.clone(),
            initial,
            views: Vec::with_capacity(d),
            active: vec![false; d],
            tick: 0,
            total_updates: 0,
            status: TrialStatus::Completed,
            trace: Trace::new(cfg.subsample_stride, cfg.schedule.is_diminishing()),
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn status(&self) -> TrialStatus {
        self.status
    }

    /// Agents active in the most recent tick.
    pub fn last_active(&self) -> &[bool] {
        &self.active
    }

    /// Advances one tick. Returns the per-agent staleness errors measured
    /// before the updates, or `None` once the trial has diverged.
    pub fn step(&mut self) -> Result<Option<Vec<f64>>> {
        if self.status.is_diverged() {
            return Ok(None);
        }
        let n = self.tick;
        let d = self.agents.len();
        let cfg = self.cfg;

        self.network.tick_deliveries(n, &self.coords);

        for (i, rng) in self.activation_rngs.iter_mut().enumerate() {
            self.active[i] = cfg.activation.is_active(n, i, d, rng);
        }

        let mut errors = Vec::with_capacity(d);
        for i in 0..d {
            self.network.mailbox(i).fill_view(self.coords[i], &mut self.views);
            errors.push(staleness_error(&self.coords, &self.views));
        }
        let gamma_agent_0 = cfg.schedule.step_size(self.agents[0].local_clock());

        for i in 0..d {
            if !self.active[i] {
                continue;
            }
            let agent = &mut self.agents[i];
            let gamma = cfg.schedule.step_size(agent.local_clock());
            match agent.update(&cfg.objective, self.network.mailbox(i), gamma) {
                Ok(_) => {}
                Err(Error::NumericalOverflow { .. }) => {
                    self.status = TrialStatus::Diverged { tick: n };
                }
                Err(e) => return Err(e),
            }
            self.total_updates += 1;
        }
        for (x, agent) in self.coords.iter_mut().zip(&self.agents) {
            *x = agent.own_coord();
        }
        if self.coords.iter().any(|x| !x.is_finite() || x.abs() > cfg.divergence_guard) {
            self.status = TrialStatus::Diverged { tick: n };
        }

        let last_tick = cfg.iterations.saturating_sub(1);
        if self.trace.should_record(n, last_tick) || self.status.is_diverged() {
            let mean = errors.iter().sum::<f64>() / d as f64;
            self.trace.push(TraceRow {
                tick: n,
                coords: self.coords.clone(),
                norm: crate::objective::euclidean_norm(&self.coords),
                staleness_error: errors.clone(),
                staleness_error_mean: mean,
                gamma_agent_0,
                compound_staleness_mean: None,
            });
        }
        self.tick += 1;
        Ok(Some(errors))
    }

    /// Runs the remaining ticks up to the configured iteration count.
    pub fn run(mut self) -> Result<SimulationOutcome> {
        while self.tick < self.cfg.iterations && !self.status.is_diverged() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(mut self) -> SimulationOutcome {
        SimulationOutcome {
            deliveries: self.network.take_records(),
            trace: self.trace,
            initial_estimate: Estimate::new(self.initial),
            final_estimate: Estimate::new(self.coords),
            status: self.status,
            local_clocks: self.agents.iter().map(|a| a.local_clock()).collect(),
            total_updates: self.total_updates,
        }
    }
}

/// Runs one full DSPG trial.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationOutcome> {
    Simulation::new(cfg)?.run()
}
