//! Cumulative consensus: minimize `Σ_j f_j(x)` where agent `j` privately
//! holds `f_j` and controls coordinate `x(j)`.
//!
//! Every active agent `j` perturbs its stale view once, evaluates `f_j`
//! twice, and turns the single difference into a partial-derivative share
//! `ĝ^j(i)` for every coordinate `i`. Share `ĝ^j(i)` travels to agent `i`
//! over a second set of erasure channels; agent `i` descends on the sum of
//! the newest share it holds from each origin.
//!
//! Tick order: coordinate exchange, share computation, share exchange,
//! descent.

use crate::error::{Error, Result};
use crate::estimator::{enumerate_moments, perturbed_difference, PerturbationVector, SensitivityParam};
use crate::network::{staleness_error, ChannelConfig, Mailbox, Message, Network};
use crate::objective::{euclidean_norm, Estimate, ObjectiveSet};
use crate::runtime::{ActivationPolicy, AgentState, Init, StepSchedule, Trace, TraceRow, TrialStatus, DIVERGENCE_GUARD};
use crate::seed::{derive_rng, SimRng, Stream};

/// Agent `origin`'s estimate of `∂f_origin/∂x(target)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradShare {
    pub origin: usize,
    pub target: usize,
    pub value: f64,
    pub origin_tick: u64,
    /// How old the origin's copy of `x(target)` was when the share was computed.
    pub view_staleness: u64,
}

/// How agents produce their shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShareMode {
    /// One random perturbation per active tick (the algorithm as deployed).
    Sampled,
    /// Exact expectation over all sign patterns. Removes estimator noise so
    /// tests can isolate network effects; costs `2^{d+1}` evaluations.
    EnumeratedMean,
}

/// Shares for all `d` coordinates from one perturbation of `view`. Uses
/// exactly two evaluations of `f_origin`.
pub fn compute_shares_with(
    obj: &ObjectiveSet,
    origin: usize,
    view: &[f64],
    delta: &PerturbationVector,
    c: SensitivityParam,
    tick: u64,
) -> Result<Vec<GradShare>> {
    let f = obj.function(origin)?;
    if view.len() != obj.dim() || delta.len() != obj.dim() {
        return Err(Error::DimensionMismatch { expected: obj.dim(), actual: view.len().min(delta.len()) });
    }
    let mut scratch = Vec::with_capacity(view.len());
    let diff = perturbed_difference(f, view, delta.signs(), c.get(), &mut scratch)?;
    Ok(delta
        .signs()
        .iter()
        .enumerate()
        .map(|(target, s)| GradShare {
            origin,
            target,
            value: diff / (2.0 * c.get() * s),
            origin_tick: tick,
            view_staleness: 0,
        })
        .collect())
}

/// Draws a fresh perturbation from `rng` and computes all shares.
pub fn compute_shares<R: rand::Rng + ?Sized>(
    obj: &ObjectiveSet,
    origin: usize,
    view: &[f64],
    c: SensitivityParam,
    rng: &mut R,
    tick: u64,
) -> Result<Vec<GradShare>> {
    let delta = crate::estimator::sample_perturbation(rng, obj.dim())?;
    compute_shares_with(obj, origin, view, &delta, c, tick)
}

/// `x(i) ← x(i) − γ Σ_j share_j`; advances the local clock.
pub fn consensus_update(state: &mut AgentState, shares: &[f64], gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter { name: "gamma", reason: format!("must lie in [0, 1], got {gamma}") });
    }
    let total: f64 = shares.iter().sum();
    let next = state.own_coord() - gamma * total;
    if !next.is_finite() {
        return Err(Error::NumericalOverflow { point: vec![next] });
    }
    state.set_own_coord(next);
    state.tick_clock();
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ConsensusConfig {
    pub objective: ObjectiveSet,
    pub sensitivity: Vec<SensitivityParam>,
    /// Used for both stages; each stage draws its own drops.
    pub channels: ChannelConfig,
    pub activation: ActivationPolicy,
    pub schedule: StepSchedule,
    pub iterations: u64,
    pub seed: u64,
    pub init: Init,
    pub subsample_stride: u64,
    pub divergence_guard: f64,
    pub share_mode: ShareMode,
}

impl ConsensusConfig {
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
            share_mode: ShareMode::Sampled,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.objective.dim();
        if self.sensitivity.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: self.sensitivity.len() });
        }
        self.activation.validate()?;
        self.schedule.validate()?;
        if self.subsample_stride == 0 {
            return Err(Error::InvalidParameter { name: "subsample_stride", reason: "must be positive".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConsensusOutcome {
    pub trace: Trace,
    pub initial_estimate: Estimate,
    pub final_estimate: Estimate,
    pub status: TrialStatus,
    pub local_clocks: Vec<u64>,
    /// Total objective evaluations performed.
    pub evaluations: u64,
}

/// A consensus system advanced one tick at a time.
#[derive(Debug)]
pub struct ConsensusSimulation<'a> {
    cfg: &'a ConsensusConfig,
    agents: Vec<AgentState>,
    activation_rngs: Vec<SimRng>,
    coord_net: Network,
    share_net: Network,
    initial: Vec<f64>,
    coords: Vec<f64>,
    outgoing: Vec<Vec<f64>>,
    outgoing_origin: Vec<Option<u64>>,
    outgoing_view_age: Vec<Vec<u64>>,
    active: Vec<bool>,
    view: Vec<f64>,
    tick: u64,
    evaluations: u64,
    status: TrialStatus,
    trace: Trace,
}

impl<'a> ConsensusSimulation<'a> {
    pub fn new(cfg: &'a ConsensusConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.objective.dim();
        let initial = cfg.init.draw(d, cfg.seed)?;
        let agents = (0..d)
            .map(|i| AgentState::new(i, d, initial[i], cfg.sensitivity[i], derive_rng(cfg.seed, Stream::Estimator, i as u64)))
            .collect();
        let coord_net = Network::new(cfg.channels.clone(), &initial, derive_rng(cfg.seed, Stream::Network, 0));
        let share_boxes = (0..d).map(|i| Mailbox::empty(i, d)).collect();
        let share_net = Network::with_mailboxes(cfg.channels.clone(), share_boxes, derive_rng(cfg.seed, Stream::ShareNetwork, 0));
        Ok(Self {
            cfg,
            agents,
            activation_rngs: (0..d).map(|i| derive_rng(cfg.seed, Stream::Activation, i as u64)).collect(),
            coord_net,
            share_net,
            coords: initial.clone(),
            initial,
            outgoing: vec![vec![0.0; d]; d],
            outgoing_origin: vec![None; d],
            outgoing_view_age: vec![vec![0; d]; d],
            active: vec![false; d],
            view: Vec::with_capacity(d),
            tick: 0,
            evaluations: 0,
            status: TrialStatus::Completed,
            trace: Trace::new(cfg.subsample_stride, cfg.schedule.is_diminishing()),
        })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn status(&self) -> TrialStatus {
        self.status
    }

    pub fn share_mailbox(&self, i: usize) -> &Mailbox {
        self.share_net.mailbox(i)
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// `τ̂_ji(n) + τ_ij(n − τ̂_ji(n))` for every ordered pair `j ≠ i` whose
    /// share has reached `i`, as of the last processed tick.
    pub fn compound_staleness(&self) -> Vec<u64> {
        let d = self.agents.len();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            let mb = self.share_net.mailbox(i);
            for j in (0..d).filter(|&j| j != i) {
                if mb.origin_tick(j).is_some() {
                    out.push(mb.staleness()[j] + mb.tag(j));
                }
            }
        }
        out
    }

    fn shares_for(&mut self, j: usize, n: u64) -> Result<()> {
        let cfg = self.cfg;
        let d = self.agents.len();
        let agent = &mut self.agents[j];
        self.coord_net.mailbox(j).fill_view(agent.own_coord(), &mut self.view);
        match cfg.share_mode {
            ShareMode::Sampled => {
                let mut delta = PerturbationVector::ones(d);
                delta.resample(agent.rng_mut());
                let shares = compute_shares_with(&cfg.objective, j, &self.view, &delta, agent.sensitivity(), n)?;
                for s in shares {
                    self.outgoing[j][s.target] = s.value;
                }
                self.evaluations += 2;
            }
            ShareMode::EnumeratedMean => {
                let (mean, _) = enumerate_moments(cfg.objective.function(j)?, &self.view, agent.sensitivity())?;
                self.outgoing[j].copy_from_slice(&mean);
                self.evaluations += 2 << d;
            }
        }
        self.outgoing_origin[j] = Some(n);
        let ages = self.coord_net.mailbox(j).staleness();
        for i in 0..d {
            self.outgoing_view_age[j][i] = if i == j { 0 } else { ages[i] };
        }
        let own = self.outgoing[j][j];
        self.share_net.mailbox_mut(j).set_own(own, n);
        Ok(())
    }

    /// Advances one tick; `false` once the trial has diverged.
    pub fn step(&mut self) -> Result<bool> {
        if self.status.is_diverged() {
            return Ok(false);
        }
        let n = self.tick;
        let d = self.agents.len();
        let cfg = self.cfg;

        self.coord_net.tick_deliveries(n, &self.coords);
        for (i, rng) in self.activation_rngs.iter_mut().enumerate() {
            self.active[i] = cfg.activation.is_active(n, i, d, rng);
        }

        let mut errors = Vec::with_capacity(d);
        for i in 0..d {
            self.coord_net.mailbox(i).fill_view(self.coords[i], &mut self.view);
            errors.push(staleness_error(&self.coords, &self.view));
        }

        for j in 0..d {
            if !self.active[j] {
                continue;
            }
            match self.shares_for(j, n) {
                Ok(()) => {}
                Err(Error::NumericalOverflow { .. }) => {
                    self.status = TrialStatus::Diverged { tick: n };
                }
                Err(e) => return Err(e),
            }
        }

        let (outgoing, origin, ages) = (&self.outgoing, &self.outgoing_origin, &self.outgoing_view_age);
        self.share_net.tick_deliveries_with(n, |from, to| {
            origin[from].map(|t| Message { value: outgoing[from][to], origin_tick: t, tag: ages[from][to] })
        });

        let gamma_agent_0 = cfg.schedule.step_size(self.agents[0].local_clock());
        for i in 0..d {
            if !self.active[i] {
                continue;
            }
            let gamma = cfg.schedule.step_size(self.agents[i].local_clock());
            let shares = self.share_net.mailbox(i).last_value();
            if consensus_update(&mut self.agents[i], shares, gamma).is_err() {
                self.status = TrialStatus::Diverged { tick: n };
            }
        }
        for (x, a) in self.coords.iter_mut().zip(&self.agents) {
            *x = a.own_coord();
        }
        if self.coords.iter().any(|x| !x.is_finite() || x.abs() > cfg.divergence_guard) {
            self.status = TrialStatus::Diverged { tick: n };
        }

        let last_tick = cfg.iterations.saturating_sub(1);
        if self.trace.should_record(n, last_tick) || self.status.is_diverged() {
            let compound = self.compound_staleness();
            let compound_mean =
                if compound.is_empty() { 0.0 } else { compound.iter().sum::<u64>() as f64 / compound.len() as f64 };
            self.trace.push(TraceRow {
                tick: n,
                coords: self.coords.clone(),
                norm: euclidean_norm(&self.coords),
                staleness_error_mean: errors.iter().sum::<f64>() / d as f64,
                staleness_error: errors,
                gamma_agent_0,
                compound_staleness_mean: Some(compound_mean),
            });
        }
        self.tick += 1;
        Ok(!self.status.is_diverged())
    }

    pub fn run(mut self) -> Result<ConsensusOutcome> {
        while self.tick < self.cfg.iterations && !self.status.is_diverged() {
            self.step()?;
        }
        Ok(ConsensusOutcome {
            trace: self.trace,
            initial_estimate: Estimate::new(self.initial),
            final_estimate: Estimate::new(self.coords),
            status: self.status,
            local_clocks: self.agents.iter().map(|a| a.local_clock()).collect(),
            evaluations: self.evaluations,
        })
    }
}

pub fn run_consensus(cfg: &ConsensusConfig) -> Result<ConsensusOutcome> {
    ConsensusSimulation::new(cfg)?.run()
}
