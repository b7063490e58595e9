use rand::Rng;

use crate::error::{Error, Result};
use crate::estimator::{perturbed_difference, PerturbationVector, SensitivityParam};
use crate::network::Mailbox;
use crate::objective::ObjectiveSet;
use crate::seed::SimRng;

/// Which agents update at a given tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationPolicy {
    AllActive,
    /// Each agent independently active with probability `p_active`.
    Bernoulli { p_active: f64 },
    /// Agent `i` is active at tick `n` iff `n mod d == i`.
    RoundRobin,
}

impl ActivationPolicy {
    pub fn validate(&self) -> Result<()> {
        if let ActivationPolicy::Bernoulli { p_active } = *self {
            if !(p_active > 0.0 && p_active <= 1.0) {
                return Err(Error::InvalidParameter {
                    name: "p_active",
                    reason: format!("must lie in (0, 1], got {p_active}"),
                });
            }
        }
        Ok(())
    }

    /// Draws agent `i`'s activation for `tick` from its own activation stream.
    pub fn is_active(&self, tick: u64, agent: usize, agents: usize, rng: &mut SimRng) -> bool {
        match *self {
            ActivationPolicy::AllActive => true,
            ActivationPolicy::Bernoulli { p_active } => p_active >= 1.0 || rng.random::<f64>() < p_active,
            ActivationPolicy::RoundRobin => tick % agents as u64 == agent as u64,
        }
    }
}

/// One agent's private state: its coordinate, local clock and random stream.
#[derive(Debug, Clone)]
pub struct AgentState {
    index: usize,
    local_clock: u64,
    own_coord: f64,
    rng: SimRng,
    c: SensitivityParam,
    delta: PerturbationVector,
    view: Vec<f64>,
    scratch: Vec<f64>,
}

impl AgentState {
    pub fn new(index: usize, agents: usize, own_coord: f64, c: SensitivityParam, rng: SimRng) -> Self {
        Self {
            index,
            local_clock: 0,
            own_coord,
            rng,
            c,
            delta: PerturbationVector::ones(agents),
            view: Vec::with_capacity(agents),
            scratch: Vec::with_capacity(agents),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Number of updates this agent has performed.
    pub fn local_clock(&self) -> u64 {
        self.local_clock
    }

    pub fn own_coord(&self) -> f64 {
        self.own_coord
    }

    pub fn sensitivity(&self) -> SensitivityParam {
        self.c
    }

    /// Perturbation drawn in the most recent update.
    pub fn last_delta(&self) -> &PerturbationVector {
        &self.delta
    }

    /// The vector the agent would feed its estimator right now.
    pub fn view(&self, mailbox: &Mailbox) -> Vec<f64> {
        let mut v = Vec::with_capacity(mailbox.len());
        mailbox.fill_view(self.own_coord, &mut v);
        v
    }

    /// One DSPG step: draw `Δ`, estimate `∂F_i/∂x(i)` at the stale view and
    /// move the own coordinate by `−γ·ĝ`. Returns the estimate used.
    pub fn update(&mut self, obj: &ObjectiveSet, mailbox: &Mailbox, gamma: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidParameter { name: "gamma", reason: format!("must lie in [0, 1], got {gamma}") });
        }
        let f = obj.function(self.index)?;
        self.delta.resample(&mut self.rng);
        mailbox.fill_view(self.own_coord, &mut self.view);
        let c = self.c.get();
        let diff = perturbed_difference(f, &self.view, self.delta.signs(), c, &mut self.scratch)?;
        let g = diff / (2.0 * c * self.delta.signs()[self.index]);
        self.own_coord -= gamma * g;
        self.local_clock += 1;
        Ok(g)
    }

    pub(crate) fn rng_mut(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub(crate) fn set_own_coord(&mut self, v: f64) {
        self.own_coord = v;
    }

    pub(crate) fn tick_clock(&mut self) {
        self.local_clock += 1;
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;

    use super::*;
    use crate::objective::{Constant, LocalObjective, Quadratic};
    use crate::seed::rng_from_seed;

    fn c(v: f64) -> SensitivityParam {
        SensitivityParam::new(v).unwrap()
    }

    #[test]
    fn zero_step_still_ticks_clock() {
        let obj = crate::objective::make_quadratic_set(2, 1).unwrap().objective_set();
        let mb = Mailbox::new(0, &[1.0, 2.0]);
        let mut agent = AgentState::new(0, 2, 1.0, c(0.1), rng_from_seed(1));
        agent.update(&obj, &mb, 0.0).unwrap();
        assert_eq!(agent.own_coord(), 1.0);
        assert_eq!(agent.local_clock(), 1);
    }

    #[test]
    fn one_dimensional_square_is_exact() {
        let obj = ObjectiveSet::new(vec![Arc::new(Quadratic::new(DMatrix::identity(1, 1)).unwrap()) as Arc<dyn LocalObjective>])
            .unwrap();
        for seed in 0..8 {
            let mb = Mailbox::new(0, &[1.0]);
            let mut agent = AgentState::new(0, 1, 1.0, c(0.1), rng_from_seed(seed));
            agent.update(&obj, &mb, 0.1).unwrap();
            assert!((agent.own_coord() - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_objective_is_fixed_point() {
        let obj = ObjectiveSet::new(vec![
            Arc::new(Constant { dim: 2, value: 1.0 }) as Arc<dyn LocalObjective>,
            Arc::new(Constant { dim: 2, value: 1.0 }),
        ])
        .unwrap();
        let mb = Mailbox::new(1, &[3.0, -4.0]);
        let mut agent = AgentState::new(1, 2, -4.0, c(2.0), rng_from_seed(3));
        for gamma in [0.0, 0.5, 1.0] {
            agent.update(&obj, &mb, gamma).unwrap();
            assert_eq!(agent.own_coord(), -4.0);
        }
    }

    #[test]
    fn gamma_outside_unit_interval_rejected() {
        let obj = crate::objective::make_quadratic_set(1, 0).unwrap().objective_set();
        let mb = Mailbox::new(0, &[1.0]);
        let mut agent = AgentState::new(0, 1, 1.0, c(0.1), rng_from_seed(0));
        assert!(agent.update(&obj, &mb, 1.5).is_err());
        assert!(agent.update(&obj, &mb, -0.1).is_err());
    }

    #[test]
    fn activation_policies() {
        let mut rng = rng_from_seed(11);
        assert!(ActivationPolicy::AllActive.is_active(5, 2, 4, &mut rng));
        assert!(ActivationPolicy::RoundRobin.is_active(6, 2, 4, &mut rng));
        assert!(!ActivationPolicy::RoundRobin.is_active(7, 2, 4, &mut rng));
        assert!(ActivationPolicy::Bernoulli { p_active: 0.0 }.validate().is_err());
        let on = (0..10_000)
            .filter(|&t| ActivationPolicy::Bernoulli { p_active: 0.3 }.is_active(t, 0, 1, &mut rng))
            .count();
        assert!((on as f64 / 10_000.0 - 0.3).abs() < 0.02);
    }
}
