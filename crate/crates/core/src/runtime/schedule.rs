use crate::error::{Error, Result};

/// Where the `a/(n + b)` phase of a hybrid schedule starts counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayAnchor {
    /// `a / (n + b)`: the decay continues the agent's own update count.
    Origin,
    /// `a / (n − switch_tick + b)`: the decay restarts at the switch.
    Switch,
}

/// Step-size sequence, indexed by an agent's local clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant { gamma0: f64 },
    /// `a / (n + b)`.
    Diminishing { a: f64, b: f64 },
    /// `gamma0` for `n < switch_tick`, then `a/(n + b)` or `a/(n − switch_tick + b)`.
    Hybrid { gamma0: f64, switch_tick: u64, a: f64, b: f64, anchor: DecayAnchor },
}

impl StepSchedule {
    /// 5000 steps of 0.001, then `50/n`: starts at 1/100 and decays like `1/n`.
    pub fn reference_hybrid() -> Self {
        StepSchedule::Hybrid { gamma0: 0.001, switch_tick: 5000, a: 50.0, b: 0.0, anchor: DecayAnchor::Origin }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        match *self {
            StepSchedule::Constant { gamma0 } => {
                if !(gamma0 > 0.0 && gamma0 <= 1.0) {
                    return bad("gamma0", format!("must lie in (0, 1], got {gamma0}"));
                }
            }
            StepSchedule::Diminishing { a, b } => {
                if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
                    return bad("a, b", format!("must be positive and finite, got a={a}, b={b}"));
                }
                if a / b > 1.0 {
                    return bad("a, b", format!("first step a/b = {} exceeds 1", a / b));
                }
            }
            StepSchedule::Hybrid { gamma0, switch_tick, a, b, anchor } => {
                if !(gamma0 > 0.0 && gamma0 <= 1.0) {
                    return bad("gamma0", format!("must lie in (0, 1], got {gamma0}"));
                }
                if !(a > 0.0 && a.is_finite()) || !(b >= 0.0 && b.is_finite()) {
                    return bad("a, b", format!("need a > 0 and b >= 0, got a={a}, b={b}"));
                }
                let first_denominator = match anchor {
                    DecayAnchor::Origin => switch_tick as f64 + b,
                    DecayAnchor::Switch => b,
                };
                if !(first_denominator > 0.0) || a / first_denominator > 1.0 {
                    return bad(
                        "a, b",
                        format!("first diminishing step a/{first_denominator} must be finite and at most 1"),
                    );
                }
            }
        }
        Ok(())
    }

    /// `γ` at local clock `n` (the number of updates the agent has made so far).
    pub fn step_size(&self, n: u64) -> f64 {
        match *self {
            StepSchedule::Constant { gamma0 } => gamma0,
            StepSchedule::Diminishing { a, b } => a / (n as f64 + b),
            StepSchedule::Hybrid { gamma0, switch_tick, a, b, anchor } => {
                if n < switch_tick {
                    gamma0
                } else {
                    let k = match anchor {
                        DecayAnchor::Origin => n as f64,
                        DecayAnchor::Switch => (n - switch_tick) as f64,
                    };
                    a / (k + b)
                }
            }
        }
    }

    /// Whether the sequence eventually vanishes.
    pub fn is_diminishing(&self) -> bool {
        !matches!(self, StepSchedule::Constant { .. })
    }
}
