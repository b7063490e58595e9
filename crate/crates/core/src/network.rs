//! Unreliable point-to-point links between agents.
//!
//! Every ordered pair `(j, i)` has its own unidirectional channel. Each tick,
//! agent `j` offers a value to agent `i`; the channel either delivers it or
//! drops it. Receivers keep only the newest value they have seen from each
//! sender, identified by the tick at which the sender published it.
//!
//! Staleness is the age of the stored value, `now - origin_tick`. With
//! immediate delivery that is the number of ticks since the last successful
//! receipt; with queued delays it also counts time spent in flight.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::objective::Estimate;
use crate::seed::SimRng;

/// How messages move through a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryMode {
    /// Delivered in the tick it is sent, or lost.
    ErasureLatest,
    /// A surviving message waits a uniform `{0, …, max_delay}` ticks.
    DelayedQueue { max_delay: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    p_success: f64,
    mode: DeliveryMode,
    overrides: BTreeMap<(usize, usize), f64>,
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter { name, reason: format!("must lie in (0, 1], got {p}") });
    }
    Ok(())
}

impl ChannelConfig {
    pub fn new(p_success: f64, mode: DeliveryMode) -> Result<Self> {
        check_probability("p_success", p_success)?;
        if let DeliveryMode::DelayedQueue { max_delay: 0 } = mode {
            return Err(Error::InvalidParameter { name: "max_queue_delay", reason: "must be positive".into() });
        }
        Ok(Self { p_success, mode, overrides: BTreeMap::new() })
    }

    pub fn erasure(p_success: f64) -> Result<Self> {
        Self::new(p_success, DeliveryMode::ErasureLatest)
    }

    pub fn perfect() -> Self {
        Self::erasure(1.0).expect("1 is a valid probability")
    }

    /// Replaces the success probability of the channel `from -> to`.
    pub fn with_pair(mut self, from: usize, to: usize, p: f64) -> Result<Self> {
        check_probability("pair p_success", p)?;
        self.overrides.insert((from, to), p);
        Ok(self)
    }

    pub fn p_success(&self) -> f64 {
        self.p_success
    }

    pub fn mode(&self) -> DeliveryMode {
        self.mode
    }

    pub fn pair_probability(&self, from: usize, to: usize) -> f64 {
        self.overrides.get(&(from, to)).copied().unwrap_or(self.p_success)
    }
}

/// The latest value agent `owner` holds for every sender.
#[derive(Debug, Clone, PartialEq)]
pub struct Mailbox {
    owner: usize,
    last_value: Vec<f64>,
    origin: Vec<Option<u64>>,
    tag: Vec<u64>,
    staleness: Vec<u64>,
}

/// A value in transit, stamped with the tick it was produced at and an
/// opaque tag the receiver stores alongside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub value: f64,
    pub origin_tick: u64,
    pub tag: u64,
}

impl Message {
    pub fn new(value: f64, origin_tick: u64) -> Self {
        Self { value, origin_tick, tag: 0 }
    }
}

impl Mailbox {
    /// Mailbox pre-filled with values known to have been published at tick 0.
    pub fn new(owner: usize, initial: &[f64]) -> Self {
        let d = initial.len();
        Self { owner, last_value: initial.to_vec(), origin: vec![Some(0); d], tag: vec![0; d], staleness: vec![0; d] }
    }

    /// Mailbox that has heard nothing yet; unheard entries read as 0.
    pub fn empty(owner: usize, d: usize) -> Self {
        Self { owner, last_value: vec![0.0; d], origin: vec![None; d], tag: vec![0; d], staleness: vec![0; d] }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn last_value(&self) -> &[f64] {
        &self.last_value
    }

    /// Tick at which the stored value from `from` was published.
    pub fn origin_tick(&self, from: usize) -> Option<u64> {
        self.origin[from]
    }

    /// Tag carried by the stored value from `from`.
    pub fn tag(&self, from: usize) -> u64 {
        self.tag[from]
    }

    /// Age of each stored value as of the last tick processed.
    pub fn staleness(&self) -> &[u64] {
        &self.staleness
    }

    pub fn len(&self) -> usize {
        self.last_value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last_value.is_empty()
    }

    /// Stores `value` unless a value with a newer-or-equal origin is already held.
    pub fn offer(&mut self, from: usize, msg: Message) -> bool {
        match self.origin[from] {
            Some(held) if held >= msg.origin_tick => false,
            _ => {
                self.last_value[from] = msg.value;
                self.origin[from] = Some(msg.origin_tick);
                self.tag[from] = msg.tag;
                true
            }
        }
    }

    /// Sets the owner's own entry; always fresh.
    pub fn set_own(&mut self, value: f64, tick: u64) {
        let i = self.owner;
        self.last_value[i] = value;
        self.origin[i] = Some(tick);
        self.tag[i] = 0;
        self.staleness[i] = 0;
    }

    fn refresh_staleness(&mut self, now: u64) {
        for (j, (s, o)) in self.staleness.iter_mut().zip(&self.origin).enumerate() {
            *s = if j == self.owner {
                0
            } else {
                match o {
                    Some(t) => now.saturating_sub(*t),
                    None => now + 1,
                }
            };
        }
    }

    /// Writes the owner's view into `out`: its own current value at position
    /// `owner`, the last received value everywhere else.
    pub fn fill_view(&self, own_value: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.last_value);
        out[self.owner] = own_value;
    }
}

/// One channel use: whether `from`'s value reached `to` at `tick`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub tick: u64,
    pub from: usize,
    pub to: usize,
    pub delivered: bool,
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    arrival: u64,
    from: usize,
    to: usize,
    msg: Message,
}

/// All channels and mailboxes of one `d`-agent system.
#[derive(Debug, Clone)]
pub struct Network {
    config: ChannelConfig,
    rng: SimRng,
    mailboxes: Vec<Mailbox>,
    in_flight: Vec<InFlight>,
    records: Vec<DeliveryRecord>,
    keep_records: bool,
}

impl Network {
    /// Network whose mailboxes all start from `initial`, treated as published at tick 0.
    pub fn new(config: ChannelConfig, initial: &[f64], rng: SimRng) -> Self {
        let mailboxes = (0..initial.len()).map(|i| Mailbox::new(i, initial)).collect();
        Self::with_mailboxes(config, mailboxes, rng)
    }

    pub fn with_mailboxes(config: ChannelConfig, mailboxes: Vec<Mailbox>, rng: SimRng) -> Self {
        Self { config, rng, mailboxes, in_flight: Vec::new(), records: Vec::new(), keep_records: false }
    }

    /// Keep a [`DeliveryRecord`] for every channel use.
    pub fn record_deliveries(mut self, on: bool) -> Self {
        self.keep_records = on;
        self
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn agents(&self) -> usize {
        self.mailboxes.len()
    }

    pub fn mailbox(&self, i: usize) -> &Mailbox {
        &self.mailboxes[i]
    }

    pub fn mailbox_mut(&mut self, i: usize) -> &mut Mailbox {
        &mut self.mailboxes[i]
    }

    pub fn mailboxes(&self) -> &[Mailbox] {
        &self.mailboxes
    }

    pub fn records(&self) -> &[DeliveryRecord] {
        &self.records
    }

    pub fn take_records(&mut self) -> Vec<DeliveryRecord> {
        std::mem::take(&mut self.records)
    }

    /// Runs every channel once for `tick`. `publish(from, to)` gives the
    /// message `from` offers to `to`, or `None` if it has nothing to send.
    pub fn tick_deliveries_with<F>(&mut self, tick: u64, mut publish: F)
    where
        F: FnMut(usize, usize) -> Option<Message>,
    {
        let d = self.mailboxes.len();
        for to in 0..d {
            for from in 0..d {
                if from == to {
                    continue;
                }
                let p = self.config.pair_probability(from, to);
                let survives = p >= 1.0 || self.rng.random::<f64>() < p;
                let message = publish(from, to);
                let delivered = match self.config.mode {
                    DeliveryMode::ErasureLatest => match (survives, message) {
                        (true, Some(msg)) => {
                            self.mailboxes[to].offer(from, msg);
                            true
                        }
                        _ => false,
                    },
                    DeliveryMode::DelayedQueue { max_delay } => {
                        if survives {
                            let delay = self.rng.random_range(0..=max_delay);
                            if let Some(msg) = message {
                                self.in_flight.push(InFlight { arrival: tick + delay, from, to, msg });
                            }
                        }
                        false
                    }
                };
                if self.keep_records && matches!(self.config.mode, DeliveryMode::ErasureLatest) {
                    self.records.push(DeliveryRecord { tick, from, to, delivered });
                }
            }
        }
        if let DeliveryMode::DelayedQueue { .. } = self.config.mode {
            self.drain_arrivals(tick);
        }
        for mailbox in &mut self.mailboxes {
            mailbox.refresh_staleness(tick);
        }
    }

    fn drain_arrivals(&mut self, tick: u64) {
        let d = self.mailboxes.len();
        let mut accepted = vec![false; if self.keep_records { d * d } else { 0 }];
        let mut pending = Vec::with_capacity(self.in_flight.len());
        for msg in self.in_flight.drain(..) {
            if msg.arrival <= tick {
                let fresh = self.mailboxes[msg.to].offer(msg.from, msg.msg);
                if fresh && self.keep_records {
                    accepted[msg.to * d + msg.from] = true;
                }
            } else {
                pending.push(msg);
            }
        }
        self.in_flight = pending;
        if self.keep_records {
            for to in 0..d {
                for from in (0..d).filter(|&f| f != to) {
                    self.records.push(DeliveryRecord { tick, from, to, delivered: accepted[to * d + from] });
                }
            }
        }
    }

    /// Every agent offers its current coordinate `publishers[from]` to everyone.
    pub fn tick_deliveries(&mut self, tick: u64, publishers: &[f64]) {
        self.tick_deliveries_with(tick, |from, _| Some(Message::new(publishers[from], tick)));
    }

    /// Messages sent but not yet delivered (delayed-queue mode only).
    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}

/// The vector agent `mailbox.owner()` sees: its own current coordinate plus
/// the last received value of every other coordinate.
pub fn stale_view(mailbox: &Mailbox, own_value: f64) -> Estimate {
    let mut out = Vec::with_capacity(mailbox.len());
    mailbox.fill_view(own_value, &mut out);
    Estimate::new(out)
}

/// `‖true_x − view‖`.
pub fn staleness_error(true_x: &[f64], view: &[f64]) -> f64 {
    assert_eq!(true_x.len(), view.len(), "staleness_error needs equal lengths");
    let mut acc = 0.0;
    for (a, b) in true_x.iter().zip(view) {
        acc += (a - b) * (a - b);
    }
    acc.sqrt()
}
