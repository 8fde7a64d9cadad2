//! Simulated communication medium with bounded delays and packet dropouts.
//!
//! A [`Channel`] carries messages over the edges of a [`GraphSchedule`].
//! Each send attempt is dropped with probability `drop_prob`; a successful
//! send is delivered after a delay in `0..=T2` ticks. The delivery guarantee
//! is enforced constructively: once an edge has seen `T1` consecutive drops,
//! its next attempt always succeeds, so every window of `T1 + 1` consecutive
//! attempts on an edge contains at least one success.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{Edge, GraphSchedule};

/// How the delay of a successful send is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DelayLaw {
    /// Uniform over the integers `0..=T2`.
    #[default]
    Uniform,
    /// Always the same delay; must not exceed `T2`.
    Fixed(usize),
    /// Always `T2`, the slowest admissible delivery.
    Max,
}

/// How send attempts are dropped (before the forced-success rule applies).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropModel {
    Bernoulli(f64),
    /// Drop every attempt that the guarantee does not force through.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub t1: usize,
    pub t2: usize,
    pub drops: DropModel,
    pub delay_law: DelayLaw,
    pub seed: u64,
}

impl ChannelModel {
    pub fn new(t1: usize, t2: usize, drop_prob: f64, seed: u64) -> Result<Self> {
        let model = ChannelModel {
            t1,
            t2,
            drops: DropModel::Bernoulli(drop_prob),
            delay_law: DelayLaw::Uniform,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    /// Unit delay, no drops.
    pub fn ideal() -> Self {
        ChannelModel {
            t1: 0,
            t2: 1,
            drops: DropModel::Bernoulli(0.0),
            delay_law: DelayLaw::Fixed(1),
            seed: 0,
        }
    }

    pub fn with_delay_law(mut self, law: DelayLaw) -> Result<Self> {
        self.delay_law = law;
        self.validate()?;
        Ok(self)
    }

    pub fn with_drops(mut self, drops: DropModel) -> Result<Self> {
        self.drops = drops;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t2 == 0 {
            return Err(Error::config("T2 must be at least one tick"));
        }
        if let DropModel::Bernoulli(p) = self.drops {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!(
                    "drop probability {p} outside [0, 1)"
                )));
            }
        }
        if let DelayLaw::Fixed(d) = self.delay_law {
            if d > self.t2 {
                return Err(Error::config(format!(
                    "fixed delay {d} exceeds T2 = {}",
                    self.t2
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message<P> {
    pub src: usize,
    pub dst: usize,
    pub payload: P,
    pub sent_tick: i64,
    pub deliver_tick: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Delivered { at: i64 },
    Dropped,
}

/// One send attempt as recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attempt {
    pub tick: i64,
    pub src: usize,
    pub dst: usize,
    pub outcome: SendOutcome,
    pub forced: bool,
    pub digest: u64,
}

/// Stable fingerprint of a payload, used in trace dumps.
pub trait PayloadDigest {
    fn digest(&self) -> u64;
}

impl<T: PayloadDigest + ?Sized> PayloadDigest for Arc<T> {
    fn digest(&self) -> u64 {
        (**self).digest()
    }
}

impl PayloadDigest for [f64] {
    fn digest(&self) -> u64 {
        fnv1a(self.iter().map(|x| x.to_bits()))
    }
}

impl PayloadDigest for Vec<f64> {
    fn digest(&self) -> u64 {
        self.as_slice().digest()
    }
}

/// FNV-1a over 64-bit words.
pub(crate) fn fnv1a(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

pub struct Channel<P> {
    model: ChannelModel,
    graph: Arc<GraphSchedule>,
    rng: ChaCha8Rng,
    consecutive_drops: HashMap<Edge, usize>,
    pending: BTreeMap<(i64, usize), Vec<Message<P>>>,
    attempts: Vec<Attempt>,
}

impl<P: Clone + PayloadDigest> Channel<P> {
    pub fn new(model: ChannelModel, graph: Arc<GraphSchedule>) -> Result<Self> {
        model.validate()?;
        Ok(Channel {
            rng: ChaCha8Rng::seed_from_u64(model.seed),
            model,
            graph,
            consecutive_drops: HashMap::new(),
            pending: BTreeMap::new(),
            attempts: Vec::new(),
        })
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn graph(&self) -> &GraphSchedule {
        &self.graph
    }

    pub fn attempt_send(&mut self, edge: Edge, payload: P, t: i64) -> Result<SendOutcome> {
        let (src, dst) = edge;
        if !self.graph.has_edge(edge, t) {
            return Err(Error::InactiveEdge { src, dst, tick: t });
        }
        let drops = self.consecutive_drops.entry(edge).or_insert(0);
        let forced = *drops >= self.model.t1;
        // Always consume one draw so the stream does not depend on the counter.
        let u: f64 = self.rng.random();
        let dropped = !forced
            && match self.model.drops {
                DropModel::Bernoulli(p) => u < p,
                DropModel::Adversarial => true,
            };
        let digest = payload.digest();
        let outcome = if dropped {
            *drops += 1;
            SendOutcome::Dropped
        } else {
            *drops = 0;
            let delay = match self.model.delay_law {
                DelayLaw::Uniform => self.rng.random_range(0..=self.model.t2),
                DelayLaw::Fixed(d) => d,
                DelayLaw::Max => self.model.t2,
            };
            let at = t + delay as i64;
            self.pending.entry((at, dst)).or_default().push(Message {
                src,
                dst,
                payload,
                sent_tick: t,
                deliver_tick: at,
            });
            SendOutcome::Delivered { at }
        };
        self.attempts.push(Attempt {
            tick: t,
            src,
            dst,
            outcome,
            forced,
            digest,
        });
        Ok(outcome)
    }

    /// Removes and returns every message for `dst` due at tick `t`, ordered
    /// by `(src, sent_tick)`.
    pub fn drain(&mut self, dst: usize, t: i64) -> Vec<Message<P>> {
        let mut msgs = self.pending.remove(&(t, dst)).unwrap_or_default();
        msgs.sort_by_key(|m| (m.src, m.sent_tick));
        msgs
    }

    /// Discards messages due before `t` that nobody drained.
    pub fn discard_before(&mut self, t: i64) {
        self.pending = self.pending.split_off(&(t, 0));
    }

    pub fn pending_len(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }

    pub fn attempts(&self) -> &[Attempt] {
        &self.attempts
    }

    /// Checks on the recorded attempts that each edge's attempts never
    /// contain more than `T1` consecutive drops and that every delivery
    /// respects the delay bound.
    pub fn check_guarantee(&self) -> Result<()> {
        check_attempts(&self.attempts, self.model.t1, self.model.t2)
    }

    /// CSV of delivered messages: `tick,src,dst,sent_tick,digest`.
    pub fn trace_csv(&self) -> String {
        let mut rows: Vec<_> = self
            .attempts
            .iter()
            .filter_map(|a| match a.outcome {
                SendOutcome::Delivered { at } => Some((at, a.src, a.dst, a.tick, a.digest)),
                SendOutcome::Dropped => None,
            })
            .collect();
        rows.sort();
        let mut out = String::from("tick,src,dst,sent_tick,digest\n");
        for (at, src, dst, sent, digest) in rows {
            let _ = writeln!(out, "{at},{},{},{sent},{digest:016x}", src + 1, dst + 1);
        }
        out
    }
}

pub fn check_attempts(attempts: &[Attempt], t1: usize, t2: usize) -> Result<()> {
    let mut run: HashMap<Edge, usize> = HashMap::new();
    for a in attempts {
        let r = run.entry((a.src, a.dst)).or_insert(0);
        match a.outcome {
            SendOutcome::Dropped => {
                *r += 1;
                if *r > t1 {
                    return Err(Error::Topology(format!(
                        "edge {}->{} dropped {} consecutive attempts (T1 = {t1})",
                        a.src, a.dst, r
                    )));
                }
            }
            SendOutcome::Delivered { at } => {
                *r = 0;
                if at < a.tick || at - a.tick > t2 as i64 {
                    return Err(Error::Topology(format!(
                        "message {}->{} sent at {} delivered at {at} (T2 = {t2})",
                        a.src, a.dst, a.tick
                    )));
                }
            }
        }
    }
    Ok(())
}
