//! Lockstep drivers that move local TD errors through a network and hand
//! each agent its (possibly delayed) team-average TD error.
//!
//! Every learning algorithm in this crate differs only in its
//! [`Aggregator`]: the general and acyclic protocols, a centralized
//! reference, and the neighbourhood averages used by the baselines.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::protocol::acyclic::{AcyclicState, RhoMessage};
use crate::protocol::general::{mean_ascending, TdHistory, TdVector};
use crate::topology::GraphSchedule;
use crate::transport::{Channel, ChannelModel, PayloadDigest};

/// Communication counters of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommStats {
    pub attempts: usize,
    pub drops: usize,
    /// Scalar values per lane in the smallest and largest payload sent.
    pub min_payload: Option<usize>,
    pub max_payload: Option<usize>,
}

impl CommStats {
    fn record(&mut self, values: usize, dropped: bool) {
        self.attempts += 1;
        self.drops += usize::from(dropped);
        self.min_payload = Some(self.min_payload.map_or(values, |m| m.min(values)));
        self.max_payload = Some(self.max_payload.map_or(values, |m| m.max(values)));
    }
}

pub trait Aggregator: Send {
    fn n_agents(&self) -> usize;

    /// Ticks between observing a local TD error and receiving the team
    /// quantity that includes it.
    fn delay(&self) -> usize;

    /// Feeds tick `t`'s local TD errors (one lane per agent, ticks strictly
    /// consecutive from zero) and returns, once `t >= delay()`, every agent's
    /// aggregated TD error of tick `t - delay()`.
    fn tick(&mut self, t: i64, deltas: &[Vec<f64>]) -> Result<Option<Vec<Vec<f64>>>>;

    fn stats(&self) -> CommStats {
        CommStats::default()
    }

    /// Starts recording protocol state for [`Aggregator::traces`].
    fn enable_trace(&mut self) {}

    /// Named CSV dumps of whatever was recorded.
    fn traces(&self) -> Vec<(&'static str, String)> {
        Vec::new()
    }
}

fn check_deltas(n: usize, deltas: &[Vec<f64>]) -> Result<()> {
    if deltas.len() != n {
        return Err(Error::arg(format!(
            "{} TD error lanes for {n} agents",
            deltas.len()
        )));
    }
    if deltas.iter().flatten().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("local TD error".into()));
    }
    Ok(())
}

type WindowPayload = Arc<Vec<TdVector>>;

/// Vector fill-in over a time-varying graph and a lossy channel.
pub struct GeneralNetwork {
    graph: Arc<GraphSchedule>,
    channel: Channel<WindowPayload>,
    histories: Vec<TdHistory>,
    k: usize,
    next_tick: i64,
    stats: CommStats,
    window_trace: Option<String>,
}

impl GeneralNetwork {
    /// Uses the latency bound of `graph` under `model` as `K`.
    pub fn new(graph: Arc<GraphSchedule>, model: ChannelModel) -> Result<Self> {
        let k = graph.latency_bound(model.t1, model.t2)?;
        Self::with_k(graph, model, k)
    }

    /// `k` may exceed the latency bound (all agents then wait longer) but
    /// not undercut it.
    pub fn with_k(graph: Arc<GraphSchedule>, model: ChannelModel, k: usize) -> Result<Self> {
        let bound = graph.latency_bound(model.t1, model.t2)?;
        if k < bound {
            return Err(Error::config(format!(
                "K = {k} is below the latency bound {bound}"
            )));
        }
        let n = graph.n_agents();
        let histories = (0..n)
            .map(|i| TdHistory::new(i, n, k))
            .collect::<Result<_>>()?;
        Ok(GeneralNetwork {
            channel: Channel::new(model, graph.clone())?,
            graph,
            histories,
            k,
            next_tick: 0,
            stats: CommStats::default(),
            window_trace: None,
        })
    }

    pub fn histories(&self) -> &[TdHistory] {
        &self.histories
    }

    pub fn channel(&self) -> &Channel<WindowPayload> {
        &self.channel
    }

    fn receive(&mut self, t: i64) -> Result<()> {
        for i in 0..self.histories.len() {
            for msg in self.channel.drain(i, t) {
                self.histories[i].merge(&msg.payload)?;
            }
        }
        Ok(())
    }
}

impl Aggregator for GeneralNetwork {
    fn n_agents(&self) -> usize {
        self.histories.len()
    }

    fn delay(&self) -> usize {
        self.k
    }

    fn tick(&mut self, t: i64, deltas: &[Vec<f64>]) -> Result<Option<Vec<Vec<f64>>>> {
        check_deltas(self.histories.len(), deltas)?;
        if t != self.next_tick {
            return Err(Error::arg(format!("expected tick {}, got {t}", self.next_tick)));
        }
        self.next_tick += 1;
        for (h, d) in self.histories.iter_mut().zip(deltas) {
            h.advance(Arc::from(d.as_slice()))?;
        }
        // Deliveries due now are merged before sending so that they are
        // relayed within the same tick.
        self.receive(t)?;
        let graph = self.graph.clone();
        for i in 0..self.histories.len() {
            let payload: WindowPayload = Arc::new(self.histories[i].outgoing());
            let values: usize = payload.iter().map(|v| v.entries().len()).sum();
            for j in graph.out_neighbors(i, t) {
                let outcome = self.channel.attempt_send((i, j), payload.clone(), t)?;
                self.stats
                    .record(values, outcome == crate::transport::SendOutcome::Dropped);
            }
        }
        // Zero-delay deliveries.
        self.receive(t)?;
        if self.window_trace.is_some() {
            let rows = crate::protocol::replay::general_window_csv(t, self, false);
            self.window_trace.as_mut().expect("checked").push_str(&rows);
        }

        let origin = t - self.k as i64;
        if origin < 0 {
            return Ok(None);
        }
        let out = self
            .histories
            .iter()
            .map(|h| h.team_td(origin))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(out))
    }

    fn stats(&self) -> CommStats {
        self.stats
    }

    fn enable_trace(&mut self) {
        self.window_trace = Some(String::from("tick,agent,tau,slot,value,known\n"));
    }

    fn traces(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![("channel", self.channel.trace_csv())];
        if let Some(w) = &self.window_trace {
            out.push(("windows", w.clone()));
        }
        out
    }
}

impl PayloadDigest for RhoMessage {
    fn digest(&self) -> u64 {
        crate::transport::fnv1a(self.iter().flatten().map(|x| x.to_bits()))
    }
}

/// Differential aggregation on a static tree (or forest-free connected
/// acyclic graph) with unit delay and no drops.
pub struct AcyclicNetwork {
    graph: Arc<GraphSchedule>,
    channel: Channel<Arc<RhoMessage>>,
    states: Vec<AcyclicState>,
    k: usize,
    next_tick: i64,
    stats: CommStats,
    trace: Option<Vec<crate::protocol::replay::AcyclicSnapshot>>,
}

impl AcyclicNetwork {
    pub fn new(graph: Arc<GraphSchedule>, width: usize) -> Result<Self> {
        let k = graph.latency_bound(0, 1)?;
        Self::with_k(graph, k, width)
    }

    pub fn with_k(graph: Arc<GraphSchedule>, k: usize, width: usize) -> Result<Self> {
        let class = graph.classify()?;
        if !class.acyclic_undirected {
            return Err(Error::config("the acyclic protocol needs an acyclic graph"));
        }
        if !graph.is_symmetric() {
            return Err(Error::config(
                "the acyclic protocol needs bidirectional edges",
            ));
        }
        let bound = graph.latency_bound(0, 1)?;
        if k < bound {
            return Err(Error::config(format!(
                "K = {k} is below the graph diameter {bound}"
            )));
        }
        let n = graph.n_agents();
        let states = (0..n)
            .map(|i| AcyclicState::new(i, n, graph.out_neighbors(i, 0).collect(), k, width))
            .collect::<Result<_>>()?;
        Ok(AcyclicNetwork {
            channel: Channel::new(ChannelModel::ideal(), graph.clone())?,
            graph,
            states,
            k,
            next_tick: 0,
            stats: CommStats::default(),
            trace: None,
        })
    }

    pub fn states(&self) -> &[AcyclicState] {
        &self.states
    }
}

impl Aggregator for AcyclicNetwork {
    fn n_agents(&self) -> usize {
        self.states.len()
    }

    fn delay(&self) -> usize {
        self.k
    }

    fn tick(&mut self, t: i64, deltas: &[Vec<f64>]) -> Result<Option<Vec<Vec<f64>>>> {
        check_deltas(self.states.len(), deltas)?;
        if t != self.next_tick {
            return Err(Error::arg(format!("expected tick {}, got {t}", self.next_tick)));
        }
        self.next_tick += 1;
        for i in 0..self.states.len() {
            let msgs = self.channel.drain(i, t);
            let received: BTreeMap<usize, &RhoMessage> =
                msgs.iter().map(|m| (m.src, &*m.payload)).collect();
            self.states[i].step(&deltas[i], &received)?;
        }
        for i in 0..self.states.len() {
            let payload = Arc::new(self.states[i].outgoing());
            for j in self.graph.out_neighbors(i, t) {
                self.channel.attempt_send((i, j), payload.clone(), t)?;
                self.stats.record(payload.len(), false);
            }
        }
        if let Some(tr) = self.trace.as_mut() {
            tr.extend(self.states.iter().map(|s| crate::protocol::replay::snapshot(s, t)));
        }
        if t < self.k as i64 {
            return Ok(None);
        }
        Ok(Some(self.states.iter().map(AcyclicState::readout).collect()))
    }

    fn stats(&self) -> CommStats {
        self.stats
    }

    fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    fn traces(&self) -> Vec<(&'static str, String)> {
        self.trace
            .as_ref()
            .map(|t| vec![("partial_sums", crate::protocol::replay::acyclic_trace_csv(t))])
            .unwrap_or_default()
    }
}

/// Agent `i` receives the mean of `δ` over `groups[i]` (ascending ids),
/// `delay` ticks late.
///
/// With every group equal to all agents this is the centralized reference;
/// with `k`-hop balls and delay `k` it is the scalable actor-critic baseline;
/// with singleton groups and no delay it is independent learning.
pub struct NeighborhoodAverage {
    groups: Vec<Vec<usize>>,
    delay: usize,
    history: VecDeque<Vec<Vec<f64>>>,
    next_tick: i64,
}

impl NeighborhoodAverage {
    pub fn new(groups: Vec<Vec<usize>>, delay: usize) -> Result<Self> {
        let n = groups.len();
        let mut groups = groups;
        for (i, g) in groups.iter_mut().enumerate() {
            g.sort_unstable();
            g.dedup();
            if g.is_empty() || g.iter().any(|&j| j >= n) {
                return Err(Error::arg(format!("invalid averaging group for agent {i}")));
            }
        }
        Ok(NeighborhoodAverage {
            groups,
            delay,
            history: VecDeque::with_capacity(delay + 1),
            next_tick: 0,
        })
    }

    /// Exact team mean, `delay` ticks late.
    pub fn centralized(n_agents: usize, delay: usize) -> Result<Self> {
        Self::new(vec![(0..n_agents).collect(); n_agents], delay)
    }

    /// Own TD error only, no delay.
    pub fn independent(n_agents: usize) -> Result<Self> {
        Self::new((0..n_agents).map(|i| vec![i]).collect(), 0)
    }

    /// Mean over the undirected `k`-hop ball of each agent, `k` ticks late.
    pub fn khop(graph: &GraphSchedule, k: usize) -> Result<Self> {
        if !graph.is_static() {
            return Err(Error::config("k-hop averaging needs a static graph"));
        }
        let groups = (0..graph.n_agents())
            .map(|i| Ok(graph.khop_ball(i, k, 0)?.into_iter().collect()))
            .collect::<Result<_>>()?;
        Self::new(groups, k)
    }
}

impl Aggregator for NeighborhoodAverage {
    fn n_agents(&self) -> usize {
        self.groups.len()
    }

    fn delay(&self) -> usize {
        self.delay
    }

    fn tick(&mut self, t: i64, deltas: &[Vec<f64>]) -> Result<Option<Vec<Vec<f64>>>> {
        check_deltas(self.groups.len(), deltas)?;
        if t != self.next_tick {
            return Err(Error::arg(format!("expected tick {}, got {t}", self.next_tick)));
        }
        self.next_tick += 1;
        self.history.push_back(deltas.to_vec());
        if self.history.len() <= self.delay {
            return Ok(None);
        }
        let old = self.history.pop_front().expect("non-empty history");
        Ok(Some(
            self.groups
                .iter()
                .map(|g| {
                    let lanes: Vec<&[f64]> = g.iter().map(|&j| old[j].as_slice()).collect();
                    mean_ascending(&lanes)
                })
                .collect(),
        ))
    }
}
