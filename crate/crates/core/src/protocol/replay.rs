//! Offline drivers: push a fixed stream of scalar TD errors through a
//! protocol and record what every agent reads, plus the partial-sum
//! invariant check for the acyclic protocol.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::protocol::acyclic::AcyclicState;
use crate::protocol::general::Slot;
use crate::protocol::network::{AcyclicNetwork, Aggregator, CommStats, GeneralNetwork};
use crate::topology::GraphSchedule;
use crate::transport::ChannelModel;

/// What every agent read at every tick of a replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub k: usize,
    /// `readouts[t][i]`: agent `i`'s team TD error of tick `t - k`, once
    /// `t >= k`.
    pub readouts: Vec<Option<Vec<f64>>>,
    pub stats: CommStats,
}

fn lanes(row: &[f64]) -> Vec<Vec<f64>> {
    row.iter().map(|&d| vec![d]).collect()
}

fn collect(agg: &mut dyn Aggregator, deltas: &[Vec<f64>]) -> Result<Vec<Option<Vec<f64>>>> {
    deltas
        .iter()
        .enumerate()
        .map(|(t, row)| {
            Ok(agg
                .tick(t as i64, &lanes(row))?
                .map(|r| r.into_iter().map(|l| l[0]).collect()))
        })
        .collect()
}

/// Runs the general protocol. `deltas[t][i]` is agent `i`'s TD error of
/// tick `t`.
pub fn replay_general(
    graph: Arc<GraphSchedule>,
    model: ChannelModel,
    k: Option<usize>,
    deltas: &[Vec<f64>],
) -> Result<Replay> {
    let mut net = match k {
        Some(k) => GeneralNetwork::with_k(graph, model, k)?,
        None => GeneralNetwork::new(graph, model)?,
    };
    let readouts = collect(&mut net, deltas)?;
    net.channel().check_guarantee()?;
    Ok(Replay {
        k: net.delay(),
        readouts,
        stats: net.stats(),
    })
}

/// Per-tick snapshot of one agent's acyclic state.
#[derive(Debug, Clone, PartialEq)]
pub struct AcyclicSnapshot {
    pub tick: i64,
    pub agent: usize,
    /// `x[a]` for ages `0..=K`.
    pub partial_sums: Vec<f64>,
    /// `(neighbour, z[j][a])` for ages `0..=K`.
    pub exclusions: Vec<(usize, Vec<f64>)>,
}

/// Lane 0 of one agent's state.
pub(crate) fn snapshot(s: &AcyclicState, tick: i64) -> AcyclicSnapshot {
    AcyclicSnapshot {
        tick,
        agent: s.agent(),
        partial_sums: s.partial_sums().iter().map(|l| l[0]).collect(),
        exclusions: s
            .neighbors()
            .iter()
            .enumerate()
            .map(|(idx, &j)| (j, s.exclusions(idx).iter().map(|l| l[0]).collect()))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcyclicReplay {
    pub replay: Replay,
    pub trace: Vec<AcyclicSnapshot>,
}

/// Runs the acyclic protocol and records every agent's state every tick.
pub fn replay_acyclic(
    graph: Arc<GraphSchedule>,
    k: Option<usize>,
    deltas: &[Vec<f64>],
) -> Result<AcyclicReplay> {
    let mut net = match k {
        Some(k) => AcyclicNetwork::with_k(graph, k, 1)?,
        None => AcyclicNetwork::new(graph, 1)?,
    };
    let mut readouts = Vec::with_capacity(deltas.len());
    let mut trace = Vec::new();
    for (t, row) in deltas.iter().enumerate() {
        let r = net.tick(t as i64, &lanes(row))?;
        readouts.push(r.map(|r| r.into_iter().map(|l| l[0]).collect()));
        trace.extend(net.states().iter().map(|s| snapshot(s, t as i64)));
    }
    Ok(AcyclicReplay {
        replay: Replay {
            k: net.delay(),
            readouts,
            stats: net.stats(),
        },
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantCheck {
    pub holds: bool,
    pub worst_error: f64,
    pub checked: usize,
}

/// Checks the closed form of every traced partial sum and exclusion sum.
///
/// For agent `i`, origin tick `o` and age `a`:
/// `x[a] = Σ δ_o(l)` over `l` within `a` hops of `i`, and for a neighbour
/// `j`, `z[j][a] = Σ δ_o(l)` over `l` at distance exactly `a` from `i` and
/// not at distance exactly `a - 1` from `j`. TD errors before tick 0 count
/// as zero.
pub fn partial_sum_invariant(
    graph: &GraphSchedule,
    deltas: &[Vec<f64>],
    trace: &[AcyclicSnapshot],
    tol: f64,
) -> Result<InvariantCheck> {
    let n = graph.n_agents();
    let dist: Vec<Vec<Option<usize>>> = (0..n)
        .map(|i| graph.undirected_distances(i, 0))
        .collect::<Result<_>>()?;
    let delta = |o: i64, l: usize| -> f64 {
        if o < 0 {
            0.0
        } else {
            deltas[o as usize][l]
        }
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for snap in trace {
        let i = snap.agent;
        if i >= n {
            return Err(Error::arg(format!("trace mentions agent {i}")));
        }
        for (a, &x) in snap.partial_sums.iter().enumerate() {
            let o = snap.tick - a as i64;
            let expect: f64 = (0..n)
                .filter(|&l| matches!(dist[i][l], Some(d) if d <= a))
                .map(|l| delta(o, l))
                .sum();
            worst = worst.max((x - expect).abs());
            checked += 1;
        }
        for (j, zs) in &snap.exclusions {
            for (a, &z) in zs.iter().enumerate() {
                let o = snap.tick - a as i64;
                let expect: f64 = (0..n)
                    .filter(|&l| {
                        dist[i][l] == Some(a) && (a == 0 || dist[*j][l] != Some(a - 1))
                    })
                    .map(|l| delta(o, l))
                    .sum();
                worst = worst.max((z - expect).abs());
                checked += 1;
            }
        }
    }
    Ok(InvariantCheck {
        holds: worst <= tol,
        worst_error: worst,
        checked,
    })
}

/// CSV `tick,agent,tau,delta_hat,rho` of an acyclic trace (agents 1-based);
/// `rho` is blank at age `K`, which is never transmitted.
pub fn acyclic_trace_csv(trace: &[AcyclicSnapshot]) -> String {
    let by_key: HashMap<(usize, i64), &AcyclicSnapshot> =
        trace.iter().map(|s| ((s.agent, s.tick), s)).collect();
    let mut out = String::from("tick,agent,tau,delta_hat,rho\n");
    for s in trace {
        let k = s.partial_sums.len() - 1;
        for (a, x) in s.partial_sums.iter().enumerate() {
            let rho = if a == 0 {
                Some(*x)
            } else if a < k {
                Some(
                    x - by_key
                        .get(&(s.agent, s.tick - 1))
                        .map_or(0.0, |p| p.partial_sums[a - 1]),
                )
            } else {
                None
            };
            let _ = writeln!(
                out,
                "{},{},{a},{x:?},{}",
                s.tick,
                s.agent + 1,
                rho.map(|r| format!("{r:?}")).unwrap_or_default()
            );
        }
    }
    out
}

/// CSV `tick,agent,tau,slot,value,known` of the general protocol's windows
/// at the end of one tick (agents and slots 1-based, lane 0 only).
pub fn general_window_csv(tick: i64, net: &GeneralNetwork, header: bool) -> String {
    let mut out = String::new();
    if header {
        out.push_str("tick,agent,tau,slot,value,known\n");
    }
    for h in net.histories() {
        for (tau, v) in h.window().iter().enumerate() {
            for (slot, s) in v.entries().iter().enumerate() {
                let (value, known) = match s {
                    Slot::Known(l) => (format!("{:?}", l[0]), 1),
                    Slot::Unknown => (String::new(), 0),
                };
                let _ = writeln!(
                    out,
                    "{tick},{},{tau},{},{value},{known}",
                    h.owner() + 1,
                    slot + 1
                );
            }
        }
    }
    out
}
