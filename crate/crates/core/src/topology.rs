//! Time-varying directed communication graphs.
//!
//! Agents are numbered `0..n_agents`. A [`GraphSchedule`] is a finite,
//! repeating sequence of directed edge sets: the snapshot active at tick `t`
//! is `period[t mod period.len()]`. A schedule with a single snapshot is
//! static.
//!
//! Two notions of distance are used. The acyclic protocol works on the
//! undirected closure of a static graph ([`GraphSchedule::khop_neighbors`]),
//! while the latency bound of the general protocol is a directed quantity
//! ([`GraphSchedule::latency_bound`]).

use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};

pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSchedule {
    n_agents: usize,
    period: Vec<BTreeSet<Edge>>,
}

/// Structural summary of a static graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    /// The undirected closure is a forest.
    pub acyclic_undirected: bool,
    pub strongly_connected: bool,
    /// Largest directed distance between an ordered pair of agents; `None`
    /// when the graph is not strongly connected.
    pub diameter: Option<usize>,
}

impl GraphSchedule {
    /// A static graph with the given directed edges.
    pub fn new_static(n_agents: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        Self::time_varying(n_agents, vec![edges.into_iter().collect()])
    }

    /// A repeating sequence of snapshots.
    pub fn time_varying(n_agents: usize, period: Vec<Vec<Edge>>) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::arg("a graph needs at least one agent"));
        }
        if period.is_empty() {
            return Err(Error::arg("a schedule needs at least one snapshot"));
        }
        let mut snapshots = Vec::with_capacity(period.len());
        for edges in period {
            let mut set = BTreeSet::new();
            for (src, dst) in edges {
                if src >= n_agents || dst >= n_agents {
                    return Err(Error::arg(format!(
                        "edge ({src}, {dst}) has an endpoint outside 0..{n_agents}"
                    )));
                }
                if src == dst {
                    return Err(Error::arg(format!("self-loop at agent {src}")));
                }
                set.insert((src, dst));
            }
            snapshots.push(set);
        }
        // Collapse a constant schedule to a single snapshot.
        if snapshots.iter().all(|s| *s == snapshots[0]) {
            snapshots.truncate(1);
        }
        Ok(GraphSchedule {
            n_agents,
            period: snapshots,
        })
    }

    /// A static graph from undirected edges; each becomes a pair of arcs.
    pub fn undirected(n_agents: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let arcs: Vec<Edge> = edges.into_iter().flat_map(|(a, b)| [(a, b), (b, a)]).collect();
        Self::new_static(n_agents, arcs)
    }

    /// Bidirectional path `0 - 1 - ... - (n-1)`.
    pub fn line(n_agents: usize) -> Result<Self> {
        Self::undirected(n_agents, (1..n_agents).map(|i| (i - 1, i)))
    }

    /// Every ordered pair of distinct agents.
    pub fn complete(n_agents: usize) -> Result<Self> {
        let edges = (0..n_agents)
            .flat_map(|i| (0..n_agents).filter(move |&j| j != i).map(move |j| (i, j)));
        Self::new_static(n_agents, edges)
    }

    /// Bidirectional star with agent 0 at the center.
    pub fn star(n_agents: usize) -> Result<Self> {
        Self::undirected(n_agents, (1..n_agents).map(|i| (0, i)))
    }

    /// Tree given by a parent array: agent `i + 1` hangs off `parents[i]`.
    pub fn tree(parents: &[usize]) -> Result<Self> {
        let n = parents.len() + 1;
        for (i, &p) in parents.iter().enumerate() {
            if p > i {
                return Err(Error::arg(format!(
                    "parent {p} of agent {} must precede it",
                    i + 1
                )));
            }
        }
        Self::undirected(n, parents.iter().enumerate().map(|(i, &p)| (p, i + 1)))
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn is_static(&self) -> bool {
        self.period.len() == 1
    }

    pub fn period(&self) -> usize {
        self.period.len()
    }

    pub fn edges_at(&self, t: i64) -> &BTreeSet<Edge> {
        let p = self.period.len() as i64;
        &self.period[t.rem_euclid(p) as usize]
    }

    pub fn has_edge(&self, edge: Edge, t: i64) -> bool {
        self.edges_at(t).contains(&edge)
    }

    pub fn out_neighbors(&self, i: usize, t: i64) -> impl Iterator<Item = usize> + '_ {
        self.edges_at(t).range((i, 0)..=(i, usize::MAX)).map(|&(_, d)| d)
    }

    pub fn in_neighbors(&self, i: usize, t: i64) -> Vec<usize> {
        self.edges_at(t)
            .iter()
            .filter(|&&(_, d)| d == i)
            .map(|&(s, _)| s)
            .collect()
    }

    /// Every arc's reverse is also present at every tick.
    pub fn is_symmetric(&self) -> bool {
        self.period
            .iter()
            .all(|s| s.iter().all(|&(a, b)| s.contains(&(b, a))))
    }

    /// Edges present in every snapshot of the schedule.
    pub fn persistent_edges(&self) -> BTreeSet<Edge> {
        let mut it = self.period.iter();
        let first = it.next().cloned().unwrap_or_default();
        it.fold(first, |acc, s| acc.intersection(s).copied().collect())
    }

    fn check_agent(&self, i: usize) -> Result<()> {
        if i >= self.n_agents {
            Err(Error::arg(format!(
                "agent {i} outside 0..{}",
                self.n_agents
            )))
        } else {
            Ok(())
        }
    }

    fn undirected_adjacency(&self, t: i64) -> Vec<Vec<usize>> {
        let mut adj = vec![BTreeSet::new(); self.n_agents];
        for &(a, b) in self.edges_at(t) {
            adj[a].insert(b);
            adj[b].insert(a);
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Undirected hop distances from `i` on the snapshot at tick `t`.
    pub fn undirected_distances(&self, i: usize, t: i64) -> Result<Vec<Option<usize>>> {
        self.check_agent(i)?;
        Ok(bfs(&self.undirected_adjacency(t), i))
    }

    /// Agents at undirected distance exactly `k` from `i` at tick `t`
    /// (`k = 0` gives `{i}`).
    pub fn khop_neighbors(&self, i: usize, k: usize, t: i64) -> Result<BTreeSet<usize>> {
        Ok(self
            .undirected_distances(i, t)?
            .into_iter()
            .enumerate()
            .filter(|&(_, d)| d == Some(k))
            .map(|(j, _)| j)
            .collect())
    }

    /// Agents within undirected distance `k` of `i` at tick `t`.
    pub fn khop_ball(&self, i: usize, k: usize, t: i64) -> Result<BTreeSet<usize>> {
        Ok(self
            .undirected_distances(i, t)?
            .into_iter()
            .enumerate()
            .filter(|&(_, d)| matches!(d, Some(d) if d <= k))
            .map(|(j, _)| j)
            .collect())
    }

    /// Largest directed distance over ordered pairs of `edges`, or `None`
    /// if some agent cannot reach another.
    fn directed_diameter(&self, edges: &BTreeSet<Edge>) -> Option<usize> {
        let mut adj = vec![Vec::new(); self.n_agents];
        for &(a, b) in edges {
            adj[a].push(b);
        }
        let mut diameter = 0;
        for i in 0..self.n_agents {
            for d in bfs(&adj, i) {
                diameter = diameter.max(d?);
            }
        }
        Some(diameter)
    }

    /// Worst-case number of ticks for a TD error to reach every agent,
    /// `K = k * (T1 + T2)`.
    ///
    /// `k` is the directed diameter of the persistent subgraph, the edges
    /// active at every tick. Those edges carry the channel's delivery
    /// guarantee at all times, so `k` hops over them bound the relay path;
    /// transient edges can only shorten it. A single agent uses `k = 1`.
    pub fn latency_bound(&self, t1: usize, t2: usize) -> Result<usize> {
        if t2 == 0 {
            return Err(Error::arg("T2 must be positive"));
        }
        let persistent = self.persistent_edges();
        let k = self.directed_diameter(&persistent).ok_or_else(|| {
            Error::Topology(
                "the persistent subgraph is not strongly connected; no finite latency bound"
                    .into(),
            )
        })?;
        Ok(k.max(1) * (t1 + t2))
    }

    pub fn classify(&self) -> Result<Classification> {
        if !self.is_static() {
            return Err(Error::config(
                "acyclicity is only defined for a static graph",
            ));
        }
        let adj = self.undirected_adjacency(0);
        let undirected_edges: usize = adj.iter().map(Vec::len).sum::<usize>() / 2;
        let mut components = 0;
        let mut seen = vec![false; self.n_agents];
        for i in 0..self.n_agents {
            if !seen[i] {
                components += 1;
                for (j, d) in bfs(&adj, i).into_iter().enumerate() {
                    if d.is_some() {
                        seen[j] = true;
                    }
                }
            }
        }
        let diameter = self.directed_diameter(&self.period[0]);
        Ok(Classification {
            // A forest has exactly n - c edges.
            acyclic_undirected: undirected_edges + components == self.n_agents,
            strongly_connected: diameter.is_some(),
            diameter,
        })
    }
}

fn bfs(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap_or(0);
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn khop_on_a_line() {
        let g = GraphSchedule::line(5).unwrap();
        assert_eq!(g.khop_neighbors(0, 2, 0).unwrap(), set(&[2]));
        assert_eq!(g.khop_neighbors(2, 1, 0).unwrap(), set(&[1, 3]));
        assert!(g.khop_neighbors(0, 5, 0).unwrap().is_empty());
        assert_eq!(g.khop_neighbors(3, 0, 0).unwrap(), set(&[3]));
        assert!(g.khop_neighbors(5, 1, 0).is_err());
    }

    #[test]
    fn latency_bounds() {
        assert_eq!(GraphSchedule::line(5).unwrap().latency_bound(0, 1).unwrap(), 4);
        assert_eq!(GraphSchedule::complete(7).unwrap().latency_bound(0, 1).unwrap(), 1);
        assert_eq!(GraphSchedule::star(6).unwrap().latency_bound(1, 2).unwrap(), 6);
        assert_eq!(GraphSchedule::line(1).unwrap().latency_bound(0, 1).unwrap(), 1);

        let pairs = GraphSchedule::undirected(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(pairs.latency_bound(0, 1), Err(Error::Topology(_))));

        // One-way ring: directed diameter n - 1.
        let ring = GraphSchedule::new_static(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert_eq!(ring.latency_bound(0, 1).unwrap(), 3);
    }

    #[test]
    fn latency_bound_uses_persistent_edges() {
        let backbone = vec![(0, 1), (1, 0), (1, 2), (2, 1)];
        let mut extra = backbone.clone();
        extra.push((0, 2));
        let g = GraphSchedule::time_varying(3, vec![backbone, extra]).unwrap();
        assert!(!g.is_static());
        assert_eq!(g.latency_bound(1, 1).unwrap(), 4);

        let alternating =
            GraphSchedule::time_varying(2, vec![vec![(0, 1)], vec![(1, 0)]]).unwrap();
        assert!(alternating.latency_bound(0, 1).is_err());
    }

    #[test]
    fn classification() {
        let line = GraphSchedule::line(5).unwrap().classify().unwrap();
        assert_eq!(
            line,
            Classification {
                acyclic_undirected: true,
                strongly_connected: true,
                diameter: Some(4)
            }
        );
        let triangle = GraphSchedule::undirected(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        assert!(!triangle.classify().unwrap().acyclic_undirected);
        let pairs = GraphSchedule::undirected(4, [(0, 1), (2, 3)]).unwrap();
        let c = pairs.classify().unwrap();
        assert!(!c.strongly_connected);
        assert!(c.acyclic_undirected);
        assert_eq!(c.diameter, None);

        let tv = GraphSchedule::time_varying(2, vec![vec![(0, 1)], vec![(1, 0)]]).unwrap();
        assert!(matches!(tv.classify(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_malformed_edges() {
        assert!(GraphSchedule::new_static(3, [(0, 3)]).is_err());
        assert!(GraphSchedule::new_static(3, [(1, 1)]).is_err());
        assert!(GraphSchedule::new_static(0, []).is_err());
        assert!(GraphSchedule::tree(&[0, 2]).is_err());
    }

    #[test]
    fn constant_schedule_collapses_to_static() {
        let e = vec![(0, 1), (1, 0)];
        let g = GraphSchedule::time_varying(2, vec![e.clone(), e]).unwrap();
        assert!(g.is_static());
    }
}
