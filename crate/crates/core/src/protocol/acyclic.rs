//! Differential aggregation for static acyclic graphs with unit delay.
//!
//! Instead of relaying other agents' TD errors, each agent keeps partial
//! sums and sends only their per-tick increments, `K` numbers per lane.
//!
//! For an origin tick `o` and age `a = t - o`, agent `i` holds
//!
//! * `x[a]`, the sum of `δ_o` over all agents within `a` hops of `i`;
//! * `rho[a] = x[a] - x[a-1]`, the increment sent to the neighbours;
//! * `z[j][a]`, per neighbour `j`, the sum of `δ_o` over agents at distance
//!   `a` from `i` but not within `a - 1` hops of `j`.
//!
//! Each tick the ages shift by one and
//!
//! ```text
//! x'[a]    = x[a-1] + Σ_j ( ρʲ[a-1] - z₋₂[j][a-2] )
//! rho'[a]  = x'[a] - x[a-1]
//! z'[j][a] = z₋₂[j][a-2] + rho'[a] - ρʲ[a-1]
//! ```
//!
//! where `ρʲ` is the increment vector neighbour `j` sent one tick earlier
//! and `z₋₂` is this agent's `z` from two ticks earlier (zero before the
//! start and for negative ages). On a tree, `x[a]` covers every agent once
//! `a` reaches the eccentricity of `i`, so `x[K] / N` is the team average of
//! origin tick `t - K`.
//!
//! The state keeps ages `0..=K`; only ages `0..K` of `rho` are transmitted.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AcyclicState {
    agent: usize,
    n_agents: usize,
    k: usize,
    width: usize,
    tick: i64,
    neighbors: Vec<usize>,
    x: Vec<Vec<f64>>,
    rho: Vec<Vec<f64>>,
    z: Vec<Vec<Vec<f64>>>,
    z_prev: Vec<Vec<Vec<f64>>>,
}

/// Increments sent by one agent in one tick: `K` ages, each a lane.
pub type RhoMessage = Vec<Vec<f64>>;

impl AcyclicState {
    pub fn new(
        agent: usize,
        n_agents: usize,
        neighbors: Vec<usize>,
        k: usize,
        width: usize,
    ) -> Result<Self> {
        if agent >= n_agents {
            return Err(Error::arg(format!("agent {agent} outside 0..{n_agents}")));
        }
        if k == 0 {
            return Err(Error::config("the acyclic protocol needs K >= 1"));
        }
        let mut neighbors = neighbors;
        neighbors.sort_unstable();
        neighbors.dedup();
        if neighbors.iter().any(|&j| j == agent || j >= n_agents) {
            return Err(Error::arg("invalid neighbour list"));
        }
        let zeros = vec![vec![0.0; width]; k + 1];
        let z = vec![zeros.clone(); neighbors.len()];
        Ok(AcyclicState {
            agent,
            n_agents,
            k,
            width,
            tick: -1,
            neighbors,
            x: zeros.clone(),
            rho: zeros,
            z: z.clone(),
            z_prev: z,
        })
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn tick(&self) -> i64 {
        self.tick
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// Partial sums by age, `x[a]` for origin tick `tick - a`.
    pub fn partial_sums(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// `z[j][a]` for the `idx`-th neighbour (in ascending id order).
    pub fn exclusions(&self, idx: usize) -> &[Vec<f64>] {
        &self.z[idx]
    }

    /// The `K` increments to send this tick.
    pub fn outgoing(&self) -> RhoMessage {
        self.rho[..self.k].to_vec()
    }

    /// One tick of the recursion. `received` maps each neighbour to the
    /// increments it sent during the previous tick; it may be empty only on
    /// the first tick.
    pub fn step(&mut self, delta: &[f64], received: &BTreeMap<usize, &RhoMessage>) -> Result<()> {
        if delta.len() != self.width {
            return Err(Error::arg(format!(
                "TD error lane of width {} for a state of width {}",
                delta.len(),
                self.width
            )));
        }
        let first = self.tick < 0;
        let zero_msg: RhoMessage = vec![vec![0.0; self.width]; self.k];
        let mut incoming = Vec::with_capacity(self.neighbors.len());
        for j in &self.neighbors {
            match received.get(j) {
                Some(m) if m.len() == self.k && m.iter().all(|l| l.len() == self.width) => {
                    incoming.push(*m)
                }
                Some(_) => return Err(Error::arg(format!("malformed increments from agent {j}"))),
                None if first => incoming.push(&zero_msg),
                None => {
                    return Err(Error::config(format!(
                        "agent {} got no increments from neighbour {j} at tick {}; \
                         the acyclic protocol needs unit delay without drops",
                        self.agent,
                        self.tick + 1
                    )))
                }
            }
        }
        if let Some(j) = received.keys().find(|j| !self.neighbors.contains(j)) {
            return Err(Error::config(format!(
                "agent {} received increments from non-neighbour {j}",
                self.agent
            )));
        }

        let k = self.k;
        let mut x = vec![vec![0.0; self.width]; k + 1];
        let mut rho = vec![vec![0.0; self.width]; k + 1];
        let mut z = vec![vec![vec![0.0; self.width]; k + 1]; self.neighbors.len()];
        x[0].copy_from_slice(delta);
        rho[0].copy_from_slice(delta);
        for zj in z.iter_mut() {
            zj[0].copy_from_slice(delta);
        }
        for a in 1..=k {
            for w in 0..self.width {
                let mut acc = self.x[a - 1][w];
                for (idx, msg) in incoming.iter().enumerate() {
                    let back = if a >= 2 { self.z_prev[idx][a - 2][w] } else { 0.0 };
                    acc += msg[a - 1][w] - back;
                }
                x[a][w] = acc;
                rho[a][w] = acc - self.x[a - 1][w];
                for (idx, msg) in incoming.iter().enumerate() {
                    let back = if a >= 2 { self.z_prev[idx][a - 2][w] } else { 0.0 };
                    z[idx][a][w] = back + rho[a][w] - msg[a - 1][w];
                }
            }
        }
        self.x = x;
        self.rho = rho;
        self.z_prev = std::mem::replace(&mut self.z, z);
        self.tick += 1;
        Ok(())
    }

    /// `x[K] / N`: the team average of origin tick `tick - K`.
    pub fn readout(&self) -> Vec<f64> {
        let n = self.n_agents as f64;
        self.x[self.k].iter().map(|v| v / n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_pair(a: f64, b: f64, k: usize, ticks: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut s0 = AcyclicState::new(0, 2, vec![1], k, 1).unwrap();
        let mut s1 = AcyclicState::new(1, 2, vec![0], k, 1).unwrap();
        let mut out = Vec::new();
        for _ in 0..ticks {
            let m0 = s0.outgoing();
            let m1 = s1.outgoing();
            let first = s0.tick() < 0;
            let r0: BTreeMap<usize, &RhoMessage> =
                if first { BTreeMap::new() } else { BTreeMap::from([(1, &m1)]) };
            let r1: BTreeMap<usize, &RhoMessage> =
                if first { BTreeMap::new() } else { BTreeMap::from([(0, &m0)]) };
            s0.step(&[a], &r0).unwrap();
            s1.step(&[b], &r1).unwrap();
            out.push((s0.readout(), s1.readout()));
        }
        out
    }

    #[test]
    fn pair_with_constant_errors_reads_the_mean() {
        // K = 2: from tick 2 on both agents read (a + b) / 2.
        let out = run_pair(0.75, -0.25, 2, 6);
        for (t, (r0, r1)) in out.iter().enumerate() {
            if t >= 2 {
                assert!((r0[0] - 0.25).abs() < 1e-15, "tick {t}: {r0:?}");
                assert!((r1[0] - 0.25).abs() < 1e-15);
            }
        }
        // Minimal K = 1 works from tick 1.
        let out = run_pair(0.75, -0.25, 1, 4);
        assert!(out[1..].iter().all(|(r0, r1)| r0[0] == 0.25 && r1[0] == 0.25));
    }

    #[test]
    fn single_agent_reads_its_own_error_one_tick_late() {
        let mut s = AcyclicState::new(0, 1, vec![], 1, 1).unwrap();
        let deltas = [0.3, -1.0, 2.5, 0.0];
        let empty = BTreeMap::new();
        for (t, d) in deltas.iter().enumerate() {
            s.step(&[*d], &empty).unwrap();
            if t >= 1 {
                assert_eq!(s.readout(), vec![deltas[t - 1]]);
            }
        }
    }

    #[test]
    fn missing_neighbour_after_first_tick_is_a_config_error() {
        let mut s = AcyclicState::new(0, 2, vec![1], 1, 1).unwrap();
        let empty = BTreeMap::new();
        s.step(&[1.0], &empty).unwrap();
        assert!(matches!(s.step(&[1.0], &empty), Err(Error::Config(_))));
    }

    #[test]
    fn message_has_k_values_per_lane() {
        let s = AcyclicState::new(0, 3, vec![1, 2], 4, 1).unwrap();
        assert_eq!(s.outgoing().len(), 4);
    }
}
