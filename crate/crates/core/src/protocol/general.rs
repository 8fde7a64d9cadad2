//! Vector fill-in aggregation for general latent graphs.
//!
//! Every agent keeps one [`TdVector`] per origin tick in a window of
//! `K + 1` ticks. Slot `j` of the vector for origin tick `t` holds agent
//! `j`'s local TD error of tick `t` once it has been learned. Agents forward
//! their whole window every tick and fill unknown slots from what they
//! receive; after `K` ticks every slot is known and the team average can be
//! read off.
//!
//! Slots carry an explicit unknown state rather than a zero sentinel, so a
//! local TD error that is exactly zero is still recognised as known.
//!
//! A slot value is a *lane*: a short vector of reals. Online learning uses
//! one lane entry per tick; the episodic regime ships a whole episode of
//! per-step TD errors in one slot.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::transport::{fnv1a, PayloadDigest};

pub type Lane = Arc<[f64]>;

#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    Unknown,
    Known(Lane),
}

impl Slot {
    pub fn is_known(&self) -> bool {
        matches!(self, Slot::Known(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdVector {
    origin_tick: i64,
    entries: Vec<Slot>,
}

/// Vector for origin tick `t` that knows only agent `i`'s own TD error.
pub fn init_td_vector(i: usize, delta: f64, t: i64, n_agents: usize) -> Result<TdVector> {
    TdVector::init(i, Arc::from([delta]), t, n_agents)
}

impl TdVector {
    pub fn unknown(origin_tick: i64, n_agents: usize) -> Self {
        TdVector {
            origin_tick,
            entries: vec![Slot::Unknown; n_agents],
        }
    }

    pub fn init(i: usize, delta: Lane, t: i64, n_agents: usize) -> Result<Self> {
        if i >= n_agents {
            return Err(Error::arg(format!("agent {i} outside 0..{n_agents}")));
        }
        let mut v = Self::unknown(t, n_agents);
        v.entries[i] = Slot::Known(delta);
        Ok(v)
    }

    pub fn origin_tick(&self) -> i64 {
        self.origin_tick
    }

    pub fn entries(&self) -> &[Slot] {
        &self.entries
    }

    pub fn n_known(&self) -> usize {
        self.entries.iter().filter(|s| s.is_known()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(Slot::is_known)
    }

    /// Fills unknown slots from `other`. Known slots are write-once: a
    /// differing value for an already known slot is a corruption error.
    /// Returns whether anything changed.
    pub fn merge_from(&mut self, other: &TdVector) -> Result<bool> {
        if other.origin_tick != self.origin_tick || other.entries.len() != self.entries.len() {
            return Err(Error::arg(format!(
                "cannot merge vector of origin {} into origin {}",
                other.origin_tick, self.origin_tick
            )));
        }
        let mut changed = false;
        for (agent, (mine, theirs)) in self.entries.iter_mut().zip(&other.entries).enumerate() {
            match (&*mine, theirs) {
                (_, Slot::Unknown) => {}
                (Slot::Unknown, Slot::Known(v)) => {
                    *mine = Slot::Known(v.clone());
                    changed = true;
                }
                (Slot::Known(a), Slot::Known(b)) => {
                    if !Arc::ptr_eq(a, b) && !bitwise_eq(a, b) {
                        return Err(Error::Corruption {
                            agent,
                            origin: self.origin_tick,
                        });
                    }
                }
            }
        }
        Ok(changed)
    }

    /// Team average over all slots, summed in ascending agent order.
    pub fn team_average(&self) -> Option<Vec<f64>> {
        let lanes: Option<Vec<&[f64]>> = self
            .entries
            .iter()
            .map(|s| match s {
                Slot::Known(v) => Some(&v[..]),
                Slot::Unknown => None,
            })
            .collect();
        Some(mean_ascending(&lanes?))
    }
}

fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Lane-wise mean; lanes are added in the given order starting from zero,
/// then divided by their count.
pub(crate) fn mean_ascending(lanes: &[&[f64]]) -> Vec<f64> {
    let width = lanes.first().map_or(0, |l| l.len());
    let mut acc = vec![0.0; width];
    for lane in lanes {
        for (a, x) in acc.iter_mut().zip(lane.iter()) {
            *a += x;
        }
    }
    let n = lanes.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Mean of every agent's local TD error, the quantity both protocols must
/// reproduce.
pub fn centralized_team_td(all_deltas: &[f64]) -> Result<f64> {
    if all_deltas.is_empty() {
        return Err(Error::arg("no TD errors to average"));
    }
    let lanes: Vec<&[f64]> = all_deltas.iter().map(std::slice::from_ref).collect();
    Ok(mean_ascending(&lanes)[0])
}

impl PayloadDigest for TdVector {
    fn digest(&self) -> u64 {
        fnv1a(
            std::iter::once(self.origin_tick as u64).chain(self.entries.iter().flat_map(
                |s| -> Box<dyn Iterator<Item = u64>> {
                    match s {
                        Slot::Unknown => Box::new(std::iter::once(u64::MAX)),
                        Slot::Known(v) => Box::new(v.iter().map(|x| x.to_bits())),
                    }
                },
            )),
        )
    }
}

impl PayloadDigest for Vec<TdVector> {
    fn digest(&self) -> u64 {
        fnv1a(self.iter().map(PayloadDigest::digest))
    }
}

/// The window `{Δ_{t-τ}}` for `τ = 0..=K` held by one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TdHistory {
    owner: usize,
    n_agents: usize,
    k: usize,
    current_tick: i64,
    /// `window[τ]` has origin tick `current_tick - τ`.
    window: VecDeque<TdVector>,
}

impl TdHistory {
    /// An empty history positioned just before tick 0.
    pub fn new(owner: usize, n_agents: usize, k: usize) -> Result<Self> {
        if owner >= n_agents {
            return Err(Error::arg(format!("agent {owner} outside 0..{n_agents}")));
        }
        let current_tick = -1;
        let window = (0..=k as i64)
            .map(|tau| TdVector::unknown(current_tick - tau, n_agents))
            .collect();
        Ok(TdHistory {
            owner,
            n_agents,
            k,
            current_tick,
            window,
        })
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn current_tick(&self) -> i64 {
        self.current_tick
    }

    pub fn window(&self) -> &VecDeque<TdVector> {
        &self.window
    }

    /// Moves to the next tick and records the owner's own TD error for it.
    pub fn advance(&mut self, delta: Lane) -> Result<()> {
        let t = self.current_tick + 1;
        self.window
            .push_front(TdVector::init(self.owner, delta, t, self.n_agents)?);
        self.window.truncate(self.k + 1);
        self.current_tick = t;
        Ok(())
    }

    /// Merges received vectors. Vectors whose origin has left the window are
    /// ignored; a vector from the future is an error.
    pub fn merge(&mut self, received: &[TdVector]) -> Result<()> {
        for v in received {
            let tau = self.current_tick - v.origin_tick;
            if tau < 0 {
                return Err(Error::arg(format!(
                    "received origin tick {} ahead of current tick {}",
                    v.origin_tick, self.current_tick
                )));
            }
            if let Some(slot) = self.window.get_mut(tau as usize) {
                slot.merge_from(v)?;
            }
        }
        Ok(())
    }

    /// The vectors sent each tick: `τ = 0..K-1`.
    pub fn outgoing(&self) -> Vec<TdVector> {
        self.window.iter().take(self.k).cloned().collect()
    }

    pub fn vector(&self, origin_tick: i64) -> Option<&TdVector> {
        let tau = self.current_tick - origin_tick;
        if tau < 0 {
            None
        } else {
            self.window.get(tau as usize)
        }
    }

    /// Team-average TD error of `origin_tick`, lane by lane.
    pub fn team_td(&self, origin_tick: i64) -> Result<Vec<f64>> {
        let v = self.vector(origin_tick).ok_or_else(|| {
            Error::arg(format!(
                "origin tick {origin_tick} outside the window at tick {}",
                self.current_tick
            ))
        })?;
        v.team_average().ok_or(Error::Incomplete {
            tick: self.current_tick,
            agent: self.owner,
            origin: origin_tick,
            missing: self.n_agents - v.n_known(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known(x: f64) -> Slot {
        Slot::Known(Arc::from([x]))
    }

    fn vector(origin: i64, slots: Vec<Slot>) -> TdVector {
        TdVector {
            origin_tick: origin,
            entries: slots,
        }
    }

    #[test]
    fn init_marks_only_own_slot() {
        let v = init_td_vector(1, 0.5, 3, 3).unwrap();
        assert_eq!(v.entries(), &[Slot::Unknown, known(0.5), Slot::Unknown]);
        assert_eq!(v.origin_tick(), 3);

        let zero = init_td_vector(0, 0.0, 0, 2).unwrap();
        assert_eq!(zero.entries(), &[known(0.0), Slot::Unknown]);

        let single = init_td_vector(0, -1.25, 0, 1).unwrap();
        assert_eq!(single.team_average(), Some(vec![-1.25]));
    }

    #[test]
    fn disjoint_fill_in() {
        let mut h = TdHistory::new(0, 3, 3).unwrap();
        for x in [1.0, 9.0, 9.0] {
            h.advance(Arc::from([x])).unwrap();
        }
        // The origin-0 vector now sits at τ = 2.
        h.merge(&[
            vector(0, vec![Slot::Unknown, known(2.0), Slot::Unknown]),
            vector(0, vec![Slot::Unknown, Slot::Unknown, known(3.0)]),
        ])
        .unwrap();
        assert_eq!(
            h.vector(0).unwrap().entries(),
            &[known(1.0), known(2.0), known(3.0)]
        );
        assert_eq!(h.team_td(0).unwrap(), vec![2.0]);

        let before = h.clone();
        h.merge(&[vector(0, vec![Slot::Unknown, known(2.0), Slot::Unknown])])
            .unwrap();
        assert_eq!(h, before);
    }

    #[test]
    fn conflicting_values_are_corruption() {
        let mut v = vector(0, vec![Slot::Unknown, Slot::Unknown]);
        v.merge_from(&vector(0, vec![Slot::Unknown, known(2.0)])).unwrap();
        let err = v
            .merge_from(&vector(0, vec![Slot::Unknown, known(2.5)]))
            .unwrap_err();
        assert_eq!(err, Error::Corruption { agent: 1, origin: 0 });
        // Same value but -0.0 vs 0.0 differs bitwise.
        let mut z = vector(0, vec![known(0.0)]);
        assert!(z.merge_from(&vector(0, vec![known(-0.0)])).is_err());
    }

    #[test]
    fn team_td_requires_every_slot() {
        let mut h = TdHistory::new(2, 3, 1).unwrap();
        h.advance(Arc::from([3.0])).unwrap();
        assert_eq!(
            h.team_td(0).unwrap_err(),
            Error::Incomplete {
                tick: 0,
                agent: 2,
                origin: 0,
                missing: 2
            }
        );
        h.merge(&[vector(0, vec![known(1.0), known(2.0), Slot::Unknown])])
            .unwrap();
        assert_eq!(h.team_td(0).unwrap(), vec![2.0]);
    }

    #[test]
    fn centralized_mean() {
        assert_eq!(centralized_team_td(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(centralized_team_td(&[0.0; 5]).unwrap(), 0.0);
        assert_eq!(centralized_team_td(&[0.1]).unwrap(), 0.1);
        assert!(centralized_team_td(&[]).is_err());
    }

    #[test]
    fn window_slides_and_sends_k_vectors() {
        let mut h = TdHistory::new(0, 4, 3).unwrap();
        for t in 0..10 {
            h.advance(Arc::from([t as f64])).unwrap();
            assert_eq!(h.window().len(), 4);
            let out = h.outgoing();
            assert_eq!(out.len(), 3);
            assert_eq!(out.iter().map(|v| v.entries().len()).sum::<usize>(), 12);
            assert_eq!(out[0].origin_tick(), t);
        }
        // Stale origins are ignored, future ones rejected.
        h.merge(&[vector(2, vec![known(1.0); 4])]).unwrap();
        assert!(h.merge(&[vector(10, vec![known(1.0); 4])]).is_err());
    }
}
