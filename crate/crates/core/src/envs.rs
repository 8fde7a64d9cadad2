//! Multi-agent MDPs whose global state is the tuple of local states.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::funcapprox::SoftmaxPolicy;
use crate::oracle;

/// Default cap on the number of global states an exact model may have.
pub const DEFAULT_CAPACITY: usize = 4096;

/// A jointly observable multi-agent MDP.
///
/// Next local states are drawn independently across agents given the
/// current global state and joint action.
pub trait Jommdp: Send + Sync {
    fn n_agents(&self) -> usize;
    fn n_local_states(&self, agent: usize) -> usize;
    fn n_local_actions(&self, agent: usize) -> usize;
    fn gamma(&self) -> f64;

    fn initial_state(&self) -> Vec<usize> {
        vec![0; self.n_agents()]
    }

    /// Distribution of each agent's next local state.
    fn next_state_marginals(&self, s: &[usize], a: &[usize]) -> Result<Vec<Vec<f64>>>;

    /// Private rewards of every agent for the transition `(s, a, s')`.
    fn rewards(&self, s: &[usize], a: &[usize], s_next: &[usize]) -> Result<Vec<f64>>;

    fn validate(&self, s: &[usize], a: &[usize]) -> Result<()> {
        let n = self.n_agents();
        if s.len() != n || a.len() != n {
            return Err(Error::arg(format!(
                "state of length {} and action of length {} for {n} agents",
                s.len(),
                a.len()
            )));
        }
        for i in 0..n {
            if s[i] >= self.n_local_states(i) || a[i] >= self.n_local_actions(i) {
                return Err(Error::arg(format!(
                    "agent {i}: state {} or action {} out of range",
                    s[i], a[i]
                )));
            }
        }
        Ok(())
    }

    /// Samples `s'` (one uniform per agent, inverse CDF in ascending order)
    /// and returns it with the private rewards.
    fn step(&self, s: &[usize], a: &[usize], rng: &mut dyn rand::RngCore) -> Result<(Vec<usize>, Vec<f64>)> {
        self.validate(s, a)?;
        let marg = self.next_state_marginals(s, a)?;
        let next: Vec<usize> = marg
            .iter()
            .map(|p| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (x, px) in p.iter().enumerate() {
                    acc += px;
                    if u < acc {
                        return x;
                    }
                }
                // Only reachable through rounding; pick the last supported state.
                p.iter().rposition(|&px| px > 0.0).unwrap_or(0)
            })
            .collect();
        let r = self.rewards(s, a, &next)?;
        Ok((next, r))
    }

    fn transition_prob(&self, s: &[usize], a: &[usize], s_next: &[usize]) -> Result<f64> {
        self.validate(s, a)?;
        if s_next.len() != s.len() {
            return Err(Error::arg("next state has the wrong length"));
        }
        let marg = self.next_state_marginals(s, a)?;
        marg.iter()
            .zip(s_next)
            .map(|(p, &x)| {
                p.get(x)
                    .copied()
                    .ok_or_else(|| Error::arg(format!("next local state {x} out of range")))
            })
            .product()
    }
}

/// Coupled binary agents: every agent's next state is 1 with probability
/// `(1 / 2N) Σ_j (s_j + a_j)`; agent 0 receives that same quantity as its
/// reward and all other agents receive zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledLine {
    n: usize,
    gamma: f64,
}

impl CoupledLine {
    pub fn new(n_agents: usize, gamma: f64) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::config("at least one agent"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config(format!("discount {gamma} outside [0, 1)")));
        }
        Ok(CoupledLine { n: n_agents, gamma })
    }

    /// Five agents, discount 0.9.
    pub fn standard() -> Self {
        CoupledLine { n: 5, gamma: 0.9 }
    }

    /// Two agents, small enough for exact computations.
    pub fn micro() -> Self {
        CoupledLine { n: 2, gamma: 0.9 }
    }

    pub fn coupling(&self, s: &[usize], a: &[usize]) -> f64 {
        let total: usize = s.iter().chain(a).sum();
        total as f64 / (2 * self.n) as f64
    }
}

pub type MicroEnv = CoupledLine;

impl Jommdp for CoupledLine {
    fn n_agents(&self) -> usize {
        self.n
    }

    fn n_local_states(&self, _: usize) -> usize {
        2
    }

    fn n_local_actions(&self, _: usize) -> usize {
        2
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn next_state_marginals(&self, s: &[usize], a: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.validate(s, a)?;
        let p = self.coupling(s, a);
        Ok(vec![vec![1.0 - p, p]; self.n])
    }

    fn rewards(&self, s: &[usize], a: &[usize], _: &[usize]) -> Result<Vec<f64>> {
        self.validate(s, a)?;
        let mut r = vec![0.0; self.n];
        r[0] = self.coupling(s, a);
        Ok(r)
    }
}

/// Mixed-radix indexing of tuples; component 0 varies fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Radix {
    sizes: Vec<usize>,
}

impl Radix {
    pub fn new(sizes: Vec<usize>) -> Self {
        Radix { sizes }
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self, x: &[usize]) -> usize {
        x.iter()
            .zip(&self.sizes)
            .rev()
            .fold(0, |acc, (&xi, &n)| acc * n + xi)
    }

    pub fn decode(&self, mut idx: usize) -> Vec<usize> {
        self.sizes
            .iter()
            .map(|&n| {
                let x = idx % n;
                idx /= n;
                x
            })
            .collect()
    }
}

/// Exact matrices of the Markov chain induced by a joint policy.
#[derive(Debug, Clone)]
pub struct ExactModel {
    pub states: Radix,
    pub actions: Radix,
    pub gamma: f64,
    /// `p[(s, s')]`.
    pub p: DMatrix<f64>,
    pub d: DVector<f64>,
    /// Expected team-average reward per state.
    pub r_bar: DVector<f64>,
    /// Expected private reward per state, one vector per agent.
    pub r_hat: Vec<DVector<f64>>,
    /// `pi[(s, a)]`, joint action probabilities.
    pub pi: DMatrix<f64>,
}

impl ExactModel {
    pub fn n_states(&self) -> usize {
        self.p.nrows()
    }
}

/// Enumerates the chain under per-agent local policies.
pub fn enumerate<E: Jommdp + ?Sized>(
    env: &E,
    policies: &[SoftmaxPolicy],
    capacity: usize,
) -> Result<ExactModel> {
    if policies.len() != env.n_agents() {
        return Err(Error::arg("one policy per agent"));
    }
    let local: Vec<Vec<Vec<f64>>> = policies
        .iter()
        .map(|p| (0..p.n_states()).map(|s| p.probs(s)).collect())
        .collect::<Result<_>>()?;
    enumerate_with(env, capacity, |s, a| {
        Ok(a.iter()
            .enumerate()
            .map(|(i, &ai)| local[i][s[i]][ai])
            .product())
    })
}

/// Enumerates the chain under an arbitrary joint policy `pi(s, a)`.
pub fn enumerate_with<E: Jommdp + ?Sized>(
    env: &E,
    capacity: usize,
    pi: impl Fn(&[usize], &[usize]) -> Result<f64>,
) -> Result<ExactModel> {
    let n = env.n_agents();
    let states = Radix::new((0..n).map(|i| env.n_local_states(i)).collect());
    let actions = Radix::new((0..n).map(|i| env.n_local_actions(i)).collect());
    let ns = states.len();
    if ns > capacity {
        return Err(Error::Capacity(format!(
            "{ns} global states exceed the cap of {capacity}"
        )));
    }
    let na = actions.len();
    let mut p = DMatrix::zeros(ns, ns);
    let mut pi_m = DMatrix::zeros(ns, na);
    let mut r_hat = vec![DVector::zeros(ns); n];
    for si in 0..ns {
        let s = states.decode(si);
        for ai in 0..na {
            let a = actions.decode(ai);
            let w = pi(&s, &a)?;
            if !(0.0..=1.0 + 1e-12).contains(&w) {
                return Err(Error::Numeric(format!("policy probability {w}")));
            }
            pi_m[(si, ai)] = w;
            if w == 0.0 {
                continue;
            }
            for sj in 0..ns {
                let s2 = states.decode(sj);
                let q = env.transition_prob(&s, &a, &s2)?;
                if q == 0.0 {
                    continue;
                }
                p[(si, sj)] += w * q;
                for (i, r) in env.rewards(&s, &a, &s2)?.into_iter().enumerate() {
                    r_hat[i][si] += w * q * r;
                }
            }
        }
        let row_sum: f64 = p.row(si).sum();
        if (row_sum - 1.0).abs() > 1e-12 {
            return Err(Error::Model(format!(
                "transition row {si} sums to {row_sum}"
            )));
        }
    }
    let r_bar = r_hat.iter().fold(DVector::zeros(ns), |acc, r| acc + r) / n as f64;
    let d = oracle::stationary_distribution(&p)?;
    Ok(ExactModel {
        states,
        actions,
        gamma: env.gamma(),
        p,
        d,
        r_bar,
        r_hat,
        pi: pi_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn coupled_line_probabilities() {
        let env = CoupledLine::standard();
        let ones = [1; 5];
        assert_eq!(env.next_state_marginals(&ones, &ones).unwrap()[0][1], 1.0);
        assert_eq!(env.rewards(&ones, &ones, &ones).unwrap()[0], 1.0);
        let s = [1, 0, 0, 0, 0];
        assert!(env
            .next_state_marginals(&s, &s)
            .unwrap()
            .iter()
            .all(|m| (m[1] - 0.2).abs() < 1e-15));
        assert_eq!(env.rewards(&s, &s, &s).unwrap(), vec![0.2, 0.0, 0.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zeros = [0; 5];
        for _ in 0..100 {
            let (next, r) = env.step(&zeros, &zeros, &mut rng).unwrap();
            assert_eq!(next, vec![0; 5]);
            assert_eq!(r, vec![0.0; 5]);
        }
        assert!(matches!(env.step(&[0; 4], &zeros, &mut rng), Err(Error::Argument(_))));
        assert!(matches!(env.step(&[2, 0, 0, 0, 0], &zeros, &mut rng), Err(Error::Argument(_))));
    }

    #[test]
    fn empirical_transition_frequencies() {
        let env = CoupledLine::standard();
        let (s, a) = ([1, 0, 1, 0, 0], [1, 1, 0, 0, 1]);
        let p = env.coupling(&s, &a);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut ones = [0usize; 5];
        for _ in 0..n {
            let (next, _) = env.step(&s, &a, &mut rng).unwrap();
            for (c, x) in ones.iter_mut().zip(next) {
                *c += x;
            }
        }
        for c in ones {
            assert!((c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn radix_round_trip() {
        let r = Radix::new(vec![2, 3, 2]);
        for i in 0..r.len() {
            assert_eq!(r.encode(&r.decode(i)), i);
        }
        assert_eq!(r.encode(&[1, 0, 0]), 1);
    }

    #[test]
    fn micro_enumeration() {
        let env = CoupledLine::micro();
        let pols = vec![SoftmaxPolicy::tabular(2, 2).unwrap(); 2];
        let m = enumerate(&env, &pols, DEFAULT_CAPACITY).unwrap();
        for s in 0..4 {
            assert!((m.p.row(s).sum() - 1.0).abs() < 1e-12);
            let st = m.states.decode(s);
            let brute: f64 = (0..4)
                .map(|a| env.coupling(&st, &m.actions.decode(a)))
                .sum::<f64>()
                / 4.0;
            assert!((m.r_hat[0][s] - brute).abs() < 1e-15);
            assert_eq!(m.r_hat[1][s], 0.0);
        }

        let forced = enumerate_with(&env, DEFAULT_CAPACITY, |s, a| {
            Ok(if s == [1, 1] {
                f64::from(u8::from(a == [1, 1]))
            } else {
                0.25
            })
        })
        .unwrap();
        let all_ones = forced.states.encode(&[1, 1]);
        assert_eq!(forced.p[(all_ones, all_ones)], 1.0);

        assert!(matches!(
            enumerate(&CoupledLine::standard(), &vec![pols[0].clone(); 5], 16),
            Err(Error::Capacity(_))
        ));
    }
}
