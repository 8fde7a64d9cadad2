//! Randomized property suites with pass/fail per property and the worst
//! observed error. Every suite is a pure function of its seed.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{enumerate, CoupledLine, Jommdp, DEFAULT_CAPACITY};
use crate::error::{Error, Result};
use crate::funcapprox::{
    central_difference, max_relative_error, Approximator, Critic, FeatureMap, LinearCritic, MlpCritic,
    SoftmaxPolicy,
};
use crate::learner::{run_online, AgentState, CriticInput, OnlineConfig, ParamBox, StepSchedule};
use crate::oracle;
use crate::protocol::{
    partial_sum_invariant, centralized_team_td, replay_acyclic, replay_general, NeighborhoodAverage,
};
use crate::topology::{Edge, GraphSchedule};
use crate::transport::{ChannelModel, DelayLaw};

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64) -> Self {
        SuiteReport {
            suite: suite.into(),
            seed,
            properties: Vec::new(),
        }
    }

    /// Records a property that holds when `worst <= tolerance`.
    fn check(&mut self, name: &str, worst: f64, tolerance: f64, cases: usize) {
        self.properties.push(PropertyResult {
            name: name.into(),
            passed: worst <= tolerance,
            worst,
            tolerance,
            cases,
        });
    }

    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.properties {
            writeln!(
                f,
                "{} {}/{}: worst {:e} (tolerance {:e}, {} cases, seed {})",
                if p.passed { "PASS" } else { "FAIL" },
                self.suite,
                p.name,
                p.worst,
                p.tolerance,
                p.cases,
                self.seed
            )?;
        }
        Ok(())
    }
}

pub const SUITES: [&str; 6] = ["protocol", "acyclic", "equivalence", "critic", "gradient", "bias"];

/// Runs a suite by name with its default size.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    match name {
        "protocol" => protocol_suite(1000, seed),
        "acyclic" => acyclic_suite(200, seed),
        "equivalence" => equivalence_suite(200, seed),
        "critic" => critic_suite(200_000, seed),
        "gradient" => gradient_suite(100, seed),
        "bias" => bias_suite(1_000_000, seed),
        _ => Err(Error::arg(format!("unknown suite {name:?} (one of {SUITES:?})"))),
    }
}

/// A time-varying digraph whose persistent part is strongly connected: a
/// random directed cycle or a bidirectional random tree, plus random extra
/// edges in each snapshot.
pub fn random_schedule<R: Rng>(rng: &mut R, n: usize) -> Result<GraphSchedule> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut backbone: Vec<Edge> = Vec::new();
    if n > 1 {
        if rng.random_bool(0.5) {
            for w in 0..n {
                backbone.push((order[w], order[(w + 1) % n]));
            }
        } else {
            for w in 1..n {
                let p = order[rng.random_range(0..w)];
                backbone.push((p, order[w]));
                backbone.push((order[w], p));
            }
        }
    }
    let period = rng.random_range(1..=3);
    let snaps = (0..period)
        .map(|_| {
            let mut e = backbone.clone();
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random_bool(0.15) {
                        e.push((i, j));
                    }
                }
            }
            e
        })
        .collect();
    GraphSchedule::time_varying(n, snaps)
}

/// A uniformly labelled random tree: agent `i` attaches to a random earlier
/// agent.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> Result<GraphSchedule> {
    let parents: Vec<usize> = (1..n).map(|i| rng.random_range(0..i)).collect();
    GraphSchedule::tree(&parents)
}

fn random_deltas<R: Rng>(rng: &mut R, ticks: usize, n: usize) -> Vec<Vec<f64>> {
    (0..ticks)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Exactness of the general protocol over random schedules and lossy
/// channels: every read-out equals the centralized mean bit for bit.
pub fn protocol_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0usize;
    let mut readouts = 0usize;
    let mut forced = 0usize;
    for _ in 0..cases {
        let n = rng.random_range(2..=10);
        let g = Arc::new(random_schedule(&mut rng, n)?);
        let t1 = rng.random_range(0..=3);
        let t2 = rng.random_range(1..=3);
        let p = rng.random_range(0.0..=0.5);
        let law = match rng.random_range(0..3) {
            0 => DelayLaw::Uniform,
            1 => DelayLaw::Max,
            _ => DelayLaw::Fixed(rng.random_range(0..=t2)),
        };
        let model = ChannelModel::new(t1, t2, p, rng.random())?.with_delay_law(law)?;
        let k = g.latency_bound(t1, t2)?;
        let deltas = random_deltas(&mut rng, k + 8, n);
        let rep = replay_general(g, model, None, &deltas)?;
        forced += rep.stats.drops;
        for (t, r) in rep.readouts.iter().enumerate() {
            let Some(r) = r else { continue };
            let want = centralized_team_td(&deltas[t - k])?;
            for &x in r {
                readouts += 1;
                if x.to_bits() != want.to_bits() {
                    mismatches += 1;
                }
                worst = worst.max((x - want).abs());
            }
        }
    }
    let mut rep = SuiteReport::new("protocol", seed);
    rep.check("team_td_equals_centralized_mean", worst, 0.0, readouts);
    rep.check("bitwise_mismatches", mismatches as f64, 0.0, readouts);
    rep.check("lossy_cases_exercised", if forced > 0 { 0.0 } else { 1.0 }, 0.0, cases);
    Ok(rep)
}

/// Read-out exactness and the partial-sum invariant of the acyclic
/// protocol on random trees.
pub fn acyclic_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_read: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;
    let mut reads = 0;
    let mut checked = 0;
    for _ in 0..cases {
        let n = rng.random_range(2..=12);
        let g = Arc::new(random_tree(&mut rng, n)?);
        let k = g.latency_bound(0, 1)? + rng.random_range(0..=2);
        let deltas = random_deltas(&mut rng, k + 10, n);
        let rep = replay_acyclic(g.clone(), Some(k), &deltas)?;
        for (t, r) in rep.replay.readouts.iter().enumerate() {
            let Some(r) = r else { continue };
            let want = centralized_team_td(&deltas[t - k])?;
            for &x in r {
                worst_read = worst_read.max((x - want).abs());
                reads += 1;
            }
        }
        let inv = partial_sum_invariant(&g, &deltas, &rep.trace, 1e-9)?;
        worst_inv = worst_inv.max(inv.worst_error);
        checked += inv.checked;
    }
    let mut rep = SuiteReport::new("acyclic", seed);
    rep.check("readout_equals_centralized_mean", worst_read, 1e-9, reads);
    rep.check("partial_sum_invariant", worst_inv, 1e-9, checked);
    Ok(rep)
}

/// Both protocols on the same trees and TD error streams.
pub fn equivalence_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut payload_general: f64 = 0.0;
    let mut payload_acyclic: f64 = 0.0;
    let mut ticks = 0;
    for _ in 0..cases {
        let n = rng.random_range(2..=12);
        let g = Arc::new(random_tree(&mut rng, n)?);
        let k = g.latency_bound(0, 1)?;
        let deltas = random_deltas(&mut rng, k + 10, n);
        let one = replay_general(g.clone(), ChannelModel::ideal(), None, &deltas)?;
        let two = replay_acyclic(g, None, &deltas)?;
        if one.k != k || two.replay.k != k {
            return Err(Error::Topology("protocols disagree on K".into()));
        }
        for (a, b) in one.readouts.iter().zip(&two.replay.readouts) {
            ticks += 1;
            match (a, b) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.iter().zip(b) {
                        worst = worst.max((x - y).abs());
                    }
                }
                (None, None) => {}
                _ => worst = f64::INFINITY,
            }
        }
        let dev = |s: &crate::protocol::CommStats, want: usize| -> f64 {
            let lo = s.min_payload.unwrap_or(0) as f64;
            let hi = s.max_payload.unwrap_or(0) as f64;
            (lo - want as f64).abs().max((hi - want as f64).abs())
        };
        payload_general = payload_general.max(dev(&one.stats, k * n));
        payload_acyclic = payload_acyclic.max(dev(&two.replay.stats, k));
    }
    let mut rep = SuiteReport::new("equivalence", seed);
    rep.check("general_vs_acyclic_team_td", worst, 1e-9, ticks);
    rep.check("general_payload_is_k_times_n", payload_general, 0.0, cases);
    rep.check("acyclic_payload_is_k", payload_acyclic, 0.0, cases);
    Ok(rep)
}

/// Online tabular TD on the two-agent environment under the uniform
/// policy, compared with the exact fixed point.
pub fn critic_suite(steps: u64, seed: u64) -> Result<SuiteReport> {
    let env = CoupledLine::micro();
    let n = env.n_agents();
    let pols = vec![SoftmaxPolicy::tabular(2, 2)?; n];
    let model = enumerate(&env, &pols, DEFAULT_CAPACITY)?;
    let feats = vec![FeatureMap::tabular(2); n];
    let exact: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let phi = oracle::feature_matrix(&model, Some(i), &feats[i])?;
            oracle::critic_fixed_point(&model, &phi, &model.r_hat[i])
        })
        .collect::<Result<_>>()?;

    let agents: Vec<AgentState> = pols
        .iter()
        .zip(&feats)
        .map(|(p, f)| AgentState::new(p.clone(), Critic::Linear(LinearCritic::new(f.clone())), ParamBox::default()))
        .collect();
    let cfg = OnlineConfig {
        steps,
        actor_step: StepSchedule::constant(0.0),
        critic_step: StepSchedule::polynomial(0.5, 0.6),
        critic_input: CriticInput::Local,
        check_schedules: true,
        trace: false,
    };
    let mut agg = NeighborhoodAverage::independent(n)?;
    let run = run_online(&env, agents, &mut agg, &cfg, seed)?;
    let sup = run
        .agents
        .iter()
        .zip(&exact)
        .flat_map(|(a, v)| a.critic.params().iter().zip(v.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);

    let eig = oracle::critic_eigenvalues(&model)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);

    // Projected Bellman orthogonality E[δ φ] = 0 at the fixed point.
    let mut ortho: f64 = 0.0;
    for (i, v) in exact.iter().enumerate() {
        let phi = oracle::feature_matrix(&model, Some(i), &feats[i])?;
        let values = &phi * v;
        let td = &model.r_hat[i] + model.gamma * &model.p * &values - &values;
        let moment = phi.transpose() * DVector::from_iterator(td.len(), td.iter().zip(model.d.iter()).map(|(a, b)| a * b));
        ortho = ortho.max(moment.amax());
    }

    let mut rep = SuiteReport::new("critic", seed);
    rep.check("sup_error_to_fixed_point", sup, 1e-2, steps as usize);
    rep.check("max_eigenvalue_real_part_plus_1e-6", eig + 1e-6, 0.0, model.n_states());
    rep.check("projected_bellman_orthogonality", ortho, 1e-10, n);
    Ok(rep)
}

/// Analytic gradients against central differences (step `1e-5`).
pub fn gradient_suite(draws: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let (mut w_critic, mut w_score, mut w_tab, mut w_lin) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..draws {
        let n_states = rng.random_range(2..=4);
        let c = MlpCritic::new(n_states, &[5, 5], rng.random())?;
        let mut c = Critic::Mlp(c);
        let p: Vec<f64> = c.params().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        c.set_params(&p)?;
        let s = rng.random_range(0..n_states);
        let fd = central_difference(c.params(), h, |x| {
            let mut d = c.clone();
            d.set_params(x).expect("same length");
            d.value(s).expect("valid state")
        });
        w_critic = w_critic.max(max_relative_error(&c.grad(s)?, &fd));

        let n_actions = rng.random_range(2..=3);
        let mut pol = SoftmaxPolicy::mlp(n_states, n_actions, &[10, 10], rng.random())?;
        let p: Vec<f64> = pol.params().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        pol.set_params(&p)?;
        let a = rng.random_range(0..n_actions);
        let fd = central_difference(pol.params(), h, |x| {
            let mut q = pol.clone();
            q.set_params(x).expect("same length");
            q.probs(s).expect("valid state")[a].ln()
        });
        w_score = w_score.max(max_relative_error(&pol.score(s, a)?, &fd));

        let mut tab = SoftmaxPolicy::tabular(n_states, n_actions)?;
        let p: Vec<f64> = tab.params().iter().map(|_| rng.random_range(-3.0..3.0)).collect();
        tab.set_params(&p)?;
        let fd = central_difference(tab.params(), h, |x| {
            let mut q = tab.clone();
            q.set_params(x).expect("same length");
            q.probs(s).expect("valid state")[a].ln()
        });
        w_tab = w_tab.max(max_relative_error(&tab.score(s, a)?, &fd));

        let rows: Vec<Vec<f64>> = (0..n_states)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let v: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lin = LinearCritic::with_weights(FeatureMap::from_rows(rows)?, v)?;
        let fd = central_difference(lin.params(), h, |x| {
            let mut d = lin.clone();
            d.set_params(x).expect("same length");
            d.value(s).expect("valid state")
        });
        w_lin = w_lin.max(max_relative_error(&lin.grad(s)?, &fd));
    }

    // Expected actor update against the frozen-advantage surrogate, on a
    // handful of random tabular policies of the two-agent environment.
    let env = CoupledLine::micro();
    let mut w_pg: f64 = 0.0;
    let mut worst_ascent = f64::NEG_INFINITY;
    let pg_draws = draws.min(10);
    for d in 0..pg_draws {
        let mut pols = vec![SoftmaxPolicy::tabular(2, 2)?; 2];
        if d > 0 {
            for p in pols.iter_mut() {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
                p.set_params(&x)?;
            }
        }
        let m = enumerate(&env, &pols, DEFAULT_CAPACITY)?;
        let truth = oracle::private_true_values(&m)?;
        let g = oracle::exact_policy_gradient(&env, &pols, &m, &truth)?;
        let sur = oracle::FrozenSurrogate::new(&env, &m, &truth)?;
        for i in 0..2 {
            let fd = central_difference(pols[i].params(), h, |x| {
                let mut q = pols.clone();
                q[i].set_params(x).expect("same length");
                sur.value(&q).expect("valid policies")
            });
            w_pg = w_pg.max(max_relative_error(&g[i], &fd));
        }
        // A small ascent step along the expected update raises the
        // surrogate and the stationary team value.
        let alpha = 1e-3;
        let mut stepped = pols.clone();
        for (p, gi) in stepped.iter_mut().zip(&g) {
            let x: Vec<f64> = p.params().iter().zip(gi).map(|(a, b)| a + alpha * b).collect();
            p.set_params(&x)?;
        }
        let m2 = enumerate(&env, &stepped, DEFAULT_CAPACITY)?;
        let gain_sur = sur.value(&stepped)? - sur.value(&pols)?;
        let gain_j = oracle::team_objective(&m2)? - oracle::team_objective(&m)?;
        worst_ascent = worst_ascent.max(-gain_sur.min(gain_j));
    }

    let mut rep = SuiteReport::new("gradient", seed);
    rep.check("mlp_critic_gradient", w_critic, 1e-4, draws);
    rep.check("mlp_policy_score", w_score, 1e-4, draws);
    rep.check("tabular_policy_score", w_tab, 1e-4, draws);
    rep.check("linear_critic_gradient", w_lin, 1e-4, draws);
    rep.check("expected_update_vs_surrogate_fd", w_pg, 1e-4, pg_draws);
    // Negative when both gains are strictly positive.
    rep.check("ascent_step_improves_objectives", worst_ascent, -f64::MIN_POSITIVE, pg_draws);
    Ok(rep)
}

fn rel_l2(est: &[f64], exact: &[f64]) -> f64 {
    let num: f64 = est.iter().zip(exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = exact.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den
}

/// Monte Carlo actor-update directions on the two-agent environment under
/// the uniform policy with fixed-point critics, against exact expectations.
pub fn bias_suite(samples: usize, seed: u64) -> Result<SuiteReport> {
    let env = CoupledLine::micro();
    let n = env.n_agents();
    let pols = vec![SoftmaxPolicy::tabular(2, 2)?; n];
    let model = enumerate(&env, &pols, DEFAULT_CAPACITY)?;
    let ns = model.n_states();
    let truth = oracle::private_true_values(&model)?;
    let global = oracle::critic_values(&model, false, &vec![FeatureMap::tabular(ns); n])?;
    let local = oracle::critic_values(&model, true, &vec![FeatureMap::tabular(2); n])?;

    let exact = oracle::exact_policy_gradient(&env, &pols, &model, &truth)?.concat();
    let global_bias = oracle::bias_terms(&env, &pols, &model, &global, &truth)?.total().concat();
    let local_bias = oracle::bias_terms(&env, &pols, &model, &local, &truth)?.total().concat();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let np: usize = pols.iter().map(|p| p.n_params()).sum();
    let mut mc_global = vec![0.0; np];
    let mut mc_local = vec![0.0; np];
    let cdf: Vec<f64> = model
        .d
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect();
    for _ in 0..samples {
        let u: f64 = rng.random();
        let si = cdf.iter().position(|&c| u < c).unwrap_or(ns - 1);
        let s = model.states.decode(si);
        let a: Vec<usize> = pols
            .iter()
            .zip(&s)
            .map(|(p, &x)| p.sample_action(x, &mut rng))
            .collect::<Result<_>>()?;
        let (s2, r) = env.step(&s, &a, &mut rng)?;
        let sj = model.states.encode(&s2);
        let dg = oracle::team_td(model.gamma, &global, si, sj, &r);
        let dl = oracle::team_td(model.gamma, &local, si, sj, &r);
        let mut off = 0;
        for (i, p) in pols.iter().enumerate() {
            let eta = p.score(s[i], a[i])?;
            for (k, e) in eta.iter().enumerate() {
                mc_global[off + k] += dg * e;
                mc_local[off + k] += dl * e;
            }
            off += eta.len();
        }
    }
    for x in mc_global.iter_mut().chain(mc_local.iter_mut()) {
        *x /= samples as f64;
    }
    let measured: Vec<f64> = mc_local.iter().zip(&mc_global).map(|(a, b)| a - b).collect();

    let mut rep = SuiteReport::new("bias", seed);
    rep.check("global_critic_bias_terms_vanish", global_bias.iter().fold(0.0, |m, x| m.max(x.abs())), 1e-10, 1);
    rep.check("global_critic_mc_vs_exact_gradient", rel_l2(&mc_global, &exact), 0.02, samples);
    rep.check("local_critic_measured_vs_exact_bias", rel_l2(&measured, &local_bias), 0.05, samples);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        assert!(protocol_suite(20, 1).unwrap().passed());
        assert!(acyclic_suite(10, 1).unwrap().passed());
        assert!(equivalence_suite(10, 1).unwrap().passed());
        assert!(gradient_suite(5, 1).unwrap().passed());
    }

    #[test]
    fn unknown_suite_is_an_argument_error() {
        assert!(matches!(run_suite("nope", 0), Err(Error::Argument(_))));
    }
}
