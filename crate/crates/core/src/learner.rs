//! Actor-critic agents that learn from aggregated TD errors.
//!
//! Two clock regimes share the same agent state:
//!
//! * [`run_online`]: one protocol tick per environment step, online critic
//!   updates, actor steps delayed by the aggregator's `K`.
//! * [`run_episodic`]: one protocol tick per episode. Each agent ships the
//!   episode's per-step TD errors as one lane; the actor update of episode
//!   `e` consumes the team TD errors and score vectors of episode `e - K`.
//!   Critics are fitted by batch regression after each episode.
//!
//! Which baseline runs is decided entirely by the [`Aggregator`] passed in.

use std::collections::{HashMap, VecDeque};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Jommdp, Radix};
use crate::error::{Error, Result};
use crate::funcapprox::{Approximator, Critic, SoftmaxPolicy};
use crate::protocol::{Aggregator, CommStats};
use crate::transport::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { value: f64 },
    /// `base / (t + 1)^exponent`.
    Polynomial { base: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn constant(value: f64) -> Self {
        StepSchedule::Constant { value }
    }

    pub fn polynomial(base: f64, exponent: f64) -> Self {
        StepSchedule::Polynomial { base, exponent }
    }

    pub fn at(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant { value } => value,
            StepSchedule::Polynomial { base, exponent } => base / ((t + 1) as f64).powf(exponent),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { value } => value.is_finite() && value >= 0.0,
            StepSchedule::Polynomial { base, exponent } => {
                base.is_finite() && base >= 0.0 && exponent.is_finite() && exponent >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid step schedule {self:?}")))
        }
    }

    /// Two-timescale conditions: a polynomial critic schedule with exponent
    /// in `(0.5, 1]` and an actor schedule that decays strictly faster (or
    /// is identically zero, which freezes the policy).
    pub fn check_two_timescale(critic: &StepSchedule, actor: &StepSchedule) -> Result<()> {
        critic.validate()?;
        actor.validate()?;
        let ce = match *critic {
            StepSchedule::Polynomial { exponent, .. } if exponent > 0.5 && exponent <= 1.0 => exponent,
            _ => {
                return Err(Error::config(
                    "critic step size must decay as (t+1)^-p with p in (0.5, 1]",
                ))
            }
        };
        match *actor {
            StepSchedule::Constant { value } if value == 0.0 => Ok(()),
            StepSchedule::Polynomial { exponent, .. } if exponent > ce && exponent <= 1.0 => Ok(()),
            _ => Err(Error::config(
                "actor step size must decay strictly faster than the critic's",
            )),
        }
    }
}

/// Per-coordinate bounds on the actor parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: f64,
    pub upper: f64,
}

impl Default for ParamBox {
    fn default() -> Self {
        ParamBox {
            lower: -10.0,
            upper: 10.0,
        }
    }
}

impl ParamBox {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(Error::config(format!("empty parameter box [{lower}, {upper}]")));
        }
        Ok(ParamBox { lower, upper })
    }

    pub fn project(&self, x: &mut [f64]) {
        for v in x {
            *v = v.clamp(self.lower, self.upper);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|v| (self.lower..=self.upper).contains(v))
    }
}

/// `r + γ V(s') - V(s)`.
pub fn local_td_error(r: f64, v_s: f64, v_next: f64, gamma: f64) -> f64 {
    r + gamma * v_next - v_s
}

fn finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(what.into()))
    }
}

/// `v ← v + β δ ∇V`.
pub fn critic_update(critic: &mut Critic, delta: f64, grad: &[f64], beta: f64) -> Result<()> {
    finite(&[delta, beta], "critic step")?;
    finite(grad, "critic gradient")?;
    if grad.len() != critic.n_params() {
        return Err(Error::arg("critic gradient has the wrong length"));
    }
    for (v, g) in critic.params_mut().iter_mut().zip(grad) {
        *v += beta * delta * g;
    }
    Ok(())
}

/// `θ ← Ψ(θ + α δ η)`.
pub fn actor_update(policy: &mut SoftmaxPolicy, bounds: &ParamBox, delta_team: f64, eta: &[f64], alpha: f64) -> Result<()> {
    finite(&[delta_team, alpha], "actor step")?;
    finite(eta, "score vector")?;
    if eta.len() != policy.n_params() {
        return Err(Error::arg("score vector has the wrong length"));
    }
    let theta = policy.params_mut();
    for (th, e) in theta.iter_mut().zip(eta) {
        *th += alpha * delta_team * e;
    }
    bounds.project(theta);
    Ok(())
}

/// Which state index a critic sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CriticInput {
    /// The agent's own coordinate.
    #[default]
    Local,
    /// The full global state (only for oracle-scale studies).
    Global,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub policy: SoftmaxPolicy,
    pub critic: Critic,
    pub bounds: ParamBox,
    /// Score vectors, newest first; at most `K + 1` entries.
    eta_history: VecDeque<Vec<f64>>,
}

impl AgentState {
    pub fn new(policy: SoftmaxPolicy, critic: Critic, bounds: ParamBox) -> Self {
        AgentState {
            policy,
            critic,
            bounds,
            eta_history: VecDeque::new(),
        }
    }

    pub fn eta_history(&self) -> &VecDeque<Vec<f64>> {
        &self.eta_history
    }

    fn push_eta(&mut self, eta: Vec<f64>, k: usize) {
        self.eta_history.push_front(eta);
        self.eta_history.truncate(k + 1);
    }

    /// The score vector of `K` ticks ago, if that far back exists.
    fn delayed_eta(&self, k: usize) -> Option<&Vec<f64>> {
        (self.eta_history.len() == k + 1).then(|| &self.eta_history[k])
    }
}

/// Independent random streams of one run.
pub struct RunRngs {
    pub env: ChaCha8Rng,
    pub actions: ChaCha8Rng,
    pub init: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        RunRngs {
            env: stream(1),
            actions: stream(2),
            init: stream(3),
        }
    }

    /// Seed for the channel's drop and delay draws.
    pub fn channel_seed(seed: u64) -> u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(4);
        r.next_u64()
    }
}

fn critic_index(input: CriticInput, radix: &Radix, s: &[usize], i: usize) -> usize {
    match input {
        CriticInput::Local => s[i],
        CriticInput::Global => radix.encode(s),
    }
}

fn check_agents<E: Jommdp + ?Sized>(env: &E, agents: &[AgentState], agg: &dyn Aggregator, input: CriticInput) -> Result<Radix> {
    let n = env.n_agents();
    if agents.len() != n || agg.n_agents() != n {
        return Err(Error::config(format!(
            "{} agents and an aggregator for {} in an environment with {n}",
            agents.len(),
            agg.n_agents()
        )));
    }
    let radix = Radix::new((0..n).map(|i| env.n_local_states(i)).collect());
    for (i, a) in agents.iter().enumerate() {
        if a.policy.n_states() != env.n_local_states(i) || a.policy.n_actions() != env.n_local_actions(i) {
            return Err(Error::config(format!("policy of agent {i} does not fit the environment")));
        }
        let want = match input {
            CriticInput::Local => env.n_local_states(i),
            CriticInput::Global => radix.len(),
        };
        if a.critic.n_states() != want {
            return Err(Error::config(format!("critic of agent {i} expects {} states, not {want}", a.critic.n_states())));
        }
        if !a.bounds.contains(a.policy.params()) {
            return Err(Error::config(format!("initial policy of agent {i} lies outside its box")));
        }
    }
    Ok(radix)
}

#[derive(Debug, Clone)]
pub struct OnlineConfig {
    pub steps: u64,
    pub actor_step: StepSchedule,
    pub critic_step: StepSchedule,
    pub critic_input: CriticInput,
    /// Enforce the two-timescale conditions on the schedules.
    pub check_schedules: bool,
    /// Record every actor step.
    pub trace: bool,
}

/// One delayed actor step as applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStep {
    pub tick: u64,
    pub agent: usize,
    pub origin: u64,
    pub team_delta: f64,
    pub eta_digest: u64,
}

#[derive(Debug, Clone, Default)]
pub struct OnlineTrace {
    /// `local_deltas[t][i]`.
    pub local_deltas: Vec<Vec<f64>>,
    /// Digest of every agent's score vector per tick.
    pub eta_digests: Vec<Vec<u64>>,
    pub actor_steps: Vec<ActorStep>,
}

#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub agents: Vec<AgentState>,
    pub stats: CommStats,
    pub trace: Option<OnlineTrace>,
    pub final_state: Vec<usize>,
}

/// One protocol tick per environment step; no episode resets.
pub fn run_online<E: Jommdp + ?Sized>(
    env: &E,
    mut agents: Vec<AgentState>,
    agg: &mut dyn Aggregator,
    cfg: &OnlineConfig,
    seed: u64,
) -> Result<OnlineRun> {
    let radix = check_agents(env, &agents, agg, cfg.critic_input)?;
    if cfg.check_schedules {
        StepSchedule::check_two_timescale(&cfg.critic_step, &cfg.actor_step)?;
    }
    let k = agg.delay();
    let n = env.n_agents();
    let gamma = env.gamma();
    let mut rngs = RunRngs::new(seed);
    let mut trace = cfg.trace.then(OnlineTrace::default);
    let mut s = env.initial_state();
    for t in 0..cfg.steps {
        let a: Vec<usize> = agents
            .iter()
            .enumerate()
            .map(|(i, ag)| ag.policy.sample_action(s[i], &mut rngs.actions))
            .collect::<Result<_>>()?;
        let (s2, r) = env.step(&s, &a, &mut rngs.env)?;
        let beta = cfg.critic_step.at(t);
        let mut deltas = Vec::with_capacity(n);
        for (i, ag) in agents.iter_mut().enumerate() {
            let x = critic_index(cfg.critic_input, &radix, &s, i);
            let x2 = critic_index(cfg.critic_input, &radix, &s2, i);
            let d = local_td_error(r[i], ag.critic.value(x)?, ag.critic.value(x2)?, gamma);
            let grad = ag.critic.grad(x)?;
            critic_update(&mut ag.critic, d, &grad, beta)?;
            let eta = ag.policy.score(s[i], a[i])?;
            ag.push_eta(eta, k);
            deltas.push(vec![d]);
        }
        if let Some(tr) = trace.as_mut() {
            tr.local_deltas.push(deltas.iter().map(|d| d[0]).collect());
            tr.eta_digests.push(agents.iter().map(|ag| fnv1a(ag.eta_history[0].iter().map(|x| x.to_bits()))).collect());
        }
        if let Some(team) = agg.tick(t as i64, &deltas)? {
            let origin = t - k as u64;
            let alpha = cfg.actor_step.at(origin);
            for (i, ag) in agents.iter_mut().enumerate() {
                let eta = ag
                    .delayed_eta(k)
                    .ok_or_else(|| Error::arg("score history shorter than the delay"))?
                    .clone();
                actor_update(&mut ag.policy, &ag.bounds, team[i][0], &eta, alpha)?;
                if let Some(tr) = trace.as_mut() {
                    tr.actor_steps.push(ActorStep {
                        tick: t,
                        agent: i,
                        origin,
                        team_delta: team[i][0],
                        eta_digest: fnv1a(eta.iter().map(|x| x.to_bits())),
                    });
                }
            }
        }
        s = s2;
    }
    Ok(OnlineRun {
        agents,
        stats: agg.stats(),
        trace,
        final_state: s,
    })
}

#[derive(Debug, Clone)]
pub struct EpisodicConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Actor step per transition, indexed by the episode that produced it.
    pub actor_step: StepSchedule,
    /// Learning rate of the batch critic regression.
    pub critic_lr: f64,
    pub critic_epochs: usize,
    /// TD targets are recomputed every this many epochs.
    pub target_refresh: usize,
    pub critic_input: CriticInput,
}

impl Default for EpisodicConfig {
    fn default() -> Self {
        EpisodicConfig {
            episodes: 1000,
            steps_per_episode: 100,
            actor_step: StepSchedule::constant(0.01),
            critic_lr: 0.1,
            critic_epochs: 25,
            target_refresh: 5,
            critic_input: CriticInput::Local,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Sum over steps of the mean reward across agents.
    pub team_return: f64,
    pub agent_returns: Vec<f64>,
    /// Whether this episode's actor update received aggregated TD errors.
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodicRun {
    pub metrics: Vec<EpisodeMetrics>,
    pub agents: Vec<AgentState>,
    pub stats: CommStats,
}

/// Batch regression of a critic onto TD targets, full-batch gradient steps
/// on `½ mean (V(x) - y)²`.
///
/// `transitions` are `(x, r, x')`; targets `r + γ V(x')` are recomputed
/// from the current critic every `refresh` epochs.
pub fn fit_critic(critic: &mut Critic, transitions: &[(usize, f64, usize)], gamma: f64, lr: f64, epochs: usize, refresh: usize) -> Result<()> {
    if transitions.is_empty() || epochs == 0 {
        return Ok(());
    }
    if refresh == 0 {
        return Err(Error::config("target refresh interval must be positive"));
    }
    // Sufficient statistics: the loss only depends on per-state counts,
    // reward sums and successor counts.
    let ns = critic.n_states();
    let mut count = vec![0usize; ns];
    let mut reward = vec![0.0; ns];
    let mut succ: HashMap<(usize, usize), usize> = HashMap::new();
    for &(x, r, x2) in transitions {
        if x >= ns || x2 >= ns {
            return Err(Error::arg(format!("critic state {x} or {x2} outside 0..{ns}")));
        }
        count[x] += 1;
        reward[x] += r;
        *succ.entry((x, x2)).or_default() += 1;
    }
    let mut succ: Vec<((usize, usize), usize)> = succ.into_iter().collect();
    succ.sort_unstable();
    let m = transitions.len() as f64;
    let mut targets = vec![0.0; ns];
    for epoch in 0..epochs {
        if epoch % refresh == 0 {
            let values: Vec<f64> = (0..ns).map(|x| critic.value(x)).collect::<Result<_>>()?;
            targets = reward.clone();
            for &((x, x2), c) in &succ {
                targets[x] += gamma * values[x2] * c as f64;
            }
            for (t, &c) in targets.iter_mut().zip(&count) {
                if c > 0 {
                    *t /= c as f64;
                }
            }
        }
        let mut grad = vec![0.0; critic.n_params()];
        for x in 0..ns {
            if count[x] == 0 {
                continue;
            }
            let w = count[x] as f64 / m * (critic.value(x)? - targets[x]);
            for (g, dv) in grad.iter_mut().zip(critic.grad(x)?) {
                *g += w * dv;
            }
        }
        finite(&grad, "critic regression gradient")?;
        for (v, g) in critic.params_mut().iter_mut().zip(&grad) {
            *v -= lr * g;
        }
    }
    Ok(())
}

/// One protocol tick per episode, every episode starting from the initial
/// state.
pub fn run_episodic<E: Jommdp + ?Sized>(
    env: &E,
    mut agents: Vec<AgentState>,
    agg: &mut dyn Aggregator,
    cfg: &EpisodicConfig,
    seed: u64,
) -> Result<EpisodicRun> {
    let radix = check_agents(env, &agents, agg, cfg.critic_input)?;
    cfg.actor_step.validate()?;
    if cfg.steps_per_episode == 0 {
        return Err(Error::config("episodes need at least one step"));
    }
    let k = agg.delay();
    let n = env.n_agents();
    let len = cfg.steps_per_episode;
    let gamma = env.gamma();
    let mut rngs = RunRngs::new(seed);
    // Score vectors of the last K + 1 episodes, newest first: [agent][step].
    let mut etas: VecDeque<Vec<Vec<std::rc::Rc<Vec<f64>>>>> = VecDeque::with_capacity(k + 1);
    let mut metrics = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let values: Vec<Vec<f64>> = agents
            .iter()
            .map(|ag| (0..ag.critic.n_states()).map(|x| ag.critic.value(x)).collect())
            .collect::<Result<_>>()?;
        let mut score_cache: Vec<HashMap<(usize, usize), std::rc::Rc<Vec<f64>>>> = vec![HashMap::new(); n];
        let mut ep_etas: Vec<Vec<std::rc::Rc<Vec<f64>>>> = vec![Vec::with_capacity(len); n];
        let mut deltas = vec![Vec::with_capacity(len); n];
        let mut data: Vec<Vec<(usize, f64, usize)>> = vec![Vec::with_capacity(len); n];
        let mut agent_returns = vec![0.0; n];
        let mut team_return = 0.0;
        let mut s = env.initial_state();
        for _ in 0..len {
            let a: Vec<usize> = agents
                .iter()
                .enumerate()
                .map(|(i, ag)| ag.policy.sample_action(s[i], &mut rngs.actions))
                .collect::<Result<_>>()?;
            let (s2, r) = env.step(&s, &a, &mut rngs.env)?;
            for i in 0..n {
                let x = critic_index(cfg.critic_input, &radix, &s, i);
                let x2 = critic_index(cfg.critic_input, &radix, &s2, i);
                deltas[i].push(local_td_error(r[i], values[i][x], values[i][x2], gamma));
                data[i].push((x, r[i], x2));
                let eta = match score_cache[i].get(&(s[i], a[i])) {
                    Some(eta) => eta.clone(),
                    None => {
                        let eta = std::rc::Rc::new(agents[i].policy.score(s[i], a[i])?);
                        score_cache[i].insert((s[i], a[i]), eta.clone());
                        eta
                    }
                };
                ep_etas[i].push(eta);
                agent_returns[i] += r[i];
            }
            team_return += r.iter().sum::<f64>() / n as f64;
            s = s2;
        }
        for (ag, d) in agents.iter_mut().zip(&data) {
            fit_critic(&mut ag.critic, d, gamma, cfg.critic_lr, cfg.critic_epochs, cfg.target_refresh)?;
        }
        etas.push_front(ep_etas);
        etas.truncate(k + 1);
        let team = agg.tick(e as i64, &deltas)?;
        let complete = team.is_some();
        if let Some(team) = team {
            let origin = e - k;
            let alpha = cfg.actor_step.at(origin as u64);
            let old = etas
                .get(k)
                .ok_or_else(|| Error::arg("score history shorter than the delay"))?;
            for (i, ag) in agents.iter_mut().enumerate() {
                if team[i].len() != len {
                    return Err(Error::arg("aggregated lane has the wrong length"));
                }
                for (d, eta) in team[i].iter().zip(&old[i]) {
                    actor_update(&mut ag.policy, &ag.bounds, *d, eta, alpha)?;
                }
            }
        }
        metrics.push(EpisodeMetrics {
            episode: e,
            team_return,
            agent_returns,
            complete,
        });
    }
    Ok(EpisodicRun {
        metrics,
        agents,
        stats: agg.stats(),
    })
}

/// Metrics CSV: `episode,team_return,return_1..return_N,complete`.
pub fn metrics_csv(metrics: &[EpisodeMetrics]) -> String {
    use std::fmt::Write as _;
    let n = metrics.first().map_or(0, |m| m.agent_returns.len());
    let mut out = String::from("episode,team_return");
    for i in 1..=n {
        let _ = write!(out, ",return_{i}");
    }
    out.push_str(",complete\n");
    for m in metrics {
        let _ = write!(out, "{},{:?}", m.episode, m.team_return);
        for r in &m.agent_returns {
            let _ = write!(out, ",{r:?}");
        }
        let _ = writeln!(out, ",{}", u8::from(m.complete));
    }
    out
}

/// Mean team return over the last `window` episodes.
pub fn final_mean_return(metrics: &[EpisodeMetrics], window: usize) -> f64 {
    let tail = &metrics[metrics.len().saturating_sub(window)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|m| m.team_return).sum::<f64>() / tail.len() as f64
}
