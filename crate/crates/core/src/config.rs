//! Experiment configuration (TOML) and the runner that turns it into
//! agents, an aggregator and a learning loop.
//!
//! Agent ids are 1-based in config files and 0-based everywhere else.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envs::{CoupledLine, Jommdp, Radix};
use crate::error::{Error, Result};
use crate::funcapprox::{Critic, FeatureMap, LinearCritic, MlpCritic, SoftmaxPolicy};
use crate::learner::{
    run_episodic, run_online, AgentState, CriticInput, EpisodeMetrics, EpisodicConfig, OnlineConfig, ParamBox,
    RunRngs, StepSchedule,
};
use crate::protocol::{AcyclicNetwork, Aggregator, CommStats, GeneralNetwork, NeighborhoodAverage};
use crate::topology::GraphSchedule;
use crate::transport::{ChannelModel, DelayLaw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub kind: String,
    pub agents: usize,
    pub gamma: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            kind: "coupled_line".into(),
            agents: 5,
            gamma: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// `line`, `complete`, `star`, `edges` or `schedule`.
    pub kind: String,
    /// Undirected edges (1-based) for `edges`; directed when `directed`.
    pub edges: Vec<[usize; 2]>,
    pub directed: bool,
    /// Periodic list of directed edge sets (1-based) for `schedule`.
    pub schedule: Vec<Vec<[usize; 2]>>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            kind: "line".into(),
            edges: Vec::new(),
            directed: false,
            schedule: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub t1: usize,
    pub t2: usize,
    pub drop_prob: f64,
    pub delay: DelayLaw,
    /// Mixed into every run seed to derive the channel's stream.
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            t1: 0,
            t2: 1,
            drop_prob: 0.0,
            delay: DelayLaw::Uniform,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Vector fill-in on any graph.
    #[default]
    Alg1,
    /// Differential aggregation on acyclic graphs.
    Alg2,
    /// Exact team mean with the same delay, no network.
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    /// Overrides the latency bound (must not undercut it).
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One protocol tick per episode.
    #[default]
    Episodic,
    /// One protocol tick per step, no resets.
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub algorithms: Vec<String>,
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Total steps in online mode.
    pub steps: u64,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Episodic,
            algorithms: vec!["dac_td".into()],
            episodes: 1000,
            steps_per_episode: 100,
            steps: 200_000,
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Tabular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActorConfig {
    pub model: ModelKind,
    pub hidden: Vec<usize>,
    pub step: StepSchedule,
    pub bounds: [f64; 2],
}

impl Default for ActorConfig {
    fn default() -> Self {
        ActorConfig {
            model: ModelKind::Mlp,
            hidden: vec![10, 10],
            step: StepSchedule::constant(0.01),
            bounds: [-10.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub model: ModelKind,
    pub hidden: Vec<usize>,
    pub input: CriticInput,
    /// Online step schedule.
    pub step: StepSchedule,
    /// Batch regression (episodic mode).
    pub lr: f64,
    pub epochs: usize,
    pub target_refresh: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            model: ModelKind::Mlp,
            hidden: vec![5, 5],
            input: CriticInput::Local,
            step: StepSchedule::polynomial(0.5, 0.6),
            lr: 0.1,
            epochs: 25,
            target_refresh: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub graph: GraphConfig,
    pub channel: ChannelConfig,
    pub protocol: ProtocolConfig,
    pub run: RunConfig,
    pub actor: ActorConfig,
    pub critic: CriticConfig,
    /// Enforce the two-timescale step-size conditions (online mode).
    pub theory_checks: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    DacTd,
    IndependentAc,
    KhopSac(usize),
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dac_td" => Ok(Algorithm::DacTd),
            "independent_ac" => Ok(Algorithm::IndependentAc),
            _ => match s.strip_prefix("khop_sac:") {
                Some(k) => k
                    .parse()
                    .map(Algorithm::KhopSac)
                    .map_err(|_| Error::config(format!("bad hop count in {s:?}"))),
                None => Err(Error::config(format!(
                    "unknown algorithm {s:?} (dac_td, independent_ac, khop_sac:<k>)"
                ))),
            },
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::DacTd => f.write_str("dac_td"),
            Algorithm::IndependentAc => f.write_str("independent_ac"),
            Algorithm::KhopSac(k) => write!(f, "khop_sac:{k}"),
        }
    }
}

fn zero_based(e: [usize; 2], n: usize) -> Result<(usize, usize)> {
    if e[0] == 0 || e[1] == 0 || e[0] > n || e[1] > n {
        return Err(Error::config(format!("edge {e:?}: agent ids run from 1 to {n}")));
    }
    Ok((e[0] - 1, e[1] - 1))
}

impl ExperimentConfig {
    /// The bundled five-agent coupled-line experiment.
    pub const FIVE_AGENT_LINE: &'static str = include_str!("../../cli/configs/five_agent_line.toml");

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn env(&self) -> Result<CoupledLine> {
        match self.env.kind.as_str() {
            "coupled_line" => CoupledLine::new(self.env.agents, self.env.gamma),
            "micro" => CoupledLine::new(2, self.env.gamma),
            k => Err(Error::config(format!("unknown environment {k:?}"))),
        }
    }

    pub fn graph(&self) -> Result<GraphSchedule> {
        let n = self.env()?.n_agents();
        match self.graph.kind.as_str() {
            "line" => GraphSchedule::line(n),
            "complete" => GraphSchedule::complete(n),
            "star" => GraphSchedule::star(n),
            "edges" => {
                let edges = self
                    .graph
                    .edges
                    .iter()
                    .map(|&e| zero_based(e, n))
                    .collect::<Result<Vec<_>>>()?;
                if self.graph.directed {
                    GraphSchedule::new_static(n, edges)
                } else {
                    GraphSchedule::undirected(n, edges)
                }
            }
            "schedule" => {
                let period = self
                    .graph
                    .schedule
                    .iter()
                    .map(|snap| snap.iter().map(|&e| zero_based(e, n)).collect())
                    .collect::<Result<Vec<_>>>()?;
                GraphSchedule::time_varying(n, period)
            }
            k => Err(Error::config(format!("unknown graph kind {k:?}"))),
        }
        .map_err(|e| match e {
            Error::Argument(m) | Error::Topology(m) => Error::Config(m),
            e => e,
        })
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>> {
        self.run.algorithms.iter().map(|s| s.parse()).collect()
    }

    /// The channel of one run.
    pub fn channel_model(&self, seed: u64) -> Result<ChannelModel> {
        let c = &self.channel;
        ChannelModel::new(c.t1, c.t2, c.drop_prob, RunRngs::channel_seed(seed) ^ c.seed)?.with_delay_law(c.delay)
    }

    /// Delay of the team TD error seen by DAC-TD.
    pub fn dac_delay(&self) -> Result<usize> {
        let g = self.graph()?;
        let bound = match self.protocol.kind {
            ProtocolKind::Alg2 => g.latency_bound(0, 1)?,
            _ => g.latency_bound(self.channel.t1, self.channel.t2)?,
        };
        match self.protocol.k {
            Some(k) if k < bound => Err(Error::config(format!("K = {k} is below the latency bound {bound}"))),
            Some(k) => Ok(k),
            None => Ok(bound),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let env = self.env()?;
        let g = self.graph()?;
        self.channel_model(0)?;
        if self.run.seeds.is_empty() {
            return Err(Error::config("no seeds"));
        }
        let algs = self.algorithms()?;
        if algs.is_empty() {
            return Err(Error::config("no algorithms"));
        }
        match self.run.mode {
            Mode::Episodic if self.run.episodes == 0 || self.run.steps_per_episode == 0 => {
                return Err(Error::config("episodes and steps_per_episode must be positive"))
            }
            Mode::Online if self.run.steps == 0 => return Err(Error::config("steps must be positive")),
            _ => {}
        }
        if !(0.0..1.0).contains(&env.gamma()) {
            return Err(Error::config("discount outside [0, 1)"));
        }
        ParamBox::new(self.actor.bounds[0], self.actor.bounds[1])?;
        if self.critic.input == CriticInput::Global && self.critic.model == ModelKind::Tabular {
            let ns = Radix::new(vec![2; env.n_agents()]).len();
            if ns > crate::envs::DEFAULT_CAPACITY {
                return Err(Error::Capacity(format!("{ns} global critic states")));
            }
        }
        if self.critic.target_refresh == 0 {
            return Err(Error::config("critic.target_refresh must be positive"));
        }
        if self.theory_checks {
            StepSchedule::check_two_timescale(&self.critic.step, &self.actor.step)?;
        }
        if algs.contains(&Algorithm::DacTd) {
            if self.protocol.kind == ProtocolKind::Alg2 {
                let class = g.classify().map_err(|_| Error::config("alg2 needs a static graph"))?;
                if !class.acyclic_undirected || !g.is_symmetric() {
                    return Err(Error::config("alg2 needs an acyclic graph with bidirectional edges"));
                }
                let c = &self.channel;
                if c.t1 != 0 || c.t2 != 1 || c.drop_prob != 0.0 {
                    return Err(Error::config("alg2 needs a lossless unit-delay channel (t1 = 0, t2 = 1, drop_prob = 0)"));
                }
            }
            self.dac_delay()?;
        }
        for a in &algs {
            if let Algorithm::KhopSac(k) = a {
                let class = g
                    .classify()
                    .map_err(|_| Error::config("khop_sac needs a static graph"))?;
                let diam = class
                    .diameter
                    .ok_or_else(|| Error::config("khop_sac needs a connected graph"))?;
                if *k > diam {
                    return Err(Error::config(format!("khop_sac:{k} exceeds the graph diameter {diam}")));
                }
            }
        }
        Ok(())
    }

    pub fn aggregator(&self, alg: Algorithm, seed: u64, width: usize) -> Result<Box<dyn Aggregator>> {
        let n = self.env()?.n_agents();
        Ok(match alg {
            Algorithm::IndependentAc => Box::new(NeighborhoodAverage::independent(n)?),
            Algorithm::KhopSac(k) => Box::new(NeighborhoodAverage::khop(&self.graph()?, k)?),
            Algorithm::DacTd => {
                let k = self.dac_delay()?;
                let g = Arc::new(self.graph()?);
                match self.protocol.kind {
                    ProtocolKind::Alg1 => Box::new(GeneralNetwork::with_k(g, self.channel_model(seed)?, k)?),
                    ProtocolKind::Alg2 => Box::new(AcyclicNetwork::with_k(g, k, width)?),
                    ProtocolKind::Centralized => Box::new(NeighborhoodAverage::centralized(n, k)?),
                }
            }
        })
    }

    /// Fresh agents for one run; network weights from the run's init stream.
    pub fn agents(&self, seed: u64) -> Result<Vec<AgentState>> {
        use rand::RngCore;
        let env = self.env()?;
        let n = env.n_agents();
        let mut init = RunRngs::new(seed).init;
        let bounds = ParamBox::new(self.actor.bounds[0], self.actor.bounds[1])?;
        let critic_states = match self.critic.input {
            CriticInput::Local => None,
            CriticInput::Global => Some(Radix::new((0..n).map(|i| env.n_local_states(i)).collect()).len()),
        };
        (0..n)
            .map(|i| {
                let (ns, na) = (env.n_local_states(i), env.n_local_actions(i));
                let policy = match self.actor.model {
                    ModelKind::Mlp => SoftmaxPolicy::mlp(ns, na, &self.actor.hidden, init.next_u64())?,
                    ModelKind::Tabular => SoftmaxPolicy::tabular(ns, na)?,
                };
                let cs = critic_states.unwrap_or(ns);
                let critic = match self.critic.model {
                    ModelKind::Mlp => Critic::Mlp(MlpCritic::new(cs, &self.critic.hidden, init.next_u64())?),
                    ModelKind::Tabular => Critic::Linear(LinearCritic::new(FeatureMap::tabular(cs))),
                };
                Ok(AgentState::new(policy, critic, bounds))
            })
            .collect()
    }

    pub fn episodic(&self) -> EpisodicConfig {
        EpisodicConfig {
            episodes: self.run.episodes,
            steps_per_episode: self.run.steps_per_episode,
            actor_step: self.actor.step,
            critic_lr: self.critic.lr,
            critic_epochs: self.critic.epochs,
            target_refresh: self.critic.target_refresh,
            critic_input: self.critic.input,
        }
    }

    pub fn online(&self) -> OnlineConfig {
        OnlineConfig {
            steps: self.run.steps,
            actor_step: self.actor.step,
            critic_step: self.critic.step,
            critic_input: self.critic.input,
            check_schedules: self.theory_checks,
            trace: false,
        }
    }
}

/// Outcome of one (algorithm, seed) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub delay: usize,
    /// Per-episode metrics (episodic mode only).
    pub metrics: Vec<EpisodeMetrics>,
    pub agents: Vec<AgentState>,
    pub stats: CommStats,
    /// Named CSV traces, when requested.
    pub traces: Vec<(&'static str, String)>,
}

pub fn run_one(cfg: &ExperimentConfig, alg: Algorithm, seed: u64) -> Result<RunOutcome> {
    run_traced(cfg, alg, seed, false)
}

/// Like [`run_one`], optionally recording channel and protocol traces.
pub fn run_traced(cfg: &ExperimentConfig, alg: Algorithm, seed: u64, trace: bool) -> Result<RunOutcome> {
    let env = cfg.env()?;
    let agents = cfg.agents(seed)?;
    let width = match cfg.run.mode {
        Mode::Episodic => cfg.run.steps_per_episode,
        Mode::Online => 1,
    };
    let mut agg = cfg.aggregator(alg, seed, width)?;
    if trace {
        agg.enable_trace();
    }
    let delay = agg.delay();
    let (metrics, agents, stats) = match cfg.run.mode {
        Mode::Episodic => {
            let r = run_episodic(&env, agents, agg.as_mut(), &cfg.episodic(), seed)?;
            (r.metrics, r.agents, r.stats)
        }
        Mode::Online => {
            let r = run_online(&env, agents, agg.as_mut(), &cfg.online(), seed)?;
            (Vec::new(), r.agents, r.stats)
        }
    };
    Ok(RunOutcome {
        algorithm: alg,
        seed,
        delay,
        metrics,
        agents,
        stats,
        traces: agg.traces(),
    })
}
