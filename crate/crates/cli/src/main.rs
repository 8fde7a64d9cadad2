use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use dactd::config::{run_traced, Algorithm, ExperimentConfig, Mode, RunOutcome};
use dactd::envs::{enumerate, Jommdp, DEFAULT_CAPACITY};
use dactd::funcapprox::{Approximator, FeatureMap};
use dactd::learner::{final_mean_return, metrics_csv};
use dactd::verify::{gradient_suite, run_suite, SuiteReport, SUITES};
use dactd::{oracle, Error};

/// Decentralized actor-critic with exchanged TD errors: experiments,
/// property suites and exact reference quantities.
#[derive(Parser)]
#[command(name = "dactd", version)]
struct Cli {
    /// Experiment config (TOML); defaults to the bundled five-agent setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the config's seed list (and seeds the property suites).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Validate and print the resolved config without running anything.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Worker threads for independent runs (0: all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair of the config.
    Run {
        /// Also dump channel and protocol traces per run.
        #[arg(long)]
        trace: bool,
    },
    /// Run a property suite (protocol, acyclic, equivalence, critic,
    /// gradient, bias, or all).
    Verify { suite: String },
    /// Dump exact quantities of the config's environment under the initial
    /// policies of the first seed.
    Oracle,
    /// Check analytic gradients against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 100)]
        draws: usize,
    },
}

/// Exit codes: 1 invalid input, 2 protocol violation, 3 failed property.
enum Failure {
    Invalid(anyhow::Error),
    Protocol(anyhow::Error),
    Property,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(inner) if inner.is_protocol_violation() => Failure::Protocol(e),
            _ => Failure::Invalid(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Protocol(e)) => {
            eprintln!("protocol violation: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Property) => ExitCode::from(3),
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::FIVE_AGENT_LINE.to_string(),
    };
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(s) = cli.seed {
        cfg.run.seeds = vec![s];
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| Failure::Invalid(e.into()))?;
    }
    match &cli.command {
        Command::Run { trace } => cmd_run(cli, *trace),
        Command::Verify { suite } => cmd_verify(cli, suite),
        Command::Oracle => cmd_oracle(cli),
        Command::GradCheck { draws } => {
            if cli.dry_run {
                println!("grad-check: {draws} draws, seed {}", cli.seed.unwrap_or(0));
                return Ok(());
            }
            report(&[gradient_suite(*draws, cli.seed.unwrap_or(0))?])
        }
    }
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run_name(alg: Algorithm, seed: u64) -> String {
    format!("{}_seed{seed}", alg.to_string().replace(':', "_"))
}

fn cmd_run(cli: &Cli, trace: bool) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let algs = cfg.algorithms()?;
    if cli.dry_run {
        print!("{}", cfg.to_toml());
        println!("# runs: {} algorithms x {} seeds", algs.len(), cfg.run.seeds.len());
        if algs.contains(&Algorithm::DacTd) {
            println!("# dac_td delay K = {}", cfg.dac_delay()?);
        }
        return Ok(());
    }
    let out = &cli.out;
    fs::create_dir_all(out.join("checkpoints"))
        .with_context(|| format!("creating {}", out.display()))?;
    let jobs: Vec<(Algorithm, u64)> = algs
        .iter()
        .flat_map(|&a| cfg.run.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<anyhow::Result<RunOutcome>> = jobs
        .par_iter()
        .map(|&(alg, seed)| {
            let r = run_traced(&cfg, alg, seed, trace)
                .with_context(|| format!("{alg} with seed {seed}"))?;
            let name = run_name(alg, seed);
            if cfg.run.mode == Mode::Episodic {
                write(&out.join(format!("{name}.csv")), &metrics_csv(&r.metrics))?;
            }
            for (i, a) in r.agents.iter().enumerate() {
                let dir = out.join("checkpoints");
                write(&dir.join(format!("{name}_agent{}_actor.txt", i + 1)), &a.policy.checkpoint().to_text())?;
                write(&dir.join(format!("{name}_agent{}_critic.txt", i + 1)), &a.critic.checkpoint().to_text())?;
            }
            for (label, csv) in &r.traces {
                write(&out.join(format!("{name}_{label}.csv")), csv)?;
            }
            Ok(r)
        })
        .collect();
    let mut summary = String::from("algorithm,seed,final_mean_team_return\n");
    for r in results {
        let r = r?;
        let ret = if r.metrics.is_empty() {
            String::new()
        } else {
            format!("{:?}", final_mean_return(&r.metrics, 100))
        };
        let _ = writeln!(summary, "{},{},{ret}", r.algorithm, r.seed);
        println!("{} seed {}: final mean team return {ret}", r.algorithm, r.seed);
    }
    write(&out.join("summary.csv"), &summary)?;
    Ok(())
}

fn report(reports: &[SuiteReport]) -> Result<(), Failure> {
    for r in reports {
        print!("{r}");
    }
    if reports.iter().all(SuiteReport::passed) {
        Ok(())
    } else {
        Err(Failure::Property)
    }
}

fn cmd_verify(cli: &Cli, suite: &str) -> Result<(), Failure> {
    let names: Vec<&str> = if suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&suite) {
        vec![suite]
    } else {
        return Err(Failure::Invalid(anyhow::anyhow!(
            "unknown suite {suite:?}; expected one of {SUITES:?} or all"
        )));
    };
    let seed = cli.seed.unwrap_or(0);
    if cli.dry_run {
        println!("verify {names:?} with seed {seed}");
        return Ok(());
    }
    let reports = names
        .par_iter()
        .map(|s| run_suite(s, seed))
        .collect::<Result<Vec<_>, _>>()?;
    report(&reports)
}

fn cmd_oracle(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let env = cfg.env()?;
    let seed = cfg.run.seeds[0];
    if cli.dry_run {
        println!("oracle for {} agents under the initial policies of seed {seed}", env.n_agents());
        return Ok(());
    }
    let policies: Vec<_> = cfg.agents(seed)?.into_iter().map(|a| a.policy).collect();
    let model = enumerate(&env, &policies, DEFAULT_CAPACITY)?;
    let n = env.n_agents();
    let team = oracle::true_values(&model, &model.r_bar)?;
    let truth = oracle::private_true_values(&model)?;
    let local_feats: Vec<FeatureMap> = (0..n).map(|i| FeatureMap::tabular(env.n_local_states(i))).collect();
    let local = oracle::critic_values(&model, true, &local_feats)?;

    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut states = String::from("state,d,r_bar,team_value");
    for i in 1..=n {
        let _ = write!(states, ",value_{i},local_critic_{i}");
    }
    states.push('\n');
    for s in 0..model.n_states() {
        let label: Vec<String> = model.states.decode(s).iter().map(usize::to_string).collect();
        let _ = write!(states, "{},{:?},{:?},{:?}", label.join(""), model.d[s], model.r_bar[s], team[s]);
        for i in 0..n {
            let _ = write!(states, ",{:?},{:?}", truth[i][s], local[i][s]);
        }
        states.push('\n');
    }
    write(&out.join("oracle_states.csv"), &states)?;

    let grad = oracle::exact_policy_gradient(&env, &policies, &model, &truth)?;
    let bias = oracle::bias_terms(&env, &policies, &model, &local, &truth)?;
    let mut g = String::from("agent,param,exact_gradient,bias_next_state,bias_current_state\n");
    for i in 0..n {
        for k in 0..policies[i].n_params() {
            let _ = writeln!(
                g,
                "{},{k},{:?},{:?},{:?}",
                i + 1,
                grad[i][k],
                bias.next_state[i][k],
                bias.current_state[i][k]
            );
        }
    }
    write(&out.join("oracle_gradient.csv"), &g)?;

    let mut e = String::from("re,im\n");
    for z in oracle::critic_eigenvalues(&model) {
        let _ = writeln!(e, "{:?},{:?}", z.re, z.im);
    }
    write(&out.join("oracle_eigenvalues.csv"), &e)?;
    println!(
        "{} global states; stationary team objective {:?}; wrote oracle_*.csv to {}",
        model.n_states(),
        oracle::team_objective(&model)?,
        out.display()
    );
    Ok(())
}
