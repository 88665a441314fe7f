use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use faas_lab_core::agents::{AgentKind, Controller, RandomController};
use faas_lab_core::baselines::BaselineKind;
use faas_lab_core::experiment::report::{compare_runs, read_run, write_run, RunSummary, WindowRow};
use faas_lab_core::experiment::{self as exp, ExperimentConfig, ExperimentError};
use faas_lab_core::nn::Checkpoint;
use faas_lab_core::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "faas-scale-lab", version, about = "Train, evaluate and compare FaaS autoscaling policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    agent: Option<AgentArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    episodes: Option<u64>,
    /// Evaluation windows.
    #[arg(long, global = true)]
    windows: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an agent and write its checkpoint and training CSV.
    Train,
    /// Evaluate a trained agent greedily on the held-out trace segment.
    Eval {
        /// Checkpoint to load; defaults to the one `train` writes.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a non-learning policy on the held-out trace segment.
    Baseline {
        #[arg(long, value_enum)]
        policy: PolicyArg,
    },
    /// Summarize evaluation CSVs into a markdown report.
    Compare {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
    },
    /// Print the effective config with every default filled in.
    Config,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AgentArg {
    Rppo,
    Ppo,
    Drqn,
}

impl From<AgentArg> for AgentKind {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::Rppo => AgentKind::Rppo,
            AgentArg::Ppo => AgentKind::Ppo,
            AgentArg::Drqn => AgentKind::Drqn,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Hpa,
    Rps,
    Random,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = if e.is_validation() { 2 } else { 3 };
        Failure { code, error: e.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: 2, error: e.into() }
    }
}

fn runtime(error: anyhow::Error) -> Failure {
    Failure { code: 3, error }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FAAS_LAB_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(a) = cli.agent {
        cfg.agent = a.into();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = cli.episodes {
        cfg.episodes = e;
    }
    if let Some(w) = cli.windows {
        cfg.eval_windows = w;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Compare { csvs } => return compare(&cli, csvs),
        Command::Config => {
            print!("{}", load_config(&cli)?.dump());
            return Ok(());
        }
        _ => {}
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Train => train(&cfg),
        Command::Eval { checkpoint } => eval(&cfg, checkpoint.as_deref()),
        Command::Baseline { policy } => baseline(&cfg, *policy),
        Command::Compare { .. } | Command::Config => unreachable!(),
    }
}

fn train(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let trace = exp::load_workload(cfg)?;
    let dir = &cfg.output_dir;
    let ckpt_path = exp::checkpoint_path(dir, cfg.agent, cfg.seed);
    let csv_path = exp::training_csv_path(dir, cfg.agent, cfg.seed);
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)?;
    log::info!(
        "training {} for {} episodes on `{}` (seed {})",
        cfg.agent.name(),
        cfg.episodes,
        trace.name,
        cfg.seed
    );
    let start = Instant::now();
    let mut agent = exp::new_agent(cfg);
    let mut progress = Vec::new();
    let result = exp::train_agent(cfg, &trace, &mut agent, |p, a| {
        progress.push(p.clone());
        if p.episode % cfg.checkpoint_every == 0 {
            a.checkpoint().save(&ckpt_path)?;
            log::info!(
                "episode {}: reward {:.3}, throughput {:.3}",
                p.episode,
                p.reward,
                p.throughput.unwrap_or(f64::NAN)
            );
        }
        Ok(())
    });
    // The weights are the last good state even when training stopped early.
    agent
        .checkpoint()
        .save(&ckpt_path)
        .with_context(|| format!("writing {}", ckpt_path.display()))
        .map_err(runtime)?;
    exp::write_file(&csv_path, &exp::training_csv(&progress))?;
    result?;
    log::info!(
        "trained in {:.1} s; wrote {} and {}",
        start.elapsed().as_secs_f64(),
        ckpt_path.display(),
        csv_path.display()
    );
    Ok(())
}

fn finish_eval(cfg: &ExperimentConfig, trace: &faas_lab_core::workload::Trace, policy: &str, rows: Vec<WindowRow>, start: Instant) -> Result<(), Failure> {
    let wall = start.elapsed().as_secs_f64();
    let meta = exp::run_meta(cfg, trace, policy, &rows, wall);
    let path = exp::eval_csv_path(&cfg.output_dir, policy, cfg.seed);
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))
        .map_err(runtime)?;
    write_run(&path, &rows, &meta).map_err(ExperimentError::from)?;
    let s = RunSummary::from_written(&rows, cfg.env.episode_windows, wall);
    println!(
        "{policy}: {} windows, mean episodic reward {:.4}, mean throughput {:.4}, mean replicas {:.4}, mean exec time {:.4} s, invalid actions {}",
        s.windows, s.mean_episode_reward, s.mean_throughput, s.mean_replicas, s.mean_exec_time, s.invalid_actions
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn eval(cfg: &ExperimentConfig, checkpoint: Option<&std::path::Path>) -> Result<(), Failure> {
    let path = checkpoint
        .map(PathBuf::from)
        .unwrap_or_else(|| exp::checkpoint_path(&cfg.output_dir, cfg.agent, cfg.seed));
    let mut agent = exp::new_agent(cfg);
    Checkpoint::load(&path)
        .and_then(|ck| agent.restore(&ck))
        .map_err(|e| Failure {
            code: 2,
            error: anyhow::Error::new(e).context(format!("loading checkpoint {}", path.display())),
        })?;
    let trace = exp::load_workload(cfg)?;
    let start = Instant::now();
    let policy = cfg.agent.name();
    let mut ctl = agent.greedy();
    let rows = exp::evaluate_controller(cfg, &trace, cfg.eval_windows, policy, ctl.as_mut())?;
    finish_eval(cfg, &trace, policy, rows, start)
}

fn baseline(cfg: &ExperimentConfig, policy: PolicyArg) -> Result<(), Failure> {
    let trace = exp::load_workload(cfg)?;
    let start = Instant::now();
    let (name, rows) = match policy {
        PolicyArg::Random => {
            let mut ctl: Box<dyn Controller> = Box::new(RandomController::new(cfg.env.actions.len(), cfg.seed));
            ("random", exp::evaluate_controller(cfg, &trace, cfg.eval_windows, "random", ctl.as_mut())?)
        }
        PolicyArg::Hpa | PolicyArg::Rps => {
            let kind = if matches!(policy, PolicyArg::Hpa) { BaselineKind::Hpa } else { BaselineKind::Rps };
            let mut scaler = kind.build(&cfg.hpa, &cfg.rps);
            let name = kind.name();
            (name, exp::evaluate_autoscaler(cfg, &trace, cfg.eval_windows, name, scaler.as_mut())?)
        }
    };
    finish_eval(cfg, &trace, name, rows, start)
}

fn compare(cli: &Cli, csvs: &[PathBuf]) -> Result<(), Failure> {
    let mut runs = Vec::with_capacity(csvs.len());
    for path in csvs {
        let run = read_run(path).map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })?;
        runs.push(run);
    }
    let report = compare_runs(&runs).map_err(ExperimentError::from)?;
    print!("{report}");
    if let Some(dir) = &cli.out {
        let path = dir.join("report.md");
        exp::write_file(&path, &report)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}
