//! Experiment configuration and the train / evaluate / baseline runs shared
//! by the command line and the acceptance checks.
//!
//! The workload trace is split in two: episodes used for training start in
//! the first `train_fraction` of the windows, evaluation covers consecutive
//! episodes right after the split point.

pub mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentError, AgentKind, Controller, DrqnConfig, PpoConfig, Runner, TrainProgress};
use crate::baselines::{run_episode, Autoscaler, HpaConfig, RpsConfig};
use crate::env::{splitmix64, EnvConfig, EnvError, FaasEnv, RewardConfig};
use crate::sim::SimConfig;
use crate::workload::{load_trace, parse_trace, synth_trace, Pattern, Trace, WorkloadError};
use crate::ConfigError;
use report::{ReportError, RunMeta, WindowRow};

pub const CONFIG_VERSION: u32 = 1;

/// Bundled synthetic diurnal trace: five compressed 240-window days.
pub const BUNDLED_TRACE: &str = include_str!("../../data/diurnal_sine.csv");
pub const BUNDLED_PATTERN: Pattern = Pattern::DiurnalSine;
pub const BUNDLED_WINDOWS: usize = 1200;
pub const BUNDLED_SCALE: u32 = 10;
pub const BUNDLED_SEED: u64 = 7;
pub const BUNDLED_PERIOD: usize = 240;

pub fn bundled_trace() -> Trace {
    parse_trace("diurnal_sine", BUNDLED_TRACE).expect("bundled trace parses")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    Bundled,
    File {
        path: PathBuf,
    },
    Synthetic {
        pattern: Pattern,
        windows: usize,
        scale: u32,
        seed: u64,
        period: usize,
    },
}

impl WorkloadSpec {
    pub fn load(&self) -> Result<Trace, WorkloadError> {
        match self {
            WorkloadSpec::Bundled => Ok(bundled_trace()),
            WorkloadSpec::File { path } => load_trace(path),
            WorkloadSpec::Synthetic {
                pattern,
                windows,
                scale,
                seed,
                period,
            } => Ok(synth_trace(*pattern, *windows, *scale, *seed, *period)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub agent: AgentKind,
    pub episodes: u64,
    /// Windows per evaluation run; a multiple of the episode length.
    pub eval_windows: usize,
    /// Training checkpoints are written every this many episodes.
    pub checkpoint_every: u64,
    /// Share of the trace whose windows may start training episodes.
    pub train_fraction: f64,
    pub output_dir: PathBuf,
    pub workload: WorkloadSpec,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub drqn: DrqnConfig,
    pub hpa: HpaConfig,
    pub rps: RpsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 42,
            agent: AgentKind::Rppo,
            episodes: 200,
            eval_windows: 200,
            checkpoint_every: 50,
            train_fraction: 0.8,
            output_dir: PathBuf::from("runs"),
            workload: WorkloadSpec::Bundled,
            sim: SimConfig::default(),
            reward: RewardConfig::default(),
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            drqn: DrqnConfig::default(),
            hpa: HpaConfig::default(),
            rps: RpsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical pretty JSON; loading the dump and dumping again gives the
    /// same bytes.
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version));
        }
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        if self.eval_windows == 0 || !self.eval_windows.is_multiple_of(self.env.episode_windows) {
            return bad(format!(
                "eval_windows must be a positive multiple of the episode length {}",
                self.env.episode_windows
            ));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        if let WorkloadSpec::File { path } = &self.workload {
            if !path.is_file() {
                return bad(format!("workload trace {} does not exist", path.display()));
            }
        }
        if let WorkloadSpec::Synthetic { windows, .. } = &self.workload {
            if *windows == 0 {
                return bad("synthetic workload needs at least one window".into());
            }
        }
        self.sim.validate()?;
        self.reward.validate(&self.sim)?;
        self.env.validate()?;
        self.ppo.validate()?;
        self.drqn.validate()?;
        self.hpa.validate(&self.sim)?;
        self.rps.validate(&self.sim)?;
        if self.env.actions.len() < 2 {
            return bad("the action space needs at least two actions".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Nn(#[from] faas_lab_nn::NnError),
    #[error("episode contract violated: {0}")]
    Episode(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Errors caused by the user's inputs rather than by the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_)
                | ExperimentError::Workload(_)
                | ExperimentError::Env(EnvError::Config(_))
                | ExperimentError::Nn(_)
                | ExperimentError::Report(ReportError::Mismatch(_) | ReportError::Parse { .. })
        )
    }
}

/// Trace windows reserved for training and for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Split {
    /// Last cursor a training episode may start at.
    pub train_last_cursor: usize,
    /// First evaluation cursor; equals the number of training windows.
    pub eval_start: usize,
}

pub fn split(cfg: &ExperimentConfig, trace: &Trace, eval_windows: usize) -> Result<Split, ConfigError> {
    let ep = cfg.env.episode_windows;
    let train_windows = (trace.len() as f64 * cfg.train_fraction).floor() as usize;
    if train_windows < ep + 1 {
        return Err(ConfigError::Invalid(format!(
            "trace `{}` leaves {train_windows} training windows, an episode needs {}",
            trace.name,
            ep + 1
        )));
    }
    // Episodes start every `ep` windows; the last one needs its warm-up
    // window plus `ep` steps.
    let needed = train_windows + eval_windows + 1;
    if !eval_windows.is_multiple_of(ep) || needed > trace.len() {
        return Err(ConfigError::Invalid(format!(
            "evaluating {eval_windows} windows needs {needed} trace windows, `{}` has {}",
            trace.name,
            trace.len()
        )));
    }
    Ok(Split {
        train_last_cursor: train_windows - ep - 1,
        eval_start: train_windows,
    })
}

pub fn load_workload(cfg: &ExperimentConfig) -> Result<Arc<Trace>, ExperimentError> {
    Ok(Arc::new(cfg.workload.load()?))
}

pub fn make_env(cfg: &ExperimentConfig, trace: &Arc<Trace>) -> Result<FaasEnv, ConfigError> {
    FaasEnv::new(cfg.sim.clone(), cfg.reward, cfg.env.clone(), trace.clone())
}

/// Content digest of the trace and the evaluation seed.
pub fn workload_hash(cfg: &ExperimentConfig, trace: &Trace) -> String {
    trace.digest(cfg.seed)
}

pub fn new_agent(cfg: &ExperimentConfig) -> Agent {
    Agent::new(
        cfg.agent,
        crate::env::OBS_DIM,
        cfg.env.actions.len(),
        &cfg.ppo,
        &cfg.drqn,
        cfg.seed,
    )
}

/// Trains `agent` on the training part of the trace for `cfg.episodes`
/// episodes. `on_episode` sees every finished episode. Each episode must
/// span exactly `episode_windows` steps.
pub fn train_agent(
    cfg: &ExperimentConfig,
    trace: &Arc<Trace>,
    agent: &mut Agent,
    mut on_episode: impl FnMut(&TrainProgress, &Agent) -> Result<(), AgentError>,
) -> Result<(), ExperimentError> {
    let s = split(cfg, trace, cfg.eval_windows)?;
    let mut env = make_env(cfg, trace)?;
    env.set_cursor_range(0, s.train_last_cursor)?;
    let ep = cfg.env.episode_windows;
    agent.train(env, cfg.episodes, cfg.seed, |p, a| {
        if p.steps != ep {
            return Err(AgentError::Aborted(format!(
                "training episode {} ran {} windows instead of {ep}",
                p.episode, p.steps
            )));
        }
        on_episode(p, a)
    })?;
    Ok(())
}

pub const TRAIN_CSV_HEADER: &str =
    "episode,env_steps,steps,reward,throughput,policy_loss,value_loss,entropy,clip_fraction,q_loss,epsilon";

pub fn training_row(p: &TrainProgress) -> String {
    format!(
        "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        p.episode,
        p.env_steps,
        p.steps,
        p.reward,
        p.throughput.unwrap_or(f64::NAN),
        p.policy_loss,
        p.value_loss,
        p.entropy,
        p.clip_fraction,
        p.q_loss,
        p.epsilon
    )
}

pub fn training_csv(progress: &[TrainProgress]) -> String {
    let mut out = String::from(TRAIN_CSV_HEADER);
    out.push('\n');
    for p in progress {
        let _ = writeln!(out, "{}", training_row(p));
    }
    out
}

/// `(episode seed, cursor)` of every evaluation episode.
pub fn eval_plan(cfg: &ExperimentConfig, trace: &Trace, windows: usize) -> Result<Vec<(u64, usize)>, ConfigError> {
    if windows == 0 || !windows.is_multiple_of(cfg.env.episode_windows) {
        return Err(ConfigError::Invalid(format!(
            "windows must be a positive multiple of the episode length {}",
            cfg.env.episode_windows
        )));
    }
    let s = split(cfg, trace, windows)?;
    let ep = cfg.env.episode_windows;
    Ok((0..windows / ep)
        .map(|k| {
            let seed = Runner::<FaasEnv>::episode_seed(splitmix64(cfg.seed ^ 0x5eed_e7a1), k as u64);
            (seed, s.eval_start + k * ep)
        })
        .collect())
}

fn check_episode(env: &FaasEnv, steps: usize, cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    let ep = cfg.env.episode_windows;
    let now = env.sim().map(|s| s.now()).unwrap_or(f64::NAN);
    let expected = (ep + 1) as f64 * cfg.sim.window_seconds;
    if steps != ep || (now - expected).abs() > 1e-9 {
        return Err(ExperimentError::Episode(format!(
            "{steps} windows over {now} simulated seconds, expected {ep} windows ending at {expected} s"
        )));
    }
    Ok(())
}

/// Greedy evaluation of a policy over `windows` held-out windows.
pub fn evaluate_controller(
    cfg: &ExperimentConfig,
    trace: &Arc<Trace>,
    windows: usize,
    policy: &str,
    ctl: &mut dyn Controller,
) -> Result<Vec<WindowRow>, ExperimentError> {
    let mut env = make_env(cfg, trace)?;
    let mut rows = Vec::with_capacity(windows);
    for (seed, cursor) in eval_plan(cfg, trace, windows)? {
        let obs = env.reset(seed, cursor)?;
        let mut obs = env.scales().normalize(&obs).to_vec();
        ctl.reset();
        let mut steps = 0;
        while !env.is_done() {
            let r = env.step(ctl.decide(&obs))?;
            rows.push(WindowRow::from_step(rows.len() as u64, policy, &r));
            obs = r.obs_vector.to_vec();
            steps += 1;
        }
        check_episode(&env, steps, cfg)?;
    }
    Ok(rows)
}

/// Evaluation of a threshold controller on the same episodes and arrivals
/// as [`evaluate_controller`].
pub fn evaluate_autoscaler(
    cfg: &ExperimentConfig,
    trace: &Arc<Trace>,
    windows: usize,
    policy: &str,
    scaler: &mut dyn Autoscaler,
) -> Result<Vec<WindowRow>, ExperimentError> {
    let mut env = make_env(cfg, trace)?;
    let mut rows = Vec::with_capacity(windows);
    for (seed, cursor) in eval_plan(cfg, trace, windows)? {
        env.reset(seed, cursor)?;
        let steps = run_episode(&mut env, scaler)?;
        for r in &steps {
            rows.push(WindowRow::from_step(rows.len() as u64, policy, r));
        }
        check_episode(&env, steps.len(), cfg)?;
    }
    Ok(rows)
}

pub fn run_meta(cfg: &ExperimentConfig, trace: &Trace, policy: &str, rows: &[WindowRow], wall: f64) -> RunMeta {
    RunMeta {
        policy: policy.to_string(),
        seed: cfg.seed,
        windows: rows.len(),
        episode_windows: cfg.env.episode_windows,
        workload_hash: workload_hash(cfg, trace),
        wall_clock_seconds: wall,
    }
}

pub fn checkpoint_path(dir: &Path, agent: AgentKind, seed: u64) -> PathBuf {
    dir.join(format!("{}_s{seed}.ckpt", agent.name()))
}

pub fn training_csv_path(dir: &Path, agent: AgentKind, seed: u64) -> PathBuf {
    dir.join(format!("train_{}_s{seed}.csv", agent.name()))
}

pub fn eval_csv_path(dir: &Path, policy: &str, seed: u64) -> PathBuf {
    dir.join(format!("eval_{policy}_s{seed}.csv"))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })
}
