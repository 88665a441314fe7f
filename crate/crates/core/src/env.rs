//! Episodic autoscaling environment over the cluster simulator.
//!
//! One step is one sampling window: the agent picks a replica delta, the
//! simulator runs the next trace window and the window's metrics become the
//! next observation. An episode is `episode_windows` steps, preceded by a
//! warm-up window at the minimum replica count whose metrics form the first
//! observation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{ClusterSim, SimConfig, WindowMetrics};
use crate::workload::{default_size_mix, sample_arrivals, validate_mix, SizeMix, Trace};
use crate::ConfigError;

pub const OBS_DIM: usize = 6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("step called after the episode finished; call reset first")]
    EpisodeDone,
    #[error("step called before reset")]
    NotReset,
    #[error("action index {index} outside the action space of {size}")]
    BadAction { index: usize, size: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Raw window observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tau: f64,
    pub phi: f64,
    pub q: f64,
    pub n: f64,
    pub c: f64,
    pub m: f64,
}

impl Observation {
    pub fn from_metrics(m: &WindowMetrics) -> Self {
        Self {
            tau: m.tau,
            phi: m.phi,
            q: m.q as f64,
            n: m.n as f64,
            c: m.c,
            m: m.m,
        }
    }
}

/// Scales mapping raw observation fields onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsScales {
    pub timeout: f64,
    pub q_norm: f64,
    pub n_min: f64,
    pub n_max: f64,
    pub c_max: f64,
    pub m_max: f64,
}

impl ObsScales {
    pub fn new(sim: &SimConfig, q_norm: f64) -> Self {
        Self {
            timeout: sim.timeout_seconds,
            q_norm: q_norm.max(1.0),
            n_min: sim.min_replicas as f64,
            n_max: sim.max_replicas as f64,
            c_max: sim.cpu_cap,
            m_max: sim.mem_cap,
        }
    }

    fn n_span(&self) -> f64 {
        (self.n_max - self.n_min).max(1.0)
    }

    pub fn normalize(&self, o: &Observation) -> [f64; OBS_DIM] {
        [
            o.tau / self.timeout,
            o.phi,
            (o.q / self.q_norm).min(1.0),
            (o.n - self.n_min) / self.n_span(),
            o.c / self.c_max,
            o.m / self.m_max,
        ]
    }

    /// Inverse of [`normalize`](Self::normalize); `q` saturates at `q_norm`.
    pub fn denormalize(&self, v: &[f64; OBS_DIM]) -> Observation {
        Observation {
            tau: v[0] * self.timeout,
            phi: v[1],
            q: v[2] * self.q_norm,
            n: v[3] * self.n_span() + self.n_min,
            c: v[4] * self.c_max,
            m: v[5] * self.m_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub deltas: Vec<i32>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self::symmetric(2)
    }
}

impl ActionSpace {
    /// `{-k, ..., 0, ..., +k}`.
    pub fn symmetric(k: u32) -> Self {
        let k = k as i32;
        Self {
            deltas: (-k..=k).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn delta(&self, index: usize) -> Option<i32> {
        self.deltas.get(index).copied()
    }

    pub fn index_of(&self, delta: i32) -> Option<usize> {
        self.deltas.iter().position(|&d| d == delta)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut sorted = self.deltas.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let symmetric = sorted.iter().all(|d| sorted.binary_search(&-d).is_ok());
        if sorted.len() != self.deltas.len() || !sorted.contains(&0) || !symmetric {
            return Err(ConfigError::Invalid(
                "actions: deltas must be distinct, contain 0 and be symmetric".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_w: f64,
    pub r_min: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            gamma_w: 0.2,
            r_min: -100.0,
        }
    }
}

impl RewardConfig {
    /// Smallest reward a valid action can earn: `phi = 0`, `n = N`, idle.
    pub fn valid_min(&self, n_min: u32, n_max: u32) -> f64 {
        let span = (n_max - n_min) as f64;
        -self.beta * span * span
    }

    /// Largest reward a valid action can earn.
    pub fn valid_max(&self, c_max: f64, m_max: f64) -> f64 {
        self.alpha + self.gamma_w * (c_max + m_max)
    }

    pub fn validate(&self, sim: &SimConfig) -> Result<(), ConfigError> {
        let weights = [self.alpha, self.beta, self.gamma_w];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ConfigError::Invalid(
                "reward: alpha, beta and gamma_w must be finite and non-negative".into(),
            ));
        }
        let floor = self.valid_min(sim.min_replicas, sim.max_replicas);
        if !(self.r_min < floor) {
            return Err(ConfigError::Invalid(format!(
                "reward: r_min {} must be below the smallest valid reward {floor}",
                self.r_min
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            alpha: self.alpha * k,
            beta: self.beta * k,
            gamma_w: self.gamma_w * k,
            r_min: self.r_min,
        }
    }
}

/// `alpha·phi² − beta·(n − n_min)² + gamma_w·(c + m)` for a valid action,
/// `r_min` otherwise.
pub fn reward_fn(metrics: &WindowMetrics, valid: bool, cfg: &RewardConfig, n_min: u32) -> f64 {
    if !valid {
        return cfg.r_min;
    }
    let excess = metrics.n as f64 - n_min as f64;
    cfg.alpha * metrics.phi * metrics.phi - cfg.beta * excess * excess + cfg.gamma_w * (metrics.c + metrics.m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub episode_windows: usize,
    pub actions: ActionSpace,
    /// Normalization constant for `q`; the trace's 99th percentile if unset.
    pub q_norm: Option<f64>,
    pub size_mix: SizeMix,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_windows: 10,
            actions: ActionSpace::default(),
            q_norm: None,
            size_mix: default_size_mix(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.episode_windows == 0 {
            return Err(ConfigError::Invalid("env: episode_windows must be positive".into()));
        }
        if let Some(q) = self.q_norm {
            if !(q > 0.0) {
                return Err(ConfigError::Invalid("env: q_norm must be positive".into()));
            }
        }
        self.actions.validate()?;
        validate_mix(&self.size_mix).map_err(|e| ConfigError::Invalid(format!("env: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub metrics: WindowMetrics,
    pub valid: bool,
    pub delta: i32,
    /// Step number within the episode, starting at 1.
    pub step: usize,
    /// Trace window that supplied the arrivals.
    pub trace_window: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub obs_vector: [f64; OBS_DIM],
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Minimal interface the learning agents train against.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Starts a new episode; the seed picks the episode's randomness.
    fn reset_episode(&mut self, seed: u64) -> Result<Vec<f64>, EnvError>;
    fn step_action(&mut self, action: usize) -> Result<Transition, EnvError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Window throughput ratio, for environments that have one.
    pub throughput: Option<f64>,
}

pub struct FaasEnv {
    sim_cfg: SimConfig,
    reward: RewardConfig,
    cfg: EnvConfig,
    trace: Arc<Trace>,
    scales: ObsScales,
    sim: Option<ClusterSim>,
    rng: ChaCha8Rng,
    cursor: usize,
    step: usize,
    /// Trace windows an episode may start from, used by [`Environment::reset_episode`].
    cursors: Vec<usize>,
}

impl FaasEnv {
    pub fn new(sim_cfg: SimConfig, reward: RewardConfig, cfg: EnvConfig, trace: Arc<Trace>) -> Result<Self, ConfigError> {
        sim_cfg.validate()?;
        reward.validate(&sim_cfg)?;
        cfg.validate()?;
        if trace.len() < cfg.episode_windows + 1 {
            return Err(ConfigError::Invalid(format!(
                "trace `{}` has {} windows, an episode needs {}",
                trace.name,
                trace.len(),
                cfg.episode_windows + 1
            )));
        }
        let q_norm = cfg.q_norm.unwrap_or_else(|| trace.percentile(99.0) as f64);
        let scales = ObsScales::new(&sim_cfg, q_norm);
        let last = trace.len() - cfg.episode_windows - 1;
        Ok(Self {
            sim_cfg,
            reward,
            cfg,
            trace,
            scales,
            sim: None,
            rng: ChaCha8Rng::seed_from_u64(0),
            cursor: 0,
            step: 0,
            cursors: (0..=last).collect(),
        })
    }

    /// Restricts the episode start windows used by `reset_episode`.
    pub fn set_cursor_range(&mut self, start: usize, end: usize) -> Result<(), ConfigError> {
        let last = self.last_cursor();
        if start > end || end > last {
            return Err(ConfigError::Invalid(format!(
                "cursor range {start}..={end} outside 0..={last}"
            )));
        }
        self.cursors = (start..=end).collect();
        Ok(())
    }

    pub fn last_cursor(&self) -> usize {
        self.trace.len() - self.cfg.episode_windows - 1
    }

    pub fn scales(&self) -> &ObsScales {
        &self.scales
    }

    pub fn sim_config(&self) -> &SimConfig {
        &self.sim_cfg
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn sim(&self) -> Option<&ClusterSim> {
        self.sim.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.episode_windows
    }

    /// Starts an episode whose warm-up window is trace window `cursor`.
    pub fn reset(&mut self, seed: u64, cursor: usize) -> Result<Observation, EnvError> {
        if cursor > self.last_cursor() {
            return Err(ConfigError::Invalid(format!(
                "trace cursor {cursor} leaves fewer than {} windows in `{}`",
                self.cfg.episode_windows + 1,
                self.trace.name
            ))
            .into());
        }
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.rng.set_stream(cursor as u64);
        self.cursor = cursor;
        self.step = 0;
        let mut sim = ClusterSim::new(self.sim_cfg.clone())?;
        let plan = self.plan_for(cursor);
        let metrics = sim.advance_window(&plan);
        self.sim = Some(sim);
        Ok(Observation::from_metrics(&metrics))
    }

    fn plan_for(&mut self, trace_window: usize) -> crate::workload::ArrivalPlan {
        let count = self.trace.counts[trace_window];
        sample_arrivals(count, self.sim_cfg.window_seconds, &self.cfg.size_mix, &mut self.rng)
    }

    pub fn step(&mut self, action_index: usize) -> Result<StepResult, EnvError> {
        if self.sim.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.is_done() {
            return Err(EnvError::EpisodeDone);
        }
        let delta = self.cfg.actions.delta(action_index).ok_or(EnvError::BadAction {
            index: action_index,
            size: self.cfg.actions.len(),
        })?;
        self.step += 1;
        let trace_window = self.cursor + self.step;
        let plan = self.plan_for(trace_window);
        let sim = self.sim.as_mut().expect("checked above");
        let valid = sim.check_scaling(delta).is_ok();
        if valid {
            sim.apply_scaling(delta).expect("validated delta");
        }
        let metrics = sim.advance_window(&plan);
        Ok(self.finish_step(metrics, valid, delta, trace_window))
    }

    /// Steps one window under an external controller. `drive` receives the
    /// simulator between windows and the window's arrivals, must run the
    /// window to completion and return its metrics. The step counts as a
    /// valid action whose delta is the net pool change.
    pub fn step_with<F>(&mut self, drive: F) -> Result<StepResult, EnvError>
    where
        F: FnOnce(&mut ClusterSim, &crate::workload::ArrivalPlan) -> WindowMetrics,
    {
        if self.sim.is_none() {
            return Err(EnvError::NotReset);
        }
        if self.is_done() {
            return Err(EnvError::EpisodeDone);
        }
        self.step += 1;
        let trace_window = self.cursor + self.step;
        let plan = self.plan_for(trace_window);
        let sim = self.sim.as_mut().expect("checked above");
        let before = sim.replica_count() as i32;
        let window = sim.window_index();
        let metrics = drive(sim, &plan);
        assert_eq!(metrics.window_index, window, "controller must run exactly one window");
        let delta = metrics.n as i32 - before;
        Ok(self.finish_step(metrics, true, delta, trace_window))
    }

    fn finish_step(&self, metrics: WindowMetrics, valid: bool, delta: i32, trace_window: usize) -> StepResult {
        let reward = reward_fn(&metrics, valid, &self.reward, self.sim_cfg.min_replicas);
        let observation = Observation::from_metrics(&metrics);
        StepResult {
            obs_vector: self.scales.normalize(&observation),
            observation,
            reward,
            done: self.is_done(),
            info: StepInfo {
                metrics,
                valid,
                delta,
                step: self.step,
                trace_window,
            },
        }
    }
}

/// Mixes an episode seed into a well-spread 64-bit value.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Environment for FaasEnv {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn num_actions(&self) -> usize {
        self.cfg.actions.len()
    }

    fn reset_episode(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        let cursor = self.cursors[(splitmix64(seed) % self.cursors.len() as u64) as usize];
        let obs = self.reset(seed, cursor)?;
        Ok(self.scales.normalize(&obs).to_vec())
    }

    fn step_action(&mut self, action: usize) -> Result<Transition, EnvError> {
        let r = self.step(action)?;
        Ok(Transition {
            obs: r.obs_vector.to_vec(),
            reward: r.reward,
            done: r.done,
            throughput: Some(r.observation.phi),
        })
    }
}

/// Two-state toy task: the observation shows one of two states and one
/// fixed action earns +1 in both, every other action 0.
pub struct ToyBandit {
    pub best_action: usize,
    pub num_actions: usize,
    pub episode_len: usize,
    rng: ChaCha8Rng,
    state: usize,
    t: usize,
}

impl ToyBandit {
    pub fn new(best_action: usize, num_actions: usize) -> Self {
        assert!(best_action < num_actions);
        Self {
            best_action,
            num_actions,
            episode_len: 10,
            rng: ChaCha8Rng::seed_from_u64(0),
            state: 0,
            t: 0,
        }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn observation(state: usize) -> Vec<f64> {
        let mut o = vec![0.0; OBS_DIM];
        o[state] = 1.0;
        o[OBS_DIM - 1] = 0.5;
        o
    }
}

impl Environment for ToyBandit {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn reset_episode(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.state = self.rng.random_range(0..2);
        Ok(Self::observation(self.state))
    }

    fn step_action(&mut self, action: usize) -> Result<Transition, EnvError> {
        if self.t >= self.episode_len {
            return Err(EnvError::EpisodeDone);
        }
        if action >= self.num_actions {
            return Err(EnvError::BadAction {
                index: action,
                size: self.num_actions,
            });
        }
        self.t += 1;
        let reward = if action == self.best_action { 1.0 } else { 0.0 };
        self.state = self.rng.random_range(0..2);
        Ok(Transition {
            obs: Self::observation(self.state),
            reward,
            done: self.t >= self.episode_len,
            throughput: None,
        })
    }
}
