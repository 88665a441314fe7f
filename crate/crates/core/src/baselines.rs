//! Threshold autoscalers: a CPU-target controller in the style of the
//! Kubernetes horizontal pod autoscaler and a request-rate alert controller
//! in the style of OpenFaaS.
//!
//! Both run inside a window at their own decision period, see [`run_window`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{EnvError, FaasEnv, StepResult};
use crate::sim::{ClusterSim, SimConfig, WindowMetrics};
use crate::workload::ArrivalPlan;
use crate::ConfigError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpaConfig {
    /// Target CPU utilization as a fraction of the request.
    pub target_cpu: f64,
    pub query_period: f64,
    pub downscale_stabilization: f64,
    /// Relative deviation from the target that causes no change.
    pub tolerance: f64,
    pub min_replicas: u32,
    pub max_replicas: u32,
}

impl Default for HpaConfig {
    fn default() -> Self {
        Self {
            target_cpu: 0.75,
            query_period: 15.0,
            downscale_stabilization: 300.0,
            tolerance: 0.1,
            min_replicas: 1,
            max_replicas: 24,
        }
    }
}

impl HpaConfig {
    pub fn validate(&self, sim: &SimConfig) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(format!("hpa: {m}")));
        if !(self.target_cpu > 0.0 && self.target_cpu <= sim.cpu_cap) {
            return bad(format!("target_cpu {} must lie in (0, {}]", self.target_cpu, sim.cpu_cap));
        }
        if !(self.query_period > 0.0 && self.query_period <= sim.window_seconds) {
            return bad(format!("query_period must lie in (0, {}]", sim.window_seconds));
        }
        if !(self.downscale_stabilization >= 0.0) || !(self.tolerance >= 0.0) {
            return bad("stabilization and tolerance must be non-negative".into());
        }
        check_bounds(self.min_replicas, self.max_replicas, sim).or_else(bad)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpsConfig {
    /// Processed requests per second that raise the alert.
    pub rps_threshold: f64,
    /// Seconds the rate must stay above the threshold before the alert fires.
    pub sustain: f64,
    /// Replicas added per alert, as a fraction of `max_replicas`.
    pub scale_step_fraction: f64,
    /// Seconds without any second above the threshold before scaling to min.
    pub quiet_period: f64,
    pub min_replicas: u32,
    pub max_replicas: u32,
}

impl Default for RpsConfig {
    fn default() -> Self {
        Self {
            rps_threshold: 5.0,
            sustain: 10.0,
            scale_step_fraction: 0.2,
            quiet_period: 300.0,
            min_replicas: 1,
            max_replicas: 24,
        }
    }
}

impl RpsConfig {
    pub fn validate(&self, sim: &SimConfig) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(format!("rps: {m}")));
        if !(self.rps_threshold > 0.0) {
            return bad("rps_threshold must be positive".into());
        }
        if !(self.scale_step_fraction > 0.0 && self.scale_step_fraction <= 1.0) {
            return bad("scale_step_fraction must lie in (0, 1]".into());
        }
        if !(self.sustain >= 1.0) || !(self.quiet_period >= 1.0) {
            return bad("sustain and quiet_period must be at least one second".into());
        }
        check_bounds(self.min_replicas, self.max_replicas, sim).or_else(bad)
    }

    /// Replicas added when the alert fires.
    pub fn step(&self) -> u32 {
        (self.scale_step_fraction * self.max_replicas as f64).ceil() as u32
    }
}

fn check_bounds(min: u32, max: u32, sim: &SimConfig) -> Result<(), String> {
    if min < sim.min_replicas || max > sim.max_replicas || min > max {
        return Err(format!(
            "replica bounds [{min}, {max}] must lie inside the cluster's [{}, {}]",
            sim.min_replicas, sim.max_replicas
        ));
    }
    Ok(())
}

/// Desired replicas for a measured CPU utilization. Inside the tolerance
/// band around the target the current count is kept.
pub fn hpa_desired(current: u32, measured_cpu: f64, cfg: &HpaConfig) -> u32 {
    assert!(measured_cpu >= 0.0, "measured cpu must be non-negative");
    let ratio = measured_cpu / cfg.target_cpu;
    let desired = if (ratio - 1.0).abs() <= cfg.tolerance {
        current
    } else {
        (current as f64 * ratio).ceil() as u32
    };
    desired.clamp(cfg.min_replicas, cfg.max_replicas)
}

/// What a controller sees at a decision point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tick {
    pub now: f64,
    /// Replicas counted towards the pool (warm and cold-starting).
    pub replicas: u32,
    /// Mean CPU utilization over the most recent sample slice.
    pub cpu: Option<f64>,
    /// Requests completed in `(now - period, now]`.
    pub processed: u32,
}

pub trait Autoscaler {
    fn name(&self) -> &'static str;
    /// Seconds between decisions.
    fn period(&self) -> f64;
    fn reset(&mut self);
    /// Target replica count after this tick.
    fn decide(&mut self, tick: &Tick) -> u32;
}

#[derive(Clone, Debug)]
pub struct HpaController {
    pub cfg: HpaConfig,
    /// `(time, desired)` recommendations inside the stabilization window.
    history: VecDeque<(f64, u32)>,
}

impl HpaController {
    pub fn new(cfg: HpaConfig) -> Self {
        Self {
            cfg,
            history: VecDeque::new(),
        }
    }

    /// Scale-ups apply at once; a scale-down goes only as low as the highest
    /// recommendation over the trailing stabilization window.
    pub fn recommend(&mut self, now: f64, current: u32, cpu: f64) -> u32 {
        let desired = hpa_desired(current, cpu, &self.cfg);
        self.history.push_back((now, desired));
        while let Some(&(t, _)) = self.history.front() {
            if t < now - self.cfg.downscale_stabilization - 1e-9 {
                self.history.pop_front();
            } else {
                break;
            }
        }
        if desired >= current {
            return desired;
        }
        let stabilized = self.history.iter().map(|&(_, d)| d).max().unwrap_or(desired);
        stabilized.min(current).clamp(self.cfg.min_replicas, self.cfg.max_replicas)
    }
}

impl Autoscaler for HpaController {
    fn name(&self) -> &'static str {
        "hpa"
    }

    fn period(&self) -> f64 {
        self.cfg.query_period
    }

    fn reset(&mut self) {
        self.history.clear();
    }

    fn decide(&mut self, tick: &Tick) -> u32 {
        match tick.cpu {
            Some(cpu) => self.recommend(tick.now, tick.replicas, cpu),
            None => tick.replicas.clamp(self.cfg.min_replicas, self.cfg.max_replicas),
        }
    }
}

/// Alert state machine over per-second processed counts.
#[derive(Clone, Debug)]
pub struct RpsController {
    pub cfg: RpsConfig,
    /// Consecutive seconds above the threshold.
    above_run: u32,
    firing: bool,
    /// Seconds since the rate was last above the threshold.
    quiet_run: u32,
    alerts: u32,
}

impl RpsController {
    pub fn new(cfg: RpsConfig) -> Self {
        Self {
            cfg,
            above_run: 0,
            firing: false,
            quiet_run: 0,
            alerts: 0,
        }
    }

    pub fn alerts(&self) -> u32 {
        self.alerts
    }

    pub fn is_firing(&self) -> bool {
        self.firing
    }

    /// Feeds one second's processed count and returns the target replicas.
    pub fn observe_second(&mut self, processed: u32, current: u32) -> u32 {
        let (min, max) = (self.cfg.min_replicas, self.cfg.max_replicas);
        let current = current.clamp(min, max);
        if processed as f64 > self.cfg.rps_threshold {
            self.above_run += 1;
            self.quiet_run = 0;
        } else {
            self.above_run = 0;
            self.firing = false;
            self.quiet_run += 1;
        }
        if !self.firing && self.above_run as f64 >= self.cfg.sustain {
            self.firing = true;
            self.alerts += 1;
            return (current + self.cfg.step()).min(max);
        }
        if self.quiet_run as f64 >= self.cfg.quiet_period {
            return min;
        }
        current
    }
}

impl Autoscaler for RpsController {
    fn name(&self) -> &'static str {
        "rps"
    }

    fn period(&self) -> f64 {
        1.0
    }

    fn reset(&mut self) {
        *self = Self::new(self.cfg.clone());
    }

    fn decide(&mut self, tick: &Tick) -> u32 {
        self.observe_second(tick.processed, tick.replicas)
    }
}

fn tick_at(sim: &ClusterSim, period: f64) -> Tick {
    let now = sim.now();
    let processed = sim
        .completion_times()
        .iter()
        .filter(|&&t| t > now - period + 1e-9 && t <= now + 1e-9)
        .count() as u32;
    Tick {
        now,
        replicas: sim.replica_count(),
        cpu: sim.last_cpu_sample(),
        processed,
    }
}

fn apply_target(sim: &mut ClusterSim, target: u32) {
    let cfg = sim.config();
    let target = target.clamp(cfg.min_replicas, cfg.max_replicas);
    let delta = target as i32 - sim.replica_count() as i32;
    if delta != 0 {
        sim.apply_scaling(delta).expect("target clamped to the cluster bounds");
    }
}

/// Runs one window under `scaler`. The controller decides at the window
/// start (seeing the previous window's last measurements) and then every
/// `period` seconds inside the window.
pub fn run_window(sim: &mut ClusterSim, plan: &ArrivalPlan, scaler: &mut dyn Autoscaler) -> WindowMetrics {
    let period = scaler.period();
    let target = scaler.decide(&tick_at(sim, period));
    apply_target(sim, target);
    sim.begin_window(plan);
    let start = sim.window_start();
    let end = sim.window_end();
    let mut k = 1;
    loop {
        let t = start + k as f64 * period;
        if t >= end - 1e-9 {
            break;
        }
        sim.run_until(t);
        let target = scaler.decide(&tick_at(sim, period));
        apply_target(sim, target);
        k += 1;
    }
    sim.finish_window()
}

/// Plays one evaluation episode of `env` (already reset) under `scaler`.
pub fn run_episode(env: &mut FaasEnv, scaler: &mut dyn Autoscaler) -> Result<Vec<StepResult>, EnvError> {
    scaler.reset();
    let mut out = Vec::new();
    while !env.is_done() {
        out.push(env.step_with(|sim, plan| run_window(sim, plan, scaler))?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Hpa,
    Rps,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 2] = [BaselineKind::Hpa, BaselineKind::Rps];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Hpa => "hpa",
            BaselineKind::Rps => "rps",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn build(self, hpa: &HpaConfig, rps: &RpsConfig) -> Box<dyn Autoscaler + Send> {
        match self {
            BaselineKind::Hpa => Box::new(HpaController::new(hpa.clone())),
            BaselineKind::Rps => Box::new(RpsController::new(rps.clone())),
        }
    }
}
