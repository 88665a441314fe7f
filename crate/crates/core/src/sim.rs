//! Discrete-event simulator of one function's replica pool.
//!
//! Time is continuous (seconds, `f64`) and advances from event to event:
//! request arrivals, execution ends, cold-start completions, queue deadlines
//! and metric sample boundaries. Metrics are aggregated per sampling window.
//!
//! Request fate rules:
//! * requests wait in one FIFO queue and are dispatched to the warm,
//!   non-draining replica with the fewest busy slots (ties: lowest id);
//! * a queued request whose deadline (`arrival + timeout`) passes before it
//!   starts times out;
//! * a started request completes if `start + service <= deadline`, otherwise
//!   it occupies its slot until the deadline and then times out.
//!
//! A request's success is attributed to its arrival window, and it is known
//! at dispatch time, so `phi` and `tau` of a window can be reported when the
//! window closes even if the request is still executing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::workload::ArrivalPlan;
use crate::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];
}

/// One value per request size class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerSize<T> {
    pub small: T,
    pub medium: T,
    pub large: T,
}

impl<T: Copy> PerSize<T> {
    pub fn get(&self, size: SizeClass) -> T {
        match size {
            SizeClass::Small => self.small,
            SizeClass::Medium => self.medium,
            SizeClass::Large => self.large,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub window_seconds: f64,
    pub max_replicas: u32,
    pub min_replicas: u32,
    pub cpu_request_millicores: f64,
    pub mem_request_mb: f64,
    pub timeout_seconds: f64,
    pub cold_start_seconds: f64,
    pub concurrency: u32,
    /// Utilization cap `c_max` (CPU), as a multiple of the request.
    pub cpu_cap: f64,
    /// Utilization cap `m_max` (memory), as a multiple of the request.
    pub mem_cap: f64,
    /// CPU sampling period inside a window (HPA query period).
    pub metric_sample_seconds: f64,
    /// `None` means unbounded; requests beyond it are rejected.
    pub queue_capacity: Option<usize>,
    pub service_seconds: PerSize<f64>,
    /// Fraction of the CPU request a running request of each size consumes.
    pub cpu_demand: PerSize<f64>,
    /// CPU overload added per queued-request-second, per window second.
    pub overload_coeff: f64,
    /// CPU utilization of a warm replica with nothing running.
    pub idle_cpu: f64,
    pub base_mem_mb: f64,
    pub request_mem_mb: PerSize<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            window_seconds: 30.0,
            max_replicas: 24,
            min_replicas: 1,
            cpu_request_millicores: 150.0,
            mem_request_mb: 256.0,
            timeout_seconds: 10.0,
            cold_start_seconds: 2.0,
            concurrency: 1,
            cpu_cap: 2.0,
            mem_cap: 2.0,
            metric_sample_seconds: 15.0,
            queue_capacity: None,
            service_seconds: PerSize {
                small: 0.5,
                medium: 3.0,
                large: 8.0,
            },
            cpu_demand: PerSize {
                small: 0.6,
                medium: 0.9,
                large: 1.0,
            },
            overload_coeff: 0.5,
            idle_cpu: 0.05,
            base_mem_mb: 64.0,
            request_mem_mb: PerSize {
                small: 16.0,
                medium: 64.0,
                large: 192.0,
            },
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Invalid(format!("sim: {msg}")));
        if self.min_replicas < 1 {
            return fail("min_replicas must be at least 1");
        }
        if self.min_replicas > self.max_replicas {
            return fail("min_replicas must not exceed max_replicas");
        }
        if !(self.timeout_seconds > 0.0) {
            return fail("timeout_seconds must be positive");
        }
        if !(self.window_seconds > 0.0) {
            return fail("window_seconds must be positive");
        }
        if !(self.cpu_cap >= 1.0) || !(self.mem_cap >= 1.0) {
            return fail("utilization caps must be at least 1.0");
        }
        if self.concurrency < 1 {
            return fail("concurrency must be at least 1");
        }
        if !(self.cold_start_seconds >= 0.0) {
            return fail("cold_start_seconds must be non-negative");
        }
        if !(self.metric_sample_seconds > 0.0) || self.metric_sample_seconds > self.window_seconds {
            return fail("metric_sample_seconds must be in (0, window_seconds]");
        }
        if !(self.mem_request_mb > 0.0) || !(self.cpu_request_millicores > 0.0) {
            return fail("resource requests must be positive");
        }
        for s in SizeClass::ALL {
            if !(self.service_seconds.get(s) > 0.0) {
                return fail("service times must be positive");
            }
            if !(self.cpu_demand.get(s) >= 0.0) || !(self.request_mem_mb.get(s) >= 0.0) {
                return fail("per-size demand must be non-negative");
            }
        }
        if !(self.overload_coeff >= 0.0) || !(self.idle_cpu >= 0.0) || !(self.base_mem_mb >= 0.0) {
            return fail("utilization coefficients must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("scaling by {delta} from {current} replicas leaves [{min}, {max}]")]
    ScalingOutOfBounds { current: u32, delta: i32, min: u32, max: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    TimedOut,
    Rejected,
    InFlight,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub id: u64,
    /// Absolute arrival time.
    pub arrival: f64,
    pub size_class: SizeClass,
    pub service_time: f64,
    pub started: Option<f64>,
    pub outcome: Outcome,
    pub arrival_window: u64,
}

impl Request {
    pub fn deadline(&self, timeout: f64) -> f64 {
        self.arrival + timeout
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplicaPhase {
    ColdStarting,
    Warm,
    /// Scaled away while busy: finishes its work, takes no new requests.
    Draining,
}

/// Time-integrated resource usage of one replica over an interval.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UsageAccum {
    pub warm_time: f64,
    pub idle_time: f64,
    /// Busy-slot-seconds weighted by per-size CPU demand.
    pub demand_seconds: f64,
    /// Queued-request-seconds attributed to this replica.
    pub queue_seconds: f64,
    pub peak_mem_mb: f64,
}

impl UsageAccum {
    /// Mean CPU utilization over the warm part of the interval.
    pub fn cpu(&self, cfg: &SimConfig) -> Option<f64> {
        (self.warm_time > 0.0).then(|| {
            let raw = (cfg.idle_cpu * self.idle_time + self.demand_seconds + cfg.overload_coeff * self.queue_seconds)
                / self.warm_time;
            raw.min(cfg.cpu_cap)
        })
    }

    pub fn mem(&self, cfg: &SimConfig) -> Option<f64> {
        (self.warm_time > 0.0).then(|| ((cfg.base_mem_mb + self.peak_mem_mb) / cfg.mem_request_mb).min(cfg.mem_cap))
    }
}

#[derive(Clone, Debug)]
struct Running {
    request: Request,
    end: f64,
    completes: bool,
}

#[derive(Clone, Debug)]
pub struct Replica {
    pub id: u64,
    pub phase: ReplicaPhase,
    pub ready_at: f64,
    running: Vec<Running>,
    window_usage: UsageAccum,
    sample_usage: UsageAccum,
}

impl Replica {
    pub fn busy_slots(&self) -> usize {
        self.running.len()
    }

    fn inflight_mem(&self, cfg: &SimConfig) -> f64 {
        self.running.iter().map(|r| cfg.request_mem_mb.get(r.request.size_class)).sum()
    }
}

/// Aggregates of one closed sampling window.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub window_index: u64,
    /// Mean response time (arrival to finish) of this window's successful requests.
    pub tau: f64,
    /// Successful fraction of this window's arrivals; 1.0 for an empty window.
    pub phi: f64,
    pub q: u32,
    /// Replicas (warm or cold-starting, not draining) at window close.
    pub n: u32,
    pub c: f64,
    pub m: f64,
    /// Requests of this window that are known to succeed.
    pub successes: u32,
    /// Outcomes resolved during this window, whatever window they arrived in.
    pub completed: u32,
    pub timed_out: u32,
    pub rejected: u32,
    pub inflight_start: u32,
    pub inflight_end: u32,
    pub warm_replicas: u32,
    /// CPU utilization of each `metric_sample_seconds` slice of the window.
    pub cpu_samples: Vec<f64>,
    /// Completion times relative to the window start.
    pub completion_offsets: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
struct Counters {
    arrived: u32,
    successes: u32,
    success_response_sum: f64,
    completed: u32,
    timed_out: u32,
    rejected: u32,
    inflight_start: u32,
}

#[derive(Clone, Debug)]
pub struct ClusterSim {
    cfg: SimConfig,
    now: f64,
    window_index: u64,
    window_open: bool,
    replicas: Vec<Replica>,
    next_replica_id: u64,
    next_request_id: u64,
    queue: VecDeque<Request>,
    pending: VecDeque<Request>,
    counters: Counters,
    completion_times: Vec<f64>,
    cpu_samples: Vec<f64>,
    sample_index: u32,
    retired_window: Vec<UsageAccum>,
    retired_sample: Vec<UsageAccum>,
}

impl ClusterSim {
    /// A cluster with `min_replicas` warm replicas at time 0.
    pub fn new(cfg: SimConfig) -> Result<Self, ConfigError> {
        let n = cfg.min_replicas;
        Self::with_warm_replicas(cfg, n)
    }

    pub fn with_warm_replicas(cfg: SimConfig, warm: u32) -> Result<Self, ConfigError> {
        cfg.validate()?;
        if warm < cfg.min_replicas || warm > cfg.max_replicas {
            return Err(ConfigError::Invalid(format!(
                "sim: initial replicas {warm} outside [{}, {}]",
                cfg.min_replicas, cfg.max_replicas
            )));
        }
        let mut sim = Self {
            cfg,
            now: 0.0,
            window_index: 0,
            window_open: false,
            replicas: Vec::new(),
            next_replica_id: 0,
            next_request_id: 0,
            queue: VecDeque::new(),
            pending: VecDeque::new(),
            counters: Counters::default(),
            completion_times: Vec::new(),
            cpu_samples: Vec::new(),
            sample_index: 0,
            retired_window: Vec::new(),
            retired_sample: Vec::new(),
        };
        for _ in 0..warm {
            sim.spawn_replica(ReplicaPhase::Warm, 0.0);
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Index of the window that is open, or that opens next.
    pub fn window_index(&self) -> u64 {
        self.window_index
    }

    pub fn window_start(&self) -> f64 {
        self.window_index as f64 * self.cfg.window_seconds
    }

    pub fn window_end(&self) -> f64 {
        (self.window_index + 1) as f64 * self.cfg.window_seconds
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    /// Replicas that count towards the pool size: warm or cold-starting.
    pub fn replica_count(&self) -> u32 {
        self.replicas.iter().filter(|r| r.phase != ReplicaPhase::Draining).count() as u32
    }

    pub fn warm_count(&self) -> u32 {
        self.count_phase(ReplicaPhase::Warm)
    }

    pub fn cold_count(&self) -> u32 {
        self.count_phase(ReplicaPhase::ColdStarting)
    }

    fn count_phase(&self, phase: ReplicaPhase) -> u32 {
        self.replicas.iter().filter(|r| r.phase == phase).count() as u32
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Requests queued or executing.
    pub fn inflight(&self) -> u32 {
        (self.queue.len() + self.replicas.iter().map(|r| r.running.len()).sum::<usize>()) as u32
    }

    /// Completion times (absolute) recorded so far in the open window.
    pub fn completion_times(&self) -> &[f64] {
        &self.completion_times
    }

    /// CPU utilization of the most recently closed sample slice.
    pub fn last_cpu_sample(&self) -> Option<f64> {
        self.cpu_samples.last().copied()
    }

    /// Checks that `delta` keeps the pool inside `[min_replicas, max_replicas]`.
    pub fn check_scaling(&self, delta: i32) -> Result<(), SimError> {
        let current = self.replica_count();
        let target = current as i64 + delta as i64;
        if target < self.cfg.min_replicas as i64 || target > self.cfg.max_replicas as i64 {
            return Err(SimError::ScalingOutOfBounds {
                current,
                delta,
                min: self.cfg.min_replicas,
                max: self.cfg.max_replicas,
            });
        }
        Ok(())
    }

    /// Adds `delta` cold-starting replicas, or removes `-delta` replicas
    /// (cold-starting first, then idle, then busy ones which drain).
    pub fn apply_scaling(&mut self, delta: i32) -> Result<(), SimError> {
        self.check_scaling(delta)?;
        if delta > 0 {
            let ready_at = self.now + self.cfg.cold_start_seconds;
            for _ in 0..delta {
                self.spawn_replica(ReplicaPhase::ColdStarting, ready_at);
            }
            // A zero cold start makes the new replicas usable right away.
            self.process_instant();
        } else {
            for _ in 0..(-delta) {
                self.remove_one();
            }
        }
        Ok(())
    }

    fn spawn_replica(&mut self, phase: ReplicaPhase, ready_at: f64) {
        self.replicas.push(Replica {
            id: self.next_replica_id,
            phase,
            ready_at,
            running: Vec::new(),
            window_usage: UsageAccum::default(),
            sample_usage: UsageAccum::default(),
        });
        self.next_replica_id += 1;
    }

    fn remove_one(&mut self) {
        let active = |r: &Replica| r.phase != ReplicaPhase::Draining;
        let pick = self
            .replicas
            .iter()
            .enumerate()
            .filter(|(_, r)| active(r) && r.phase == ReplicaPhase::ColdStarting)
            .max_by(|a, b| a.1.ready_at.total_cmp(&b.1.ready_at).then(a.1.id.cmp(&b.1.id)))
            .or_else(|| {
                self.replicas
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| active(r) && r.running.is_empty())
                    .max_by_key(|(_, r)| r.id)
            })
            .map(|(i, _)| i);
        match pick {
            Some(i) => {
                let r = self.replicas.remove(i);
                self.retire(&r);
            }
            None => {
                let i = self
                    .replicas
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| active(r))
                    .min_by(|a, b| a.1.running.len().cmp(&b.1.running.len()).then(b.1.id.cmp(&a.1.id)))
                    .map(|(i, _)| i)
                    .expect("scale-down checked against min_replicas >= 1");
                self.replicas[i].phase = ReplicaPhase::Draining;
            }
        }
    }

    fn retire(&mut self, r: &Replica) {
        if r.window_usage.warm_time > 0.0 {
            self.retired_window.push(r.window_usage);
        }
        if r.sample_usage.warm_time > 0.0 {
            self.retired_sample.push(r.sample_usage);
        }
    }

    /// Opens the next window with the given arrivals (offsets relative to the
    /// window start, sorted, inside `[0, window_seconds)`).
    pub fn begin_window(&mut self, plan: &ArrivalPlan) {
        assert!(!self.window_open, "begin_window called on an open window");
        let start = self.window_start();
        assert!(
            (self.now - start).abs() < 1e-9,
            "simulator clock {} is not at window start {start}",
            self.now
        );
        self.now = start;
        self.window_open = true;
        self.counters = Counters {
            inflight_start: self.inflight(),
            ..Counters::default()
        };
        self.completion_times.clear();
        self.cpu_samples.clear();
        self.sample_index = 0;
        self.retired_window.clear();
        self.retired_sample.clear();
        for r in &mut self.replicas {
            r.window_usage = UsageAccum::default();
            r.sample_usage = UsageAccum::default();
        }
        self.refresh_peak_mem();

        let mut prev = 0.0;
        self.pending.clear();
        for (&offset, &size) in plan.timestamps.iter().zip(&plan.size_classes) {
            assert!(
                offset >= prev && offset >= 0.0 && offset < self.cfg.window_seconds,
                "arrival offsets must be sorted and inside the window"
            );
            prev = offset;
            self.pending.push_back(Request {
                id: self.next_request_id,
                arrival: start + offset,
                size_class: size,
                service_time: self.cfg.service_seconds.get(size),
                started: None,
                outcome: Outcome::InFlight,
                arrival_window: self.window_index,
            });
            self.next_request_id += 1;
        }
    }

    fn samples_per_window(&self) -> u32 {
        (self.cfg.window_seconds / self.cfg.metric_sample_seconds - 1e-9).ceil() as u32
    }

    fn next_sample_at(&self) -> f64 {
        let t = self.window_start() + (self.sample_index + 1) as f64 * self.cfg.metric_sample_seconds;
        t.min(self.window_end())
    }

    /// Runs the event loop up to `target` (clamped to the window end).
    pub fn run_until(&mut self, target: f64) {
        assert!(self.window_open, "run_until needs an open window");
        let target = target.min(self.window_end());
        loop {
            self.process_instant();
            if self.sample_index < self.samples_per_window() && self.now >= self.next_sample_at() {
                self.close_sample();
            }
            if self.now >= target {
                break;
            }
            let next = self.next_event_after_now().min(target).min(self.next_sample_at());
            self.integrate(next - self.now);
            self.now = next;
        }
    }

    /// Runs to the window end and returns the window's metrics.
    pub fn finish_window(&mut self) -> WindowMetrics {
        let end = self.window_end();
        self.run_until(end);
        let c = &self.counters;
        let metrics = WindowMetrics {
            window_index: self.window_index,
            tau: if c.successes == 0 {
                0.0
            } else {
                c.success_response_sum / c.successes as f64
            },
            phi: if c.arrived == 0 {
                1.0
            } else {
                c.successes as f64 / c.arrived as f64
            },
            q: c.arrived,
            n: self.replica_count(),
            c: self.mean_usage(|u, cfg| u.cpu(cfg), false),
            m: self.mean_usage(|u, cfg| u.mem(cfg), false),
            successes: c.successes,
            completed: c.completed,
            timed_out: c.timed_out,
            rejected: c.rejected,
            inflight_start: c.inflight_start,
            inflight_end: self.inflight(),
            warm_replicas: self.warm_count(),
            cpu_samples: self.cpu_samples.clone(),
            completion_offsets: self.completion_times.iter().map(|t| t - self.window_start()).collect(),
        };
        self.window_open = false;
        self.window_index += 1;
        self.now = self.window_start();
        metrics
    }

    pub fn advance_window(&mut self, plan: &ArrivalPlan) -> WindowMetrics {
        self.begin_window(plan);
        self.finish_window()
    }

    fn mean_usage(&self, f: impl Fn(&UsageAccum, &SimConfig) -> Option<f64>, sample: bool) -> f64 {
        let live = self
            .replicas
            .iter()
            .map(|r| if sample { &r.sample_usage } else { &r.window_usage });
        let retired = if sample { &self.retired_sample } else { &self.retired_window };
        let vals: Vec<f64> = live.chain(retired.iter()).filter_map(|u| f(u, &self.cfg)).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    fn close_sample(&mut self) {
        let cpu = self.mean_usage(|u, cfg| u.cpu(cfg), true);
        self.cpu_samples.push(cpu);
        self.sample_index += 1;
        self.retired_sample.clear();
        for r in &mut self.replicas {
            r.sample_usage = UsageAccum::default();
            r.sample_usage.peak_mem_mb = r.inflight_mem(&self.cfg);
        }
    }

    fn next_event_after_now(&self) -> f64 {
        let mut t = f64::INFINITY;
        if let Some(r) = self.pending.front() {
            t = t.min(r.arrival);
        }
        if let Some(r) = self.queue.front() {
            t = t.min(r.deadline(self.cfg.timeout_seconds));
        }
        for rep in &self.replicas {
            if rep.phase == ReplicaPhase::ColdStarting {
                t = t.min(rep.ready_at);
            }
            for run in &rep.running {
                t = t.min(run.end);
            }
        }
        t
    }

    fn integrate(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let accepting = self.count_phase(ReplicaPhase::Warm);
        let queue_share = if accepting > 0 {
            self.queue.len() as f64 * dt / accepting as f64
        } else {
            0.0
        };
        let cfg = &self.cfg;
        for rep in &mut self.replicas {
            if rep.phase == ReplicaPhase::ColdStarting {
                continue;
            }
            let demand: f64 = rep.running.iter().map(|r| cfg.cpu_demand.get(r.request.size_class)).sum();
            let queued = if rep.phase == ReplicaPhase::Warm { queue_share } else { 0.0 };
            for u in [&mut rep.window_usage, &mut rep.sample_usage] {
                u.warm_time += dt;
                if rep.running.is_empty() {
                    u.idle_time += dt;
                }
                u.demand_seconds += demand * dt;
                u.queue_seconds += queued;
            }
        }
    }

    fn refresh_peak_mem(&mut self) {
        let cfg = &self.cfg;
        for rep in &mut self.replicas {
            let mem = rep.inflight_mem(cfg);
            rep.window_usage.peak_mem_mb = rep.window_usage.peak_mem_mb.max(mem);
            rep.sample_usage.peak_mem_mb = rep.sample_usage.peak_mem_mb.max(mem);
        }
    }

    /// Resolves everything due at the current instant.
    fn process_instant(&mut self) {
        let now = self.now;

        // Executions ending now.
        let mut finished = Vec::new();
        for rep in &mut self.replicas {
            rep.running.retain(|run| {
                if run.end <= now {
                    finished.push(run.clone());
                    false
                } else {
                    true
                }
            });
        }
        for run in finished {
            if run.completes {
                self.counters.completed += 1;
                self.completion_times.push(run.end);
            } else {
                self.counters.timed_out += 1;
            }
        }

        // Cold starts finishing.
        for rep in &mut self.replicas {
            if rep.phase == ReplicaPhase::ColdStarting && rep.ready_at <= now {
                rep.phase = ReplicaPhase::Warm;
            }
        }

        // Drained replicas vanish.
        let mut i = 0;
        while i < self.replicas.len() {
            if self.replicas[i].phase == ReplicaPhase::Draining && self.replicas[i].running.is_empty() {
                let r = self.replicas.remove(i);
                self.retire(&r);
            } else {
                i += 1;
            }
        }

        // Arrivals.
        while self.pending.front().is_some_and(|r| r.arrival <= now) {
            let r = self.pending.pop_front().expect("front checked");
            self.counters.arrived += 1;
            self.queue.push_back(r);
        }

        // Queue deadlines; the queue is FIFO so deadlines are sorted.
        let timeout = self.cfg.timeout_seconds;
        while self.queue.front().is_some_and(|r| r.deadline(timeout) <= now) {
            self.queue.pop_front();
            self.counters.timed_out += 1;
        }

        self.dispatch();

        if let Some(cap) = self.cfg.queue_capacity {
            while self.queue.len() > cap {
                self.queue.pop_back();
                self.counters.rejected += 1;
            }
        }
    }

    fn dispatch(&mut self) {
        let cap = self.cfg.concurrency as usize;
        let timeout = self.cfg.timeout_seconds;
        let mut dispatched = false;
        while !self.queue.is_empty() {
            let target = self
                .replicas
                .iter()
                .enumerate()
                .filter(|(_, r)| r.phase == ReplicaPhase::Warm && r.running.len() < cap)
                .min_by(|a, b| a.1.running.len().cmp(&b.1.running.len()).then(a.1.id.cmp(&b.1.id)))
                .map(|(i, _)| i);
            let Some(idx) = target else { break };
            let mut req = self.queue.pop_front().expect("non-empty");
            let start = self.now;
            let deadline = req.deadline(timeout);
            let finish = start + req.service_time;
            let completes = finish <= deadline;
            req.started = Some(start);
            if completes && req.arrival_window == self.window_index {
                self.counters.successes += 1;
                self.counters.success_response_sum += finish - req.arrival;
            }
            self.replicas[idx].running.push(Running {
                request: req,
                end: finish.min(deadline),
                completes,
            });
            dispatched = true;
        }
        if dispatched {
            self.refresh_peak_mem();
        }
    }
}
