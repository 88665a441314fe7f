use faas_lab_core::baselines::*;
use faas_lab_core::sim::{ClusterSim, SimConfig};
use faas_lab_core::workload::{default_size_mix, sample_arrivals, synth_trace, Pattern};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Wraps a controller and records every decision.
struct Recorder<'a> {
    inner: &'a mut dyn Autoscaler,
    log: Vec<(Tick, u32)>,
}

impl Autoscaler for Recorder<'_> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn period(&self) -> f64 {
        self.inner.period()
    }
    fn reset(&mut self) {
        self.inner.reset()
    }
    fn decide(&mut self, tick: &Tick) -> u32 {
        let t = self.inner.decide(tick);
        self.log.push((*tick, t));
        t
    }
}

/// Runs `counts` windows back to back on one cluster and returns the
/// decision log and the pool size at the end of each window.
fn drive(scaler: &mut dyn Autoscaler, counts: &[u32], seed: u64) -> (Vec<(Tick, u32)>, Vec<u32>) {
    let mut sim = ClusterSim::new(SimConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rec = Recorder { inner: scaler, log: Vec::new() };
    let mut sizes = Vec::new();
    for &q in counts {
        let plan = sample_arrivals(q, 30.0, &default_size_mix(), &mut rng);
        sizes.push(run_window(&mut sim, &plan, &mut rec).n);
    }
    (rec.log, sizes)
}

fn oracle_desired(current: u32, cpu: f64, target: f64, tol: f64, lo: u32, hi: u32) -> u32 {
    let raw = if (cpu - target).abs() <= tol * target {
        current as f64
    } else {
        (current as f64 * cpu / target).ceil()
    };
    raw.max(lo as f64).min(hi as f64) as u32
}

#[test]
fn desired_matches_closed_form_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = HpaConfig::default();
    for _ in 0..1000 {
        let current = rng.random_range(1..=24);
        let cpu = rng.random_range(0.0..2.0);
        assert_eq!(
            hpa_desired(current, cpu, &cfg),
            oracle_desired(current, cpu, 0.75, 0.1, 1, 24),
            "current {current} cpu {cpu}"
        );
    }
}

#[test]
fn rps_starves_on_default_workload() {
    let trace = synth_trace(Pattern::DiurnalSine, 240, 12, 3, 240);
    let mut rps = RpsController::new(RpsConfig::default());
    let (log, sizes) = drive(&mut rps, &trace.counts, 11);
    assert!(sizes.iter().all(|&n| n == 1));
    assert!(log.iter().all(|(tick, target)| tick.replicas == 1 && *target == 1));
    assert!(log.iter().all(|(tick, _)| tick.processed <= 5));
    assert_eq!(rps.alerts(), 0);
}

#[test]
fn rps_scales_when_processing_is_fast() {
    // Short jobs and wide replicas push the processed rate above 5/s.
    let sim_cfg = SimConfig {
        concurrency: 8,
        ..SimConfig::default()
    };
    let mut sim = ClusterSim::new(sim_cfg).unwrap();
    let mut rps = RpsController::new(RpsConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mix = faas_lab_core::sim::PerSize { small: 1.0, medium: 0.0, large: 0.0 };
    for _ in 0..4 {
        let plan = sample_arrivals(300, 30.0, &mix, &mut rng);
        run_window(&mut sim, &plan, &mut rps);
    }
    assert!(rps.alerts() >= 1);
    assert!(sim.replica_count() >= 6);
}

#[test]
fn rps_decisions_are_a_function_of_the_stream() {
    let trace = synth_trace(Pattern::Bursty, 60, 40, 9, 240);
    let mut a = RpsController::new(RpsConfig::default());
    let mut b = RpsController::new(RpsConfig::default());
    let (la, _) = drive(&mut a, &trace.counts, 4);
    // Replaying the recorded stream reproduces every decision.
    for (tick, target) in &la {
        assert_eq!(b.observe_second(tick.processed, tick.replicas), *target);
    }
}

#[test]
fn hpa_upscales_within_one_period_and_downscales_slowly() {
    let hpa_cfg = HpaConfig::default();
    let mut hpa = HpaController::new(hpa_cfg.clone());
    // Idle, then heavy load, then idle again.
    let mut counts = vec![0; 4];
    counts.extend(vec![40; 6]);
    counts.extend(vec![0; 20]);
    let (log, _) = drive(&mut hpa, &counts, 8);

    let crossing = log
        .iter()
        .position(|(t, _)| t.cpu.is_some_and(|c| c > hpa_cfg.target_cpu * (1.0 + hpa_cfg.tolerance)))
        .expect("load crosses the target");
    let (tick, target) = log[crossing];
    assert!(target > tick.replicas, "upscale at the crossing measurement");
    if crossing + 1 < log.len() {
        assert_eq!(log[crossing + 1].0.replicas, target);
    }

    // After the last upscale, no decrease before the stabilization window.
    let last_up = log.iter().rposition(|(t, target)| *target > t.replicas).unwrap();
    let t_up = log[last_up].0.now;
    for (t, target) in &log[last_up + 1..] {
        if *target < t.replicas {
            assert!(t.now - t_up >= hpa_cfg.downscale_stabilization - 1e-9, "downscale after {}s", t.now - t_up);
        }
    }
    // Long idle ends at the minimum.
    assert_eq!(log.last().unwrap().0.replicas, hpa_cfg.min_replicas);
}

#[test]
fn hpa_alternating_load_is_asymmetric() {
    let mut hpa = HpaController::new(HpaConfig::default());
    let counts: Vec<u32> = (0..20).map(|i| if i % 2 == 0 { 30 } else { 0 }).collect();
    let (log, _) = drive(&mut hpa, &counts, 3);
    let ups: Vec<f64> = log.iter().filter(|(t, x)| *x > t.replicas).map(|(t, _)| t.now).collect();
    let downs: Vec<f64> = log.iter().filter(|(t, x)| *x < t.replicas).map(|(t, _)| t.now).collect();
    // Up within the first loaded window, down only after a full
    // stabilization window of alternating load.
    assert!(!ups.is_empty() && ups[0] <= 30.0, "{ups:?}");
    let last_up = *ups.last().unwrap();
    assert!(downs.iter().all(|&d| d - last_up >= 300.0), "{ups:?} {downs:?}");
    let peak = log.iter().map(|(_, x)| *x).max().unwrap();
    let end = log.last().unwrap().1;
    assert!(end > 1 && peak - end <= 2, "peak {peak}, end {end}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn controllers_stay_in_bounds(seed in any::<u64>(), scale in 1u32..60) {
        let trace = synth_trace(Pattern::Bursty, 30, scale, seed, 240);
        let hpa_cfg = HpaConfig { min_replicas: 2, max_replicas: 10, ..HpaConfig::default() };
        let rps_cfg = RpsConfig { min_replicas: 1, max_replicas: 7, ..RpsConfig::default() };
        let mut hpa = HpaController::new(hpa_cfg);
        let mut rps = RpsController::new(rps_cfg);
        let (hlog, _) = drive(&mut hpa, &trace.counts, seed);
        prop_assert!(hlog.iter().all(|(_, x)| (2..=10).contains(x)));
        let (rlog, _) = drive(&mut rps, &trace.counts, seed);
        prop_assert!(rlog.iter().all(|(_, x)| (1..=7).contains(x)));
    }

    #[test]
    fn desired_is_monotone_in_cpu(current in 1u32..=24, a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let cfg = HpaConfig::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (dl, dh) = (hpa_desired(current, lo, &cfg), hpa_desired(current, hi, &cfg));
        prop_assert!(dl <= dh);
    }
}
