//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any of them fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::sync::Arc;
use std::time::Instant;

use common::{metrics_for, reward_terms, REWARD_CASES};
use faas_lab_core::agents::ppo::{ppo_loss, prepare_sequences, PpoConfig, SeqSample};
use faas_lab_core::agents::rollout::Runner;
use faas_lab_core::agents::{ActorCritic, Agent, AgentKind, DrqnConfig, RandomController};
use faas_lab_core::baselines::{hpa_desired, BaselineKind, HpaConfig};
use faas_lab_core::env::{reward_fn, Environment, RewardConfig, ToyBandit, OBS_DIM};
use faas_lab_core::experiment::report::{rows_to_csv, RunSummary, WindowRow};
use faas_lab_core::experiment::{self as exp, ExperimentConfig};
use faas_lab_core::sim::{ClusterSim, SimConfig};
use faas_lab_core::workload::{default_size_mix, sample_arrivals, Trace};
use faas_lab_nn::gradcheck::{grad_check, DEFAULT_STEP};
use faas_lab_nn::params::zeros_like;
use faas_lab_nn::{categorical, Activation, DenseLayer, LstmCell, LstmState, Matrix, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(id: &'static str, title: &'static str, pass: bool, detail: String) -> Self {
        Self { id, title, pass, detail }
    }
}

/// Episodes whose length and simulated duration were checked.
#[derive(Default)]
struct EpisodeAudit {
    episodes: usize,
    violations: Vec<String>,
}

impl EpisodeAudit {
    fn eval_rows(&mut self, what: &str, rows: &[WindowRow], windows: usize) {
        if rows.len() != windows {
            self.violations.push(format!("{what}: {} rows for {windows} windows", rows.len()));
        }
        for (k, episode) in rows.chunks(10).enumerate() {
            if episode.len() != 10 {
                self.violations.push(format!("{what}: episode {k} has {} windows", episode.len()));
            }
            self.episodes += 1;
        }
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn weighted_sum(y: &Matrix, w: &Matrix) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let mut dense = 0.0f64;
    for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
        let layer = DenseLayer::new(random_matrix(6, 4, 1.0, &mut rng), random_matrix(1, 6, 0.5, &mut rng), act);
        let x = random_matrix(5, 4, 1.5, &mut rng);
        let proj = random_matrix(5, 6, 1.0, &mut rng);
        let back = layer.backward(&x, &proj);
        let mut g = zeros_like(&layer);
        g.weight = back.dweight;
        g.bias = back.dbias;
        let report = grad_check(&layer, &g, |l| weighted_sum(&l.forward(&x), &proj), DEFAULT_STEP);
        dense = dense.max(report.max_rel_err());
    }

    let mut cell = LstmCell::init(3, 8, &mut rng);
    for v in cell.bias.data_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    let xs: Vec<Matrix> = (0..5).map(|_| random_matrix(2, 3, 1.0, &mut rng)).collect();
    let projs: Vec<Matrix> = (0..5).map(|_| random_matrix(2, 8, 1.0, &mut rng)).collect();
    let h0 = LstmState {
        h: random_matrix(2, 8, 0.5, &mut rng),
        c: random_matrix(2, 8, 0.5, &mut rng),
    };
    let (_, _, caches) = cell.forward_sequence(&xs, &h0);
    let mut g = zeros_like(&cell);
    cell.bptt(&caches, &projs, None, &mut g);
    let lstm_loss = |c: &LstmCell| {
        let (hs, _, _) = c.forward_sequence(&xs, &h0);
        hs.iter().zip(&projs).map(|(h, p)| weighted_sum(h, p)).sum::<f64>()
    };
    let lstm = grad_check(&cell, &g, lstm_loss, DEFAULT_STEP).max_rel_err();

    let cfg = PpoConfig {
        lstm_hidden: 6,
        head_hidden: vec![5, 5],
        ..PpoConfig::default()
    };
    let mut net = ActorCritic::rppo(OBS_DIM, 6, &[5, 5], 5, false, &mut rng);
    for w in net.actor.layers.last_mut().unwrap().weight.data_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    let obs: Vec<Vec<f64>> = (0..3).map(|_| (0..OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let actions = vec![0, 2, 4];
    let mut state = net.initial_state();
    let mut old = Vec::new();
    for (o, &a) in obs.iter().zip(&actions) {
        let (logits, _, next) = net.step(o, &state);
        old.push(categorical::log_softmax(&logits)[a]);
        state = next;
    }
    let sample = SeqSample {
        obs,
        actions,
        old_log_probs: old.iter().zip([0.1, -0.3, 0.25]).map(|(l, d)| l + d).collect(),
        advantages: vec![0.8, 1.3, -0.6],
        returns: vec![0.4, -0.2, 0.9],
        init: net.initial_state(),
    };
    let mut g = zeros_like(&net);
    ppo_loss(&net, &[&sample], &cfg, Some(&mut g));
    let rppo = grad_check(&net, &g, |n| ppo_loss(n, &[&sample], &cfg, None).total, DEFAULT_STEP).max_rel_err();

    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        "1",
        "gradient fidelity",
        dense < 1e-6 && lstm < 1e-5 && rppo < 1e-4 && secs < 30.0,
        format!("dense {dense:.1e} (< 1e-6), lstm bptt len 5 {lstm:.1e} (< 1e-5), rppo loss 3 steps {rppo:.1e} (< 1e-4), {secs:.1} s (< 30 s)"),
    )
}

fn reward_exactness() -> Outcome {
    let cfg = RewardConfig::default();
    let mut failures = Vec::new();
    for (i, case) in REWARD_CASES.iter().enumerate() {
        let r = reward_fn(&metrics_for(case), case.valid, &cfg, 1);
        let ok = if case.valid {
            r == reward_terms(1.0, 0.1, 0.2, case.phi, case.n, 1, case.c, case.m) && (r - case.hand).abs() < 1e-12
        } else {
            r == cfg.r_min && r == -100.0
        };
        if !ok {
            failures.push(format!("case {i}: {r} vs {}", case.hand));
        }
    }
    let has_bounds = REWARD_CASES.iter().any(|c| c.valid && c.n == 1) && REWARD_CASES.iter().any(|c| c.valid && c.n == 24);
    let has_invalid = REWARD_CASES.iter().any(|c| !c.valid);
    Outcome::new(
        "2",
        "reward exactness",
        failures.is_empty() && REWARD_CASES.len() == 20 && has_bounds && has_invalid,
        if failures.is_empty() {
            format!("{} cases equal term by term, boundaries n=1 and n=24, invalid case at -100", REWARD_CASES.len())
        } else {
            failures.join("; ")
        },
    )
}

fn ppo_mechanics() -> Outcome {
    let cfg = PpoConfig {
        lstm_hidden: 6,
        head_hidden: vec![5, 5],
        ..PpoConfig::default()
    };
    let (mut worst_ratio, mut min_violations, mut samples) = (0.0f64, 0usize, 0usize);
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ActorCritic::rppo(OBS_DIM, 6, &[5, 5], 5, seed % 2 == 0, &mut rng);
        let mut runner = Runner::new(ToyBandit::new(rng.random_range(0..5), 5), seed);
        let buf = runner.collect(&net, 20, 1.0, &mut rng).expect("rollout");
        let seqs = prepare_sequences(&buf, &cfg, true);
        let refs: Vec<&SeqSample> = seqs.iter().collect();
        for s in ppo_loss(&net, &refs, &cfg, None).samples {
            worst_ratio = worst_ratio.max((s.ratio - 1.0).abs());
            samples += 1;
        }
        let mut moved = net.clone();
        for b in moved.blocks_mut() {
            for v in b.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        for s in ppo_loss(&moved, &refs, &cfg, None).samples {
            let objective = s.unclipped.min(s.clipped);
            if objective > s.unclipped {
                min_violations += 1;
            }
            samples += 1;
        }
    }
    Outcome::new(
        "3",
        "PPO mechanics",
        worst_ratio < 1e-9 && min_violations == 0,
        format!("100 rollouts, {samples} samples: max |ratio - 1| {worst_ratio:.1e} (< 1e-9), {min_violations} min-property violations"),
    )
}

fn eval_baseline(cfg: &ExperimentConfig, trace: &Arc<Trace>, kind: BaselineKind, audit: &mut EpisodeAudit) -> Vec<WindowRow> {
    let mut scaler = kind.build(&cfg.hpa, &cfg.rps);
    match exp::evaluate_autoscaler(cfg, trace, cfg.eval_windows, kind.name(), scaler.as_mut()) {
        Ok(rows) => {
            audit.eval_rows(kind.name(), &rows, cfg.eval_windows);
            rows
        }
        Err(e) => {
            audit.violations.push(format!("{}: {e}", kind.name()));
            Vec::new()
        }
    }
}

fn conservation_and_determinism(audit: &mut EpisodeAudit) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut sim = ClusterSim::new(SimConfig::default()).unwrap();
    let (mut windows, mut imbalanced) = (0, 0);
    for _ in 0..10_000 {
        let delta = rng.random_range(-2..=2);
        if sim.check_scaling(delta).is_ok() {
            sim.apply_scaling(delta).unwrap();
        }
        let plan = sample_arrivals(rng.random_range(0..50), 30.0, &default_size_mix(), &mut rng);
        let m = sim.advance_window(&plan);
        let out = (m.completed + m.timed_out + m.rejected) as i64 + m.inflight_end as i64 - m.inflight_start as i64;
        if m.q as usize != plan.len() || m.q as i64 != out {
            imbalanced += 1;
        }
        windows += 1;
    }

    let cfg = ExperimentConfig {
        seed: 77,
        ..ExperimentConfig::default()
    };
    let trace = exp::load_workload(&cfg).unwrap();
    let a = rows_to_csv(&eval_baseline(&cfg, &trace, BaselineKind::Hpa, audit));
    let b = rows_to_csv(&eval_baseline(&cfg, &trace, BaselineKind::Hpa, audit));
    let other = ExperimentConfig { seed: 78, ..cfg.clone() };
    let c = rows_to_csv(&eval_baseline(&other, &trace, BaselineKind::Hpa, audit));
    Outcome::new(
        "4",
        "simulator conservation and determinism",
        windows == 10_000 && imbalanced == 0 && a == b && a != c,
        format!(
            "{windows} windows, {imbalanced} unbalanced; same seed CSVs identical: {}, other seed differs: {}",
            a == b,
            a != c
        ),
    )
}

fn baseline_mechanics(audit: &mut EpisodeAudit) -> Outcome {
    let start = Instant::now();
    let hpa = HpaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let current = rng.random_range(1..=24u32);
        let cpu = rng.random_range(0.0..2.0);
        let raw = if (cpu - hpa.target_cpu).abs() <= hpa.tolerance * hpa.target_cpu {
            current as f64
        } else {
            (current as f64 * cpu / hpa.target_cpu).ceil()
        };
        let expected = raw.clamp(hpa.min_replicas as f64, hpa.max_replicas as f64) as u32;
        if hpa_desired(current, cpu, &hpa) != expected {
            mismatches += 1;
        }
    }
    let cfg = ExperimentConfig::default();
    let trace = exp::load_workload(&cfg).unwrap();
    let rows = eval_baseline(&cfg, &trace, BaselineKind::Rps, audit);
    let above_one = rows.iter().filter(|r| r.n != 1).count();
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        "5",
        "baseline mechanics",
        mismatches == 0 && !rows.is_empty() && above_one == 0 && secs < 60.0,
        format!(
            "hpa_desired oracle mismatches {mismatches}/1000; rps windows not at 1 replica {above_one}/{}; {secs:.1} s (< 60 s)",
            rows.len()
        ),
    )
}

struct SeedResult {
    phi: [f64; 3],
    rps: f64,
    random: f64,
}

fn mean_phi(rows: &[WindowRow]) -> f64 {
    RunSummary::from_rows(rows, 10, 0.0).mean_throughput
}

fn learning_result(audit: &mut EpisodeAudit) -> Vec<Outcome> {
    let start = Instant::now();
    let mut per_seed = Vec::new();
    let mut errors = Vec::new();
    for seed in [1u64, 2, 3] {
        let base = ExperimentConfig {
            seed,
            episodes: 200,
            ..ExperimentConfig::default()
        };
        let trace = exp::load_workload(&base).unwrap();
        let rps = eval_baseline(&base, &trace, BaselineKind::Rps, audit);
        let mut random = RandomController::new(base.env.actions.len(), seed);
        let random_rows = exp::evaluate_controller(&base, &trace, base.eval_windows, "random", &mut random);
        let random_rows = random_rows.unwrap_or_else(|e| {
            errors.push(format!("random s{seed}: {e}"));
            Vec::new()
        });
        audit.eval_rows("random", &random_rows, base.eval_windows);
        let mut phi = [f64::NAN; 3];
        for (i, kind) in AgentKind::ALL.into_iter().enumerate() {
            let cfg = ExperimentConfig { agent: kind, ..base.clone() };
            let mut agent = exp::new_agent(&cfg);
            let mut trained = 0;
            if let Err(e) = exp::train_agent(&cfg, &trace, &mut agent, |_, _| {
                trained += 1;
                Ok(())
            }) {
                errors.push(format!("{} s{seed}: {e}", kind.name()));
                continue;
            }
            audit.episodes += trained;
            let mut ctl = agent.greedy();
            match exp::evaluate_controller(&cfg, &trace, cfg.eval_windows, kind.name(), ctl.as_mut()) {
                Ok(rows) => {
                    audit.eval_rows(kind.name(), &rows, cfg.eval_windows);
                    phi[i] = mean_phi(&rows);
                }
                Err(e) => errors.push(format!("{} s{seed}: {e}", kind.name())),
            }
        }
        per_seed.push(SeedResult {
            phi,
            rps: mean_phi(&rps),
            random: mean_phi(&random_rows),
        });
    }
    let secs = start.elapsed().as_secs_f64();
    audit.violations.extend(errors.iter().cloned());

    let mean = |f: &dyn Fn(&SeedResult) -> f64| per_seed.iter().map(f).sum::<f64>() / per_seed.len() as f64;
    let agent_mean = |i: usize| mean(&|s: &SeedResult| s.phi[i]);
    let (rppo, ppo, drqn) = (agent_mean(0), agent_mean(1), agent_mean(2));
    let rps = mean(&|s: &SeedResult| s.rps);
    let random = mean(&|s: &SeedResult| s.random);
    let seeds: Vec<String> = per_seed
        .iter()
        .zip(1..)
        .map(|(s, k)| {
            format!(
                "s{k}: rppo {:.3} ppo {:.3} drqn {:.3} rps {:.3} random {:.3}",
                s.phi[0], s.phi[1], s.phi[2], s.rps, s.random
            )
        })
        .collect();
    let timing = format!("{secs:.0} s (< 1800 s)");
    let in_time = secs < 1800.0 && errors.is_empty();
    let rppo_wins = per_seed.iter().filter(|s| s.phi[0] >= s.phi[1]).count();
    let pts = |a: f64, b: f64| (a - b) * 100.0;
    vec![
        Outcome::new(
            "6a",
            "RPPO and PPO beat RPS by >= 15 points",
            pts(rppo, rps) >= 15.0 && pts(ppo, rps) >= 15.0 && in_time,
            format!(
                "mean throughput rppo {rppo:.3} ({:+.1}), ppo {ppo:.3} ({:+.1}) vs rps {rps:.3}; {}; {timing}",
                pts(rppo, rps),
                pts(ppo, rps),
                seeds.join(", ")
            ),
        ),
        Outcome::new(
            "6b",
            "RPPO >= PPO in at least 2 of 3 seeds",
            rppo_wins >= 2 && in_time,
            format!("rppo >= ppo in {rppo_wins}/3 seeds"),
        ),
        Outcome::new(
            "6c",
            "every agent beats random by >= 10 points",
            [rppo, ppo, drqn].iter().all(|&a| pts(a, random) >= 10.0) && in_time,
            format!(
                "rppo {:+.1}, ppo {:+.1}, drqn {:+.1} points vs random {random:.3}",
                pts(rppo, random),
                pts(ppo, random),
                pts(drqn, random)
            ),
        ),
    ]
}

fn toy_policy_improvement() -> Outcome {
    let start = Instant::now();
    let (ppo, drqn) = (PpoConfig::default(), DrqnConfig::default());
    let mut parts = Vec::new();
    let mut all = true;
    for kind in AgentKind::ALL {
        let mut accs = Vec::new();
        for seed in [1u64, 2, 3] {
            let best = (seed as usize * 2) % 5;
            let mut agent = Agent::new(kind, OBS_DIM, 5, &ppo, &drqn, seed);
            // 200 ten-step episodes: 2000 environment steps.
            let trained = agent.train(ToyBandit::new(best, 5), 200, seed, |_, _| Ok(()));
            let acc = if trained.is_ok() { greedy_accuracy(&agent, best, seed) } else { 0.0 };
            all &= acc >= 0.95;
            accs.push(format!("{:.0}%", acc * 100.0));
        }
        parts.push(format!("{} {}", kind.name(), accs.join("/")));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        "7",
        "policy improvement on the toy task",
        all && secs < 300.0,
        format!("greedy accuracy after 2000 steps: {}; {secs:.0} s (< 300 s)", parts.join(", ")),
    )
}

fn greedy_accuracy(agent: &Agent, best: usize, seed: u64) -> f64 {
    let mut env = ToyBandit::new(best, 5);
    let mut ctl = agent.greedy();
    let (mut right, mut total) = (0, 0);
    for k in 0..50 {
        let mut obs = env.reset_episode(seed.wrapping_mul(1000) + k).unwrap();
        ctl.reset();
        loop {
            let a = ctl.decide(&obs);
            right += (a == best) as usize;
            total += 1;
            let tr = env.step_action(a).unwrap();
            if tr.done {
                break;
            }
            obs = tr.obs;
        }
    }
    right as f64 / total as f64
}

fn episode_semantics(audit: &mut EpisodeAudit) -> Outcome {
    let cfg = ExperimentConfig::default();
    let trace = exp::load_workload(&cfg).unwrap();
    let mut env = exp::make_env(&cfg, &trace).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 0..20u64 {
        let cursor = rng.random_range(0..=env.last_cursor());
        env.reset(k, cursor).unwrap();
        let mut steps = 0;
        while !env.is_done() {
            let r = env.step(rng.random_range(0..cfg.env.actions.len())).unwrap();
            steps += 1;
            let now = env.sim().unwrap().now();
            if (now - (steps as f64 + 1.0) * 30.0).abs() > 1e-9 || r.done != (steps == 10) {
                audit.violations.push(format!("episode {k}: step {steps} ends at {now} s"));
            }
        }
        if steps != 10 {
            audit.violations.push(format!("episode {k}: {steps} windows"));
        }
        audit.episodes += 1;
    }
    Outcome::new(
        "8",
        "episode semantics",
        audit.violations.is_empty() && audit.episodes > 0,
        if audit.violations.is_empty() {
            format!("{} episodes across all runs, each 10 windows of 30 s", audit.episodes)
        } else {
            audit.violations.join("; ")
        },
    )
}

fn main() {
    let mut audit = EpisodeAudit::default();
    let mut outcomes = Vec::new();
    let report = |o: Outcome| {
        println!("[{}] {} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.title, o.detail);
        o.pass
    };
    outcomes.push(report(gradient_fidelity()));
    outcomes.push(report(reward_exactness()));
    outcomes.push(report(ppo_mechanics()));
    outcomes.push(report(conservation_and_determinism(&mut audit)));
    outcomes.push(report(baseline_mechanics(&mut audit)));
    for o in learning_result(&mut audit) {
        outcomes.push(report(o));
    }
    outcomes.push(report(toy_policy_improvement()));
    outcomes.push(report(episode_semantics(&mut audit)));
    let failed = outcomes.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
