//! Deep recurrent Q-network with episode replay and a periodically synced
//! target network.

use std::collections::VecDeque;

use faas_lab_nn::params::{clip_global_norm, copy_params, prefixed, zeros_like, Params};
use faas_lab_nn::{categorical, Activation, Adam, AdamConfig, LstmCell, LstmState, Matrix, Mlp};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AgentError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrqnConfig {
    pub lr: f64,
    pub gamma: f64,
    /// Sequences per gradient step.
    pub batch_episodes: usize,
    pub seq_len: usize,
    pub burn_in: usize,
    /// Replay capacity in episodes.
    pub replay_capacity: usize,
    /// Gradient steps between target syncs.
    pub target_sync: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Environment steps over which epsilon decays linearly.
    pub eps_decay_steps: u64,
    /// Environment steps between gradient steps.
    pub train_every: u64,
    pub max_grad_norm: f64,
    pub reward_scale: f64,
    pub lstm_hidden: usize,
    pub head_hidden: Vec<usize>,
}

impl Default for DrqnConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            gamma: 0.99,
            batch_episodes: 8,
            seq_len: 8,
            burn_in: 2,
            replay_capacity: 2000,
            target_sync: 500,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 1000,
            train_every: 1,
            max_grad_norm: 10.0,
            reward_scale: 1.0,
            lstm_hidden: 256,
            head_hidden: vec![128, 128],
        }
    }
}

impl DrqnConfig {
    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        let bad = |m: &str| Err(crate::ConfigError::Invalid(format!("drqn: {m}")));
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.gamma) {
            return bad("lr must be positive and gamma in [0, 1]");
        }
        if self.batch_episodes == 0 || self.replay_capacity == 0 || self.target_sync == 0 || self.train_every == 0 {
            return bad("batch, capacity, sync and training cadence must be positive");
        }
        if self.burn_in >= self.seq_len {
            return bad("burn_in must be shorter than seq_len");
        }
        if !(0.0..=1.0).contains(&self.eps_end) || !(0.0..=1.0).contains(&self.eps_start) || self.eps_end > self.eps_start {
            return bad("epsilon must decay within [0, 1]");
        }
        if self.lstm_hidden == 0 || self.head_hidden.contains(&0) || !(self.reward_scale > 0.0) {
            return bad("layer sizes and reward_scale must be positive");
        }
        Ok(())
    }

    pub fn epsilon(&self, env_step: u64) -> f64 {
        if env_step >= self.eps_decay_steps {
            return self.eps_end;
        }
        let frac = env_step as f64 / self.eps_decay_steps as f64;
        self.eps_start + frac * (self.eps_end - self.eps_start)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrqnNet {
    pub lstm: LstmCell,
    pub q: Mlp,
}

impl DrqnNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, lstm_hidden: usize, head_hidden: &[usize], num_actions: usize, rng: &mut R) -> Self {
        Self {
            lstm: LstmCell::init(obs_dim, lstm_hidden, rng),
            q: Mlp::init(lstm_hidden, head_hidden, num_actions, Activation::Relu, 1.0, rng),
        }
    }

    pub const ARCH: &'static str = "drqn";

    pub fn num_actions(&self) -> usize {
        self.q.output_size()
    }

    pub fn initial_state(&self) -> LstmState {
        self.lstm.initial_state(1)
    }

    /// Q-values for one observation and the next recurrent state.
    pub fn step(&self, obs: &[f64], state: &LstmState) -> (Vec<f64>, LstmState) {
        let (next, _) = self.lstm.step(&Matrix::row_vector(obs), state);
        (self.q.forward(&next.h).into_vec(), next)
    }

    /// Q-values for every step of a batched sequence, rows `t * batch + b`.
    pub fn q_sequence(&self, obs: &[Matrix], state: &LstmState) -> Matrix {
        let (hs, _, _) = self.lstm.forward_sequence(obs, state);
        let flat = stack(&hs);
        self.q.forward(&flat)
    }
}

fn stack(ms: &[Matrix]) -> Matrix {
    let cols = ms.first().map_or(0, |m| m.cols());
    let mut data = Vec::with_capacity(ms.len() * ms.first().map_or(0, |m| m.len()));
    for m in ms {
        data.extend_from_slice(m.data());
    }
    Matrix::from_vec(data.len() / cols.max(1), cols, data)
}

impl Params for DrqnNet {
    fn named_blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out = prefixed("lstm", self.lstm.named_blocks());
        out.extend(prefixed("q", self.q.named_blocks()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.lstm.blocks_mut();
        out.extend(self.q.blocks_mut());
        out
    }
}

/// A complete episode: `obs` has one more entry than `actions`, the last
/// being the observation after the final step.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// A contiguous slice of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct SubSequence {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct EpisodeReplay {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl EpisodeReplay {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, ep: Episode) {
        assert_eq!(ep.obs.len(), ep.actions.len() + 1, "episode observation count");
        assert!(
            ep.rewards.len() == ep.len() && ep.dones.len() == ep.len(),
            "episode field lengths differ"
        );
        assert!(ep.dones.last() == Some(&true), "only complete episodes are stored");
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(ep);
    }

    /// Uniformly chosen episode and start offset; the subsequence has
    /// `seq_len` steps, or the whole episode if it is shorter.
    pub fn sample<R: Rng + ?Sized>(&self, seq_len: usize, rng: &mut R) -> Option<SubSequence> {
        if self.episodes.is_empty() {
            return None;
        }
        let ep = &self.episodes[rng.random_range(0..self.episodes.len())];
        let len = seq_len.min(ep.len());
        let start = rng.random_range(0..=ep.len() - len);
        Some(SubSequence {
            obs: ep.obs[start..=start + len].to_vec(),
            actions: ep.actions[start..start + len].to_vec(),
            rewards: ep.rewards[start..start + len].to_vec(),
            dones: ep.dones[start..start + len].to_vec(),
        })
    }
}

fn huber_grad(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

fn huber(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// TD targets `r + γ·(1 − done)·max_a Q_target(o')` for a batch.
pub fn td_targets(rewards: &[f64], dones: &[bool], next_q: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(next_q)
        .map(|((r, d), q)| {
            if *d {
                *r
            } else {
                r + gamma * q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect()
}

/// Online and target networks with their optimizer.
#[derive(Clone, Debug)]
pub struct DrqnLearner {
    pub online: DrqnNet,
    pub target: DrqnNet,
    pub adam: Adam,
    pub cfg: DrqnConfig,
    grad_steps: u64,
}

impl DrqnLearner {
    pub fn new(online: DrqnNet, cfg: DrqnConfig) -> Self {
        let adam = Adam::new(
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
            &online,
        );
        Self {
            target: online.clone(),
            online,
            adam,
            cfg,
            grad_steps: 0,
        }
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn sync_target(&mut self) {
        copy_params(&mut self.target, &self.online);
    }

    /// Loss and gradient on a batch of equal-length subsequences. The first
    /// `burn_in` steps only warm up the recurrent state.
    pub fn loss_and_grad(&self, batch: &[SubSequence]) -> (f64, DrqnNet) {
        let mut grads = zeros_like(&self.online);
        let mut lengths: Vec<usize> = batch.iter().map(|s| s.actions.len()).collect();
        lengths.sort_unstable();
        lengths.dedup();
        let burn_cap = self.cfg.burn_in;
        let count: usize = batch
            .iter()
            .map(|s| s.actions.len() - burn_cap.min(s.actions.len().saturating_sub(1)))
            .sum();
        let inv = 1.0 / count.max(1) as f64;
        let mut loss = 0.0;
        for len in lengths {
            let seqs: Vec<&SubSequence> = batch.iter().filter(|s| s.actions.len() == len).collect();
            let b = seqs.len();
            let burn = burn_cap.min(len.saturating_sub(1));
            let obs_at = |t: usize| Matrix::from_rows(&seqs.iter().map(|s| s.obs[t].as_slice()).collect::<Vec<_>>());
            let all_obs: Vec<Matrix> = (0..=len).map(obs_at).collect();
            let zero = self.online.lstm.initial_state(b);

            // Target values for o_{t+1}, t = burn..len.
            let tq = self.target.q_sequence(&all_obs, &zero);
            // Online: burn-in without gradient, then the learning span.
            let (_, burned, _) = self.online.lstm.forward_sequence(&all_obs[..burn], &zero);
            let (hs, _, caches) = self.online.lstm.forward_sequence(&all_obs[burn..len], &burned);
            let span = len - burn;
            let flat = stack(&hs);
            let qc = self.online.q.forward_cached(&flat);
            let q = qc.output();
            let mut dq = Matrix::zeros(q.rows(), q.cols());
            for k in 0..span {
                let t = burn + k;
                for (j, s) in seqs.iter().enumerate() {
                    let next_q = tq.row((t + 1) * b + j).to_vec();
                    let y = td_targets(&[s.rewards[t]], &[s.dones[t]], &[next_q], self.cfg.gamma)[0];
                    let row = k * b + j;
                    let diff = q.get(row, s.actions[t]) - y;
                    loss += huber(diff) * inv;
                    dq.set(row, s.actions[t], huber_grad(diff) * inv);
                }
            }
            let dh = self.online.q.backward(&qc, &dq, &mut grads.q);
            let dh_seq: Vec<Matrix> = (0..span)
                .map(|k| Matrix::from_vec(b, dh.cols(), dh.data()[k * b * dh.cols()..(k + 1) * b * dh.cols()].to_vec()))
                .collect();
            self.online.lstm.bptt(&caches, &dh_seq, None, &mut grads.lstm);
        }
        (loss, grads)
    }

    /// One gradient step on a sampled batch; `Ok(None)` when the replay holds
    /// fewer episodes than a batch.
    pub fn drqn_step<R: Rng + ?Sized>(&mut self, replay: &EpisodeReplay, rng: &mut R) -> Result<Option<f64>, AgentError> {
        if replay.len() < self.cfg.batch_episodes {
            return Ok(None);
        }
        let batch: Vec<SubSequence> = (0..self.cfg.batch_episodes)
            .map(|_| replay.sample(self.cfg.seq_len, rng).expect("non-empty replay"))
            .collect();
        self.train_on(&batch).map(Some)
    }

    /// One gradient step on a fixed batch.
    pub fn train_on(&mut self, batch: &[SubSequence]) -> Result<f64, AgentError> {
        let (loss, mut grads) = self.loss_and_grad(batch);
        if !loss.is_finite() {
            return Err(AgentError::NonFinite(format!("drqn loss is {loss}")));
        }
        clip_global_norm(&mut grads, self.cfg.max_grad_norm);
        self.adam.update(&mut self.online, &grads)?;
        self.grad_steps += 1;
        if self.grad_steps.is_multiple_of(self.cfg.target_sync) {
            self.sync_target();
        }
        Ok(loss)
    }

    /// Epsilon-greedy action from the online network.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], state: &LstmState, epsilon: f64, rng: &mut R) -> (usize, LstmState) {
        let (q, next) = self.online.step(obs, state);
        let action = if rng.random::<f64>() < epsilon {
            rng.random_range(0..q.len())
        } else {
            categorical::argmax(&q)
        };
        (action, next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode(len: usize, tag: f64) -> Episode {
        Episode {
            obs: (0..=len).map(|t| vec![tag, t as f64]).collect(),
            actions: (0..len).map(|t| t % 3).collect(),
            rewards: (0..len).map(|t| t as f64).collect(),
            dones: (0..len).map(|t| t + 1 == len).collect(),
        }
    }

    #[test]
    fn terminal_target_is_reward() {
        let y = td_targets(&[0.7, 0.7], &[true, false], &[vec![5.0, 9.0], vec![5.0, 9.0]], 0.9);
        assert_eq!(y[0], 0.7);
        assert!((y[1] - (0.7 + 0.9 * 9.0)).abs() < 1e-12);
    }

    #[test]
    fn replay_samples_contiguous_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut replay = EpisodeReplay::new(3);
        for k in 0..5 {
            replay.push(episode(10, k as f64));
        }
        assert_eq!(replay.len(), 3);
        for _ in 0..200 {
            let s = replay.sample(8, &mut rng).unwrap();
            assert_eq!(s.actions.len(), 8);
            assert_eq!(s.obs.len(), 9);
            assert!(s.obs[0][0] >= 2.0, "evicted episode sampled");
            for w in s.obs.windows(2) {
                assert_eq!(w[1][1], w[0][1] + 1.0);
            }
        }
    }

    #[test]
    #[should_panic(expected = "complete episodes")]
    fn incomplete_episode_rejected() {
        let mut ep = episode(4, 0.0);
        ep.dones[3] = false;
        EpisodeReplay::new(2).push(ep);
    }

    #[test]
    fn epsilon_schedule_is_linear() {
        let cfg = DrqnConfig {
            eps_decay_steps: 100,
            ..DrqnConfig::default()
        };
        assert_eq!(cfg.epsilon(0), 1.0);
        assert!((cfg.epsilon(50) - 0.525).abs() < 1e-12);
        assert_eq!(cfg.epsilon(100), 0.05);
        assert_eq!(cfg.epsilon(10_000), 0.05);
    }

    #[test]
    fn underfull_replay_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DrqnNet::new(2, 4, &[4], 3, &mut rng);
        let mut learner = DrqnLearner::new(net.clone(), DrqnConfig::default());
        let mut replay = EpisodeReplay::new(10);
        replay.push(episode(10, 0.0));
        assert_eq!(learner.drqn_step(&replay, &mut rng).unwrap(), None);
        assert_eq!(learner.online, net);
    }
}
