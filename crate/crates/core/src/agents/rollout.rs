//! On-policy rollout storage, action selection and advantage estimation.

use faas_lab_nn::categorical;
use rand::Rng;

use super::net::{ActorCritic, RecState};
use super::AgentError;
use crate::env::{splitmix64, Environment};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug)]
pub struct ActOutput {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub state: RecState,
}

pub fn act<R: Rng + ?Sized>(net: &ActorCritic, obs: &[f64], state: &RecState, mode: ActMode, rng: &mut R) -> ActOutput {
    let (logits, value, next) = net.step(obs, state);
    let logp = categorical::log_softmax(&logits);
    let action = match mode {
        ActMode::Greedy => categorical::argmax(&logits),
        ActMode::Sample => categorical::sample(&categorical::softmax(&logits), rng),
    };
    ActOutput {
        action,
        log_prob: logp[action],
        value,
        state: next,
    }
}

#[derive(Clone, Debug)]
pub struct RolloutStep {
    pub obs: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    /// Reward used for learning (raw reward times the reward scale).
    pub reward: f64,
    pub raw_reward: f64,
    pub done: bool,
    /// Recurrent state before this step.
    pub state: RecState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub index: u64,
    pub reward: f64,
    pub throughput: Option<f64>,
    pub steps: usize,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub steps: Vec<RolloutStep>,
    /// Value estimate after the last step, used to bootstrap an unfinished
    /// episode; zero when the last step ends an episode.
    pub last_value: f64,
    pub episodes: Vec<EpisodeSummary>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }

    pub fn dones(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.done).collect()
    }

    /// Contiguous `(start, len)` runs split at episode ends and the buffer end.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for (i, s) in self.steps.iter().enumerate() {
            if s.done {
                out.push((start, i + 1 - start));
                start = i + 1;
            }
        }
        if start < self.steps.len() {
            out.push((start, self.steps.len() - start));
        }
        out
    }
}

/// Drives one environment across rollouts, carrying the open episode and
/// the policy's recurrent state between calls.
pub struct Runner<E: Environment> {
    pub env: E,
    seed: u64,
    episode: u64,
    obs: Option<Vec<f64>>,
    state: RecState,
    ep_reward: f64,
    ep_phi: f64,
    ep_phi_n: usize,
    ep_len: usize,
}

impl<E: Environment> Runner<E> {
    pub fn new(env: E, seed: u64) -> Self {
        Self {
            env,
            seed,
            episode: 0,
            obs: None,
            state: RecState::default(),
            ep_reward: 0.0,
            ep_phi: 0.0,
            ep_phi_n: 0,
            ep_len: 0,
        }
    }

    pub fn episodes_started(&self) -> u64 {
        self.episode
    }

    /// Seed of the `k`-th episode of a run seeded with `seed`.
    pub fn episode_seed(seed: u64, k: u64) -> u64 {
        splitmix64(seed ^ splitmix64(k))
    }

    fn begin_episode(&mut self, net: &ActorCritic) -> Result<(), AgentError> {
        let obs = self.env.reset_episode(Self::episode_seed(self.seed, self.episode))?;
        self.episode += 1;
        self.obs = Some(obs);
        self.state = net.initial_state();
        self.ep_reward = 0.0;
        self.ep_phi = 0.0;
        self.ep_phi_n = 0;
        self.ep_len = 0;
        Ok(())
    }

    /// Collects `horizon` steps with the frozen `net`.
    pub fn collect<R: Rng + ?Sized>(
        &mut self,
        net: &ActorCritic,
        horizon: usize,
        reward_scale: f64,
        rng: &mut R,
    ) -> Result<RolloutBuffer, AgentError> {
        self.collect_episodes(net, horizon, usize::MAX, reward_scale, rng)
    }

    /// Like [`collect`](Self::collect) but stops early once `max_episodes`
    /// episodes have finished.
    pub fn collect_episodes<R: Rng + ?Sized>(
        &mut self,
        net: &ActorCritic,
        horizon: usize,
        max_episodes: usize,
        reward_scale: f64,
        rng: &mut R,
    ) -> Result<RolloutBuffer, AgentError> {
        let mut buf = RolloutBuffer::default();
        for _ in 0..horizon {
            if buf.episodes.len() >= max_episodes {
                break;
            }
            if self.obs.is_none() {
                self.begin_episode(net)?;
            }
            let obs = self.obs.take().expect("episode open");
            let out = act(net, &obs, &self.state, ActMode::Sample, rng);
            let tr = self.env.step_action(out.action)?;
            self.ep_reward += tr.reward;
            self.ep_len += 1;
            if let Some(phi) = tr.throughput {
                self.ep_phi += phi;
                self.ep_phi_n += 1;
            }
            buf.steps.push(RolloutStep {
                obs,
                action: out.action,
                log_prob: out.log_prob,
                value: out.value,
                reward: tr.reward * reward_scale,
                raw_reward: tr.reward,
                done: tr.done,
                state: std::mem::replace(&mut self.state, out.state),
            });
            if tr.done {
                buf.episodes.push(EpisodeSummary {
                    index: self.episode - 1,
                    reward: self.ep_reward,
                    throughput: (self.ep_phi_n > 0).then(|| self.ep_phi / self.ep_phi_n as f64),
                    steps: self.ep_len,
                });
                self.obs = None;
            } else {
                self.obs = Some(tr.obs);
            }
        }
        buf.last_value = match &self.obs {
            Some(o) => net.step(o, &self.state).1,
            None => 0.0,
        };
        Ok(buf)
    }
}

/// GAE(λ): returns `(advantages, returns)` with `returns = advantages + values`.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "rollout field lengths differ");
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let nonterminal = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_value * nonterminal - values[t];
        gae = delta + gamma * lambda * nonterminal * gae;
        adv[t] = gae;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to mean 0, standard deviation 1 (population).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv {
        *a = (*a - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn telescoping_case() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let (adv, ret) = compute_gae(&r, &[0.0; 4], &[false, false, false, true], 0.0, 1.0, 1.0);
        assert_eq!(adv, vec![10.0, 9.0, 7.0, 4.0]);
        assert_eq!(ret, adv);
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let r = [0.5, -1.0, 2.0];
        let v = [0.1, 0.2, 0.3];
        let (adv, _) = compute_gae(&r, &v, &[false, false, false], 0.7, 0.9, 0.0);
        assert_eq!(adv[0], 0.5 + 0.9 * 0.2 - 0.1);
        assert_eq!(adv[1], -1.0 + 0.9 * 0.3 - 0.2);
        assert_eq!(adv[2], 2.0 + 0.9 * 0.7 - 0.3);
    }

    #[test]
    fn normalization_moments() {
        let mut a = vec![1.0, 2.0, 3.0, 10.0];
        normalize_advantages(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}
