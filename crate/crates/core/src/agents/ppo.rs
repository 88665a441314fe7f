//! Clipped-surrogate PPO update for both network variants.
//!
//! Minibatches are whole rollout segments. Every segment starts from the
//! recurrent state stored with its first step, so the recurrent network sees
//! exactly the context it acted under.

use faas_lab_nn::params::{clip_global_norm, zeros_like};
use faas_lab_nn::{categorical, Adam, Matrix};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{ActorCritic, RecState};
use super::rollout::{compute_gae, normalize_advantages, RolloutBuffer};
use super::AgentError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    /// Segments (episodes) per minibatch.
    pub minibatch_episodes: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Steps collected between updates.
    pub horizon: usize,
    pub max_grad_norm: f64,
    /// Multiplier applied to raw rewards before advantage estimation.
    pub reward_scale: f64,
    pub lstm_hidden: usize,
    pub head_hidden: Vec<usize>,
    pub shared_lstm: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            epochs: 4,
            minibatch_episodes: 5,
            lr: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            horizon: 200,
            max_grad_norm: 0.5,
            reward_scale: 0.01,
            lstm_hidden: 256,
            head_hidden: vec![64, 64],
            shared_lstm: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), crate::ConfigError> {
        let bad = |m: &str| Err(crate::ConfigError::Invalid(format!("ppo: {m}")));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) || !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("clip_eps, lr and max_grad_norm must be positive");
        }
        if self.epochs == 0 || self.minibatch_episodes == 0 || self.horizon == 0 {
            return bad("epochs, minibatch_episodes and horizon must be positive");
        }
        if self.lstm_hidden == 0 || self.head_hidden.contains(&0) {
            return bad("layer sizes must be positive");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || !(self.reward_scale > 0.0) {
            return bad("coefficients must be non-negative and reward_scale positive");
        }
        Ok(())
    }
}

/// One training sequence with everything the loss needs.
#[derive(Clone, Debug)]
pub struct SeqSample {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub init: RecState,
}

impl SeqSample {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Splits a buffer into loss sequences with GAE advantages.
pub fn prepare_sequences(buf: &RolloutBuffer, cfg: &PpoConfig, normalize: bool) -> Vec<SeqSample> {
    let (mut adv, ret) = compute_gae(&buf.rewards(), &buf.values(), &buf.dones(), buf.last_value, cfg.gamma, cfg.lambda);
    if normalize {
        normalize_advantages(&mut adv);
    }
    buf.segments()
        .into_iter()
        .map(|(start, len)| {
            let steps = &buf.steps[start..start + len];
            SeqSample {
                obs: steps.iter().map(|s| s.obs.clone()).collect(),
                actions: steps.iter().map(|s| s.action).collect(),
                old_log_probs: steps.iter().map(|s| s.log_prob).collect(),
                advantages: adv[start..start + len].to_vec(),
                returns: ret[start..start + len].to_vec(),
                init: steps[0].state.clone(),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleTerms {
    pub ratio: f64,
    pub unclipped: f64,
    pub clipped: f64,
    pub advantage: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LossParts {
    /// `policy + value_coef·value − entropy_coef·entropy`, minimised.
    pub total: f64,
    /// Negated mean clipped surrogate.
    pub policy: f64,
    /// Mean squared value error.
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Mean of `old_log_prob − new_log_prob`.
    pub approx_kl: f64,
    pub samples: Vec<SampleTerms>,
}

/// Loss of `net` on `seqs`; when `grads` is given, its gradient is added to it.
pub fn ppo_loss(net: &ActorCritic, seqs: &[&SeqSample], cfg: &PpoConfig, mut grads: Option<&mut ActorCritic>) -> LossParts {
    let total_n: usize = seqs.iter().map(|s| s.len()).sum();
    let inv_n = 1.0 / total_n.max(1) as f64;
    let mut parts = LossParts::default();
    let mut clipped_count = 0usize;

    // Equal-length sequences run as one batch.
    let mut lengths: Vec<usize> = seqs.iter().map(|s| s.len()).filter(|&l| l > 0).collect();
    lengths.sort_unstable();
    lengths.dedup();
    for len in lengths {
        let bucket: Vec<&SeqSample> = seqs.iter().copied().filter(|s| s.len() == len).collect();
        let batch = bucket.len();
        let obs: Vec<Matrix> = (0..len)
            .map(|t| Matrix::from_rows(&bucket.iter().map(|s| s.obs[t].as_slice()).collect::<Vec<_>>()))
            .collect();
        let init = RecState::stack(&bucket.iter().map(|s| &s.init).collect::<Vec<_>>());
        let out = net.forward_seq(&obs, &init);
        let num_actions = out.logits.cols();
        let mut dlogits = Matrix::zeros(len * batch, num_actions);
        let mut dvalues = Matrix::zeros(len * batch, 1);
        for t in 0..len {
            for (b, s) in bucket.iter().enumerate() {
                let row = t * batch + b;
                let logp = categorical::log_softmax(out.logits.row(row));
                let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                let a = s.actions[t];
                let adv = s.advantages[t];
                let ratio = (logp[a] - s.old_log_probs[t]).exp();
                let unclipped = ratio * adv;
                let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
                parts.policy -= unclipped.min(clipped) * inv_n;
                parts.approx_kl += (s.old_log_probs[t] - logp[a]) * inv_n;
                if (ratio - 1.0).abs() > cfg.clip_eps {
                    clipped_count += 1;
                }
                let h: f64 = -p.iter().zip(&logp).map(|(pi, li)| pi * li).sum::<f64>();
                parts.entropy += h * inv_n;
                let v = out.values.get(row, 0);
                let err = v - s.returns[t];
                parts.value += err * err * inv_n;
                parts.samples.push(SampleTerms {
                    ratio,
                    unclipped,
                    clipped,
                    advantage: adv,
                });

                // d(policy)/d(logp_a): the surrogate is linear in the ratio
                // on the unclipped branch and flat otherwise.
                let dlogp = if unclipped <= clipped { -adv * ratio * inv_n } else { 0.0 };
                let dz = dlogits.row_mut(row);
                for j in 0..num_actions {
                    let onehot = if j == a { 1.0 } else { 0.0 };
                    dz[j] = dlogp * (onehot - p[j]) + cfg.entropy_coef * inv_n * p[j] * (logp[j] + h);
                }
                dvalues.set(row, 0, cfg.value_coef * 2.0 * err * inv_n);
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            net.backward_seq(&out.cache, &dlogits, &dvalues, g);
        }
    }
    parts.clip_fraction = clipped_count as f64 * inv_n;
    parts.total = parts.policy + cfg.value_coef * parts.value - cfg.entropy_coef * parts.entropy;
    parts
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Clip fraction over the first epoch's minibatches.
    pub first_epoch_clip_fraction: f64,
    /// Clip fraction over all minibatches.
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Runs `cfg.epochs` passes of shuffled minibatch updates over `buf`.
pub fn ppo_update<R: Rng + ?Sized>(
    net: &mut ActorCritic,
    adam: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, AgentError> {
    let seqs = prepare_sequences(buf, cfg, true);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut stats = UpdateStats::default();
    let mut first_epoch_batches = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_episodes) {
            let batch: Vec<&SeqSample> = chunk.iter().map(|&i| &seqs[i]).collect();
            let mut grads = zeros_like(net);
            let parts = ppo_loss(net, &batch, cfg, Some(&mut grads));
            if !parts.total.is_finite() {
                return Err(AgentError::NonFinite(format!(
                    "ppo loss is {} (policy {}, value {}, entropy {})",
                    parts.total, parts.policy, parts.value, parts.entropy
                )));
            }
            let norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
            adam.update(net, &grads)?;
            if epoch == 0 {
                stats.first_epoch_clip_fraction += parts.clip_fraction;
                first_epoch_batches += 1;
            }
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.clip_fraction += parts.clip_fraction;
            stats.approx_kl += parts.approx_kl;
            stats.grad_norm += norm;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches.max(1) as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    stats.approx_kl /= k;
    stats.grad_norm /= k;
    stats.first_epoch_clip_fraction /= first_epoch_batches.max(1) as f64;
    Ok(stats)
}

