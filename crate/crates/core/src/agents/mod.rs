//! Learning autoscalers: recurrent PPO, feed-forward PPO and DRQN.

pub mod drqn;
pub mod net;
pub mod ppo;
pub mod rollout;

use faas_lab_nn::{categorical, Adam, AdamConfig, Checkpoint, LstmState, NnError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvError, Environment};
pub use drqn::{DrqnConfig, DrqnLearner, DrqnNet, Episode, EpisodeReplay};
pub use net::{ActorCritic, ArchKind, RecState};
pub use ppo::{ppo_loss, ppo_update, PpoConfig, UpdateStats};
pub use rollout::{act, compute_gae, ActMode, RolloutBuffer, Runner};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0}")]
    Aborted(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Rppo,
    Ppo,
    Drqn,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Rppo, AgentKind::Ppo, AgentKind::Drqn];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Rppo => "rppo",
            AgentKind::Ppo => "ppo",
            AgentKind::Drqn => "drqn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Per-episode training record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainProgress {
    pub episode: u64,
    pub env_steps: u64,
    /// Steps in this episode.
    pub steps: usize,
    pub reward: f64,
    pub throughput: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// DRQN: mean Huber loss since the previous episode.
    pub q_loss: f64,
    pub epsilon: f64,
}

/// Greedy decision maker over normalized observations.
pub trait Controller {
    fn reset(&mut self);
    fn decide(&mut self, obs: &[f64]) -> usize;
}

#[derive(Clone, Debug)]
pub enum Agent {
    ActorCritic {
        net: ActorCritic,
        adam: Adam,
        cfg: PpoConfig,
    },
    Drqn(DrqnLearner),
}

impl Agent {
    pub fn new(kind: AgentKind, obs_dim: usize, num_actions: usize, ppo: &PpoConfig, drqn: &DrqnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            AgentKind::Rppo | AgentKind::Ppo => {
                let net = if kind == AgentKind::Rppo {
                    ActorCritic::rppo(obs_dim, ppo.lstm_hidden, &ppo.head_hidden, num_actions, ppo.shared_lstm, &mut rng)
                } else {
                    ActorCritic::ppo(obs_dim, &ppo.head_hidden, num_actions, &mut rng)
                };
                let adam = Adam::new(
                    AdamConfig {
                        lr: ppo.lr,
                        ..AdamConfig::default()
                    },
                    &net,
                );
                Agent::ActorCritic {
                    net,
                    adam,
                    cfg: ppo.clone(),
                }
            }
            AgentKind::Drqn => {
                let net = DrqnNet::new(obs_dim, drqn.lstm_hidden, &drqn.head_hidden, num_actions, &mut rng);
                Agent::Drqn(DrqnLearner::new(net, drqn.clone()))
            }
        }
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            Agent::ActorCritic { net, .. } if net.is_recurrent() => AgentKind::Rppo,
            Agent::ActorCritic { .. } => AgentKind::Ppo,
            Agent::Drqn(_) => AgentKind::Drqn,
        }
    }

    pub fn arch(&self) -> &'static str {
        match self {
            Agent::ActorCritic { net, .. } => net.arch(),
            Agent::Drqn(_) => DrqnNet::ARCH,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        match self {
            Agent::ActorCritic { net, .. } => Checkpoint::from_params(net.arch(), net),
            Agent::Drqn(l) => Checkpoint::from_params(DrqnNet::ARCH, &l.online),
        }
    }

    /// Loads network weights; the optimizer state starts fresh.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<(), NnError> {
        let arch = self.arch();
        match self {
            Agent::ActorCritic { net, .. } => ck.restore_into(arch, net),
            Agent::Drqn(l) => {
                ck.restore_into(arch, &mut l.online)?;
                l.sync_target();
                Ok(())
            }
        }
    }

    /// Trains for `episodes` episodes, calling `on_episode` after each one.
    /// On a non-finite loss the weights are rolled back to the last good
    /// state before the error is returned.
    pub fn train<E: Environment>(
        &mut self,
        env: E,
        episodes: u64,
        seed: u64,
        mut on_episode: impl FnMut(&TrainProgress, &Agent) -> Result<(), AgentError>,
    ) -> Result<(), AgentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rollout::Runner::<E>::episode_seed(seed, u64::MAX));
        match self {
            Agent::ActorCritic { .. } => {
                let mut runner = Runner::new(env, seed);
                let mut done = 0u64;
                let mut env_steps = 0u64;
                while done < episodes {
                    let Agent::ActorCritic { net, adam, cfg } = self else { unreachable!() };
                    let buf = runner.collect_episodes(net, cfg.horizon, (episodes - done) as usize, cfg.reward_scale, &mut rng)?;
                    env_steps += buf.len() as u64;
                    let snapshot = (net.clone(), adam.clone());
                    let stats = match ppo_update(net, adam, &buf, cfg, &mut rng) {
                        Ok(s) => s,
                        Err(e) => {
                            (*net, *adam) = snapshot;
                            return Err(e);
                        }
                    };
                    for ep in &buf.episodes {
                        done += 1;
                        let progress = TrainProgress {
                            episode: done,
                            env_steps,
                            steps: ep.steps,
                            reward: ep.reward,
                            throughput: ep.throughput,
                            policy_loss: stats.policy_loss,
                            value_loss: stats.value_loss,
                            entropy: stats.entropy,
                            clip_fraction: stats.clip_fraction,
                            q_loss: 0.0,
                            epsilon: 0.0,
                        };
                        on_episode(&progress, self)?;
                    }
                }
                Ok(())
            }
            Agent::Drqn(_) => self.train_drqn(env, episodes, seed, &mut rng, on_episode),
        }
    }

    fn train_drqn<E: Environment>(
        &mut self,
        mut env: E,
        episodes: u64,
        seed: u64,
        rng: &mut ChaCha8Rng,
        mut on_episode: impl FnMut(&TrainProgress, &Agent) -> Result<(), AgentError>,
    ) -> Result<(), AgentError> {
        let capacity = match self {
            Agent::Drqn(l) => l.cfg.replay_capacity,
            _ => unreachable!("drqn training on a non-drqn agent"),
        };
        let mut replay = EpisodeReplay::new(capacity);
        let mut env_steps = 0u64;
        for k in 0..episodes {
            let Agent::Drqn(learner) = self else { unreachable!() };
            let mut obs = env.reset_episode(Runner::<E>::episode_seed(seed, k))?;
            let mut state = learner.online.initial_state();
            let mut ep = Episode {
                obs: vec![obs.clone()],
                actions: Vec::new(),
                rewards: Vec::new(),
                dones: Vec::new(),
            };
            let (mut reward, mut phi, mut phi_n) = (0.0, 0.0, 0usize);
            let (mut loss_sum, mut loss_n) = (0.0, 0usize);
            let mut epsilon;
            loop {
                epsilon = learner.cfg.epsilon(env_steps);
                let (action, next_state) = learner.act(&obs, &state, epsilon, rng);
                let tr = env.step_action(action)?;
                env_steps += 1;
                reward += tr.reward;
                if let Some(p) = tr.throughput {
                    phi += p;
                    phi_n += 1;
                }
                ep.obs.push(tr.obs.clone());
                ep.actions.push(action);
                ep.rewards.push(tr.reward * learner.cfg.reward_scale);
                ep.dones.push(tr.done);
                if env_steps.is_multiple_of(learner.cfg.train_every) {
                    let snapshot = learner.clone();
                    match learner.drqn_step(&replay, rng) {
                        Ok(Some(l)) => {
                            loss_sum += l;
                            loss_n += 1;
                        }
                        Ok(None) => {}
                        Err(e) => {
                            *learner = snapshot;
                            return Err(e);
                        }
                    }
                }
                if tr.done {
                    break;
                }
                obs = tr.obs;
                state = next_state;
            }
            let steps = ep.actions.len();
            replay.push(ep);
            let progress = TrainProgress {
                episode: k + 1,
                env_steps,
                steps,
                reward,
                throughput: (phi_n > 0).then(|| phi / phi_n as f64),
                policy_loss: 0.0,
                value_loss: 0.0,
                entropy: 0.0,
                clip_fraction: 0.0,
                q_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 },
                epsilon,
            };
            on_episode(&progress, self)?;
        }
        Ok(())
    }

    /// Greedy controller over a copy of the current weights.
    pub fn greedy(&self) -> Box<dyn Controller + Send> {
        match self {
            Agent::ActorCritic { net, .. } => Box::new(GreedyActorCritic {
                state: net.initial_state(),
                net: net.clone(),
            }),
            Agent::Drqn(l) => Box::new(GreedyDrqn {
                state: l.online.initial_state(),
                net: l.online.clone(),
            }),
        }
    }
}

struct GreedyActorCritic {
    net: ActorCritic,
    state: RecState,
}

impl Controller for GreedyActorCritic {
    fn reset(&mut self) {
        self.state = self.net.initial_state();
    }

    fn decide(&mut self, obs: &[f64]) -> usize {
        let (logits, _, next) = self.net.step(obs, &self.state);
        self.state = next;
        categorical::argmax(&logits)
    }
}

struct GreedyDrqn {
    net: DrqnNet,
    state: LstmState,
}

impl Controller for GreedyDrqn {
    fn reset(&mut self) {
        self.state = self.net.initial_state();
    }

    fn decide(&mut self, obs: &[f64]) -> usize {
        let (q, next) = self.net.step(obs, &self.state);
        self.state = next;
        categorical::argmax(&q)
    }
}

/// Uniformly random actions from a seeded generator.
pub struct RandomController {
    rng: ChaCha8Rng,
    num_actions: usize,
}

impl RandomController {
    pub fn new(num_actions: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            num_actions,
        }
    }
}

impl Controller for RandomController {
    fn reset(&mut self) {}

    fn decide(&mut self, _obs: &[f64]) -> usize {
        self.rng.random_range(0..self.num_actions)
    }
}
