//! Actor-critic networks: the recurrent variant puts an LSTM in front of
//! each head, the feed-forward variant feeds observations straight in.

use faas_lab_nn::params::prefixed;
use faas_lab_nn::{Activation, LstmCell, LstmState, LstmStepCache, Matrix, Mlp, MlpCache, Params};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Recurrent state of every LSTM in a network, one entry per LSTM in block
/// order. Empty for feed-forward networks.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RecState {
    pub lstm: Vec<LstmState>,
}

impl RecState {
    pub fn is_empty(&self) -> bool {
        self.lstm.is_empty()
    }

    /// Stacks single-sequence states into one batch.
    pub fn stack(states: &[&RecState]) -> Self {
        let k = states.first().map_or(0, |s| s.lstm.len());
        Self {
            lstm: (0..k)
                .map(|i| LstmState::stack(&states.iter().map(|s| &s.lstm[i]).collect::<Vec<_>>()))
                .collect(),
        }
    }

    /// Largest absolute element-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &RecState) -> f64 {
        self.lstm
            .iter()
            .zip(&other.lstm)
            .map(|(a, b)| a.h.max_abs_diff(&b.h).max(a.c.max_abs_diff(&b.c)))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// Separate LSTMs for actor and critic.
    Rppo,
    /// One LSTM feeding both heads.
    RppoShared,
    Ppo,
}

impl ArchKind {
    pub fn tag(self) -> &'static str {
        match self {
            ArchKind::Rppo => "rppo",
            ArchKind::RppoShared => "rppo-shared",
            ArchKind::Ppo => "ppo",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    pub kind: ArchKind,
    pub actor_lstm: Option<LstmCell>,
    pub critic_lstm: Option<LstmCell>,
    pub actor: Mlp,
    pub critic: Mlp,
}

/// Forward caches for a batch of equal-length sequences.
pub struct SeqCache {
    steps: usize,
    batch: usize,
    actor_lstm: Option<Vec<LstmStepCache>>,
    critic_lstm: Option<Vec<LstmStepCache>>,
    actor: MlpCache,
    critic: MlpCache,
}

/// Outputs for `steps × batch` samples, row `t * batch + b`.
pub struct SeqOutput {
    pub logits: Matrix,
    pub values: Matrix,
    pub cache: SeqCache,
}

fn stack_rows(ms: &[Matrix]) -> Matrix {
    let cols = ms.first().map_or(0, |m| m.cols());
    let rows: usize = ms.iter().map(|m| m.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for m in ms {
        data.extend_from_slice(m.data());
    }
    Matrix::from_vec(rows, cols, data)
}

fn split_rows(m: &Matrix, steps: usize, batch: usize) -> Vec<Matrix> {
    (0..steps)
        .map(|t| Matrix::from_vec(batch, m.cols(), m.data()[t * batch * m.cols()..(t + 1) * batch * m.cols()].to_vec()))
        .collect()
}

impl ActorCritic {
    /// Recurrent actor-critic. Heads are tanh MLPs; the policy head starts
    /// near zero so the initial policy is close to uniform.
    pub fn rppo<R: Rng + ?Sized>(
        obs_dim: usize,
        lstm_hidden: usize,
        head_hidden: &[usize],
        num_actions: usize,
        shared: bool,
        rng: &mut R,
    ) -> Self {
        let actor_lstm = LstmCell::init(obs_dim, lstm_hidden, rng);
        let critic_lstm = (!shared).then(|| LstmCell::init(obs_dim, lstm_hidden, rng));
        Self {
            kind: if shared { ArchKind::RppoShared } else { ArchKind::Rppo },
            actor_lstm: Some(actor_lstm),
            critic_lstm,
            actor: Mlp::init(lstm_hidden, head_hidden, num_actions, Activation::Tanh, 0.01, rng),
            critic: Mlp::init(lstm_hidden, head_hidden, 1, Activation::Tanh, 1.0, rng),
        }
    }

    pub fn ppo<R: Rng + ?Sized>(obs_dim: usize, head_hidden: &[usize], num_actions: usize, rng: &mut R) -> Self {
        Self {
            kind: ArchKind::Ppo,
            actor_lstm: None,
            critic_lstm: None,
            actor: Mlp::init(obs_dim, head_hidden, num_actions, Activation::Tanh, 0.01, rng),
            critic: Mlp::init(obs_dim, head_hidden, 1, Activation::Tanh, 1.0, rng),
        }
    }

    pub fn arch(&self) -> &'static str {
        self.kind.tag()
    }

    pub fn num_actions(&self) -> usize {
        self.actor.output_size()
    }

    pub fn is_recurrent(&self) -> bool {
        self.actor_lstm.is_some()
    }

    fn lstms(&self) -> Vec<&LstmCell> {
        self.actor_lstm.iter().chain(self.critic_lstm.iter()).collect()
    }

    pub fn initial_state(&self) -> RecState {
        RecState {
            lstm: self.lstms().iter().map(|c| c.initial_state(1)).collect(),
        }
    }

    /// One step for a single observation: `(logits, value, next state)`.
    pub fn step(&self, obs: &[f64], state: &RecState) -> (Vec<f64>, f64, RecState) {
        let x = Matrix::row_vector(obs);
        let mut next = RecState::default();
        let mut lstm_idx = 0;
        let mut run = |cell: &LstmCell| {
            let (st, _) = cell.step(&x, &state.lstm[lstm_idx]);
            lstm_idx += 1;
            let h = st.h.clone();
            next.lstm.push(st);
            h
        };
        let actor_in = self.actor_lstm.as_ref().map_or_else(|| x.clone(), &mut run);
        let critic_in = match (&self.critic_lstm, &self.actor_lstm) {
            (Some(cell), _) => run(cell),
            (None, Some(_)) => actor_in.clone(),
            (None, None) => x.clone(),
        };
        let logits = self.actor.forward(&actor_in).into_vec();
        let value = self.critic.forward(&critic_in).get(0, 0);
        (logits, value, next)
    }

    /// Forward over `obs[t]` (`batch × obs_dim` each) from `init`.
    pub fn forward_seq(&self, obs: &[Matrix], init: &RecState) -> SeqOutput {
        let steps = obs.len();
        let batch = obs.first().map_or(0, |m| m.rows());
        let mut lstm_idx = 0;
        let mut run = |cell: &LstmCell| {
            let (hs, _, caches) = cell.forward_sequence(obs, &init.lstm[lstm_idx]);
            lstm_idx += 1;
            (stack_rows(&hs), caches)
        };
        let flat_obs = stack_rows(obs);
        let (actor_in, actor_caches) = match &self.actor_lstm {
            Some(cell) => {
                let (x, c) = run(cell);
                (x, Some(c))
            }
            None => (flat_obs.clone(), None),
        };
        let (critic_in, critic_caches) = match &self.critic_lstm {
            Some(cell) => {
                let (x, c) = run(cell);
                (x, Some(c))
            }
            None if self.actor_lstm.is_some() => (actor_in.clone(), None),
            None => (flat_obs, None),
        };
        let actor = self.actor.forward_cached(&actor_in);
        let critic = self.critic.forward_cached(&critic_in);
        SeqOutput {
            logits: actor.output().clone(),
            values: critic.output().clone(),
            cache: SeqCache {
                steps,
                batch,
                actor_lstm: actor_caches,
                critic_lstm: critic_caches,
                actor,
                critic,
            },
        }
    }

    /// Accumulates gradients of a loss with the given output gradients.
    pub fn backward_seq(&self, cache: &SeqCache, dlogits: &Matrix, dvalues: &Matrix, grads: &mut ActorCritic) {
        let d_actor_in = self.actor.backward(&cache.actor, dlogits, &mut grads.actor);
        let d_critic_in = self.critic.backward(&cache.critic, dvalues, &mut grads.critic);
        let (steps, batch) = (cache.steps, cache.batch);
        match (&self.actor_lstm, &self.critic_lstm) {
            (Some(a), Some(c)) => {
                let ga = grads.actor_lstm.as_mut().expect("matching gradient shape");
                a.bptt(cache.actor_lstm.as_ref().expect("cached"), &split_rows(&d_actor_in, steps, batch), None, ga);
                let gc = grads.critic_lstm.as_mut().expect("matching gradient shape");
                c.bptt(cache.critic_lstm.as_ref().expect("cached"), &split_rows(&d_critic_in, steps, batch), None, gc);
            }
            (Some(a), None) => {
                let mut d = d_actor_in;
                d.add_assign(&d_critic_in);
                let ga = grads.actor_lstm.as_mut().expect("matching gradient shape");
                a.bptt(cache.actor_lstm.as_ref().expect("cached"), &split_rows(&d, steps, batch), None, ga);
            }
            _ => {}
        }
    }
}

impl Params for ActorCritic {
    fn named_blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        if let Some(c) = &self.actor_lstm {
            out.extend(prefixed("actor_lstm", c.named_blocks()));
        }
        if let Some(c) = &self.critic_lstm {
            out.extend(prefixed("critic_lstm", c.named_blocks()));
        }
        out.extend(prefixed("actor", self.actor.named_blocks()));
        out.extend(prefixed("critic", self.critic.named_blocks()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        if let Some(c) = &mut self.actor_lstm {
            out.extend(c.blocks_mut());
        }
        if let Some(c) = &mut self.critic_lstm {
            out.extend(c.blocks_mut());
        }
        out.extend(self.actor.blocks_mut());
        out.extend(self.critic.blocks_mut());
        out
    }
}
