//! Twin-delayed deep deterministic policy gradient.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mlp::{Activation, Adam, Grads, Mlp};
use crate::replay::{Batch, ReplayBuffer};
use crate::{MetaRlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Config {
    pub actor_lr: f64,
    pub critic_lrs: [f64; 2],
    pub gamma: f64,
    /// Polyak weight of the critic targets.
    pub tau_critic: f64,
    /// Polyak weight of the actor target.
    pub tau_actor: f64,
    pub policy_delay: usize,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub batch_size: usize,
    pub exploration_noise: f64,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lrs: [1e-3, 1e-3],
            gamma: 0.99,
            tau_critic: 0.005,
            tau_actor: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            batch_size: 256,
            exploration_noise: 0.1,
            buffer_capacity: 100_000,
            hidden: vec![256, 256],
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        if !unit_open(self.actor_lr) || !self.critic_lrs.iter().all(|v| unit_open(*v)) {
            return Err(MetaRlError::Config("learning rates must lie in (0,1)".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(MetaRlError::Config(format!("gamma must lie in (0,1], got {}", self.gamma)));
        }
        for (name, v) in [("tau_critic", self.tau_critic), ("tau_actor", self.tau_actor)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetaRlError::Config(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if self.policy_delay == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(MetaRlError::Config("policy_delay, batch_size and buffer_capacity must be ≥ 1".into()));
        }
        if self.target_noise < 0.0 || self.noise_clip < 0.0 || self.exploration_noise < 0.0 {
            return Err(MetaRlError::Config("noise scales must be non-negative".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(MetaRlError::Config("hidden widths must be non-empty and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: [f64; 2],
    pub actor_loss: Option<f64>,
}

/// Gradients of the three online networks, as used by meta-training.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGrads {
    pub actor: Grads,
    pub critics: [Grads; 2],
    pub critic_loss: [f64; 2],
    pub actor_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub config: Td3Config,
    pub state_dim: usize,
    pub action_dim: usize,
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub actor_target: Mlp,
    pub critic_targets: [Mlp; 2],
    pub actor_opt: Adam,
    pub critic_opts: [Adam; 2],
    pub rng: ChaCha8Rng,
    /// Critic updates performed so far.
    pub updates: u64,
}

fn join(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[states, actions]).expect("matching batch sizes")
}

impl Td3Agent {
    pub fn new(state_dim: usize, action_dim: usize, config: Td3Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = |input: usize, output: usize| {
            let mut w = vec![input];
            w.extend(&config.hidden);
            w.push(output);
            w
        };
        let actor = Mlp::new(&widths(state_dim, action_dim), Activation::Relu, Activation::Tanh, &mut rng);
        let critics = [0, 1].map(|_| {
            Mlp::new(&widths(state_dim + action_dim, 1), Activation::Relu, Activation::Identity, &mut rng)
        });
        let actor_opt = Adam::new(actor.num_params(), config.actor_lr);
        let critic_opts = [0, 1].map(|i| Adam::new(critics[i].num_params(), config.critic_lrs[i]));
        Ok(Self {
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            actor_opt,
            critic_opts,
            rng,
            updates: 0,
            config,
            state_dim,
            action_dim,
        })
    }

    /// Deterministic policy output plus clipped Gaussian exploration noise.
    pub fn select_action(&mut self, state: &[f64], noise_std: f64) -> Vec<f64> {
        let mut a = self.actor.forward_one(state);
        if noise_std > 0.0 {
            let normal = Normal::new(0.0, noise_std).expect("finite std");
            for v in &mut a {
                *v += normal.sample(&mut self.rng);
            }
        }
        a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        a
    }

    pub fn random_action(&mut self) -> Vec<f64> {
        (0..self.action_dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
    }

    /// Clipped target-smoothing noise for a batch.
    pub fn draw_target_noise(&mut self, rows: usize) -> Array2<f64> {
        let (sigma, clip) = (self.config.target_noise, self.config.noise_clip);
        if sigma == 0.0 {
            return Array2::zeros((rows, self.action_dim));
        }
        let normal = Normal::new(0.0, sigma).expect("finite std");
        Array2::from_shape_fn((rows, self.action_dim), |_| normal.sample(&mut self.rng).clamp(-clip, clip))
    }

    /// `clip(μ̄(s′) + noise, −1, 1)`.
    pub fn smoothed_target_actions(&self, next_states: ArrayView2<f64>, noise: &Array2<f64>) -> Array2<f64> {
        let mut a = self.actor_target.forward(next_states) + noise;
        a.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        a
    }

    /// `y = r + γ·(1−done)·min(Q̄₁, Q̄₂)(s′, ã)`.
    pub fn targets(&self, batch: &Batch, noise: &Array2<f64>) -> Vec<f64> {
        let next_a = self.smoothed_target_actions(batch.next_states.view(), noise);
        let input = join(batch.next_states.view(), next_a.view());
        let q1 = self.critic_targets[0].forward(input.view());
        let q2 = self.critic_targets[1].forward(input.view());
        (0..batch.len())
            .map(|i| batch.rewards[i] + self.config.gamma * batch.not_done[i] * q1[(i, 0)].min(q2[(i, 0)]))
            .collect()
    }

    /// Mean squared residual of critic `idx` against `y`, with its gradient.
    pub fn critic_loss_grads(&self, idx: usize, batch: &Batch, y: &[f64]) -> (f64, Grads) {
        let input = join(batch.states.view(), batch.actions.view());
        let (q, cache) = self.critics[idx].forward_cached(input.view());
        let n = batch.len() as f64;
        let resid: Vec<f64> = (0..batch.len()).map(|i| q[(i, 0)] - y[i]).collect();
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
        let dq = Array2::from_shape_fn((batch.len(), 1), |(i, _)| 2.0 * resid[i] / n);
        (loss, self.critics[idx].backward(&cache, dq).0)
    }

    pub fn critic_loss(&self, idx: usize, batch: &Batch, y: &[f64]) -> f64 {
        self.critic_loss_grads(idx, batch, y).0
    }

    /// `−mean Q₁(s, μ(s))` and its gradient with respect to the actor.
    pub fn actor_loss_grads(&self, batch: &Batch) -> (f64, Grads) {
        let (a, actor_cache) = self.actor.forward_cached(batch.states.view());
        let input = join(batch.states.view(), a.view());
        let (q, critic_cache) = self.critics[0].forward_cached(input.view());
        let n = batch.len() as f64;
        let loss = -q.sum() / n;
        let dq = Array2::from_elem((batch.len(), 1), -1.0 / n);
        let (_, dinput) = self.critics[0].backward(&critic_cache, dq);
        let da = dinput.slice(s![.., self.state_dim..]).to_owned();
        (loss, self.actor.backward(&actor_cache, da).0)
    }

    pub fn soft_update_targets(&mut self) {
        self.actor_target.soft_update_from(&self.actor, self.config.tau_actor);
        for i in 0..2 {
            self.critic_targets[i].soft_update_from(&self.critics[i], self.config.tau_critic);
        }
    }

    /// One TD3 step on `batch`; the actor and the targets move every
    /// `policy_delay`-th call.
    pub fn update(&mut self, batch: &Batch) -> UpdateStats {
        let noise = self.draw_target_noise(batch.len());
        self.update_with_noise(batch, &noise)
    }

    pub fn update_with_noise(&mut self, batch: &Batch, noise: &Array2<f64>) -> UpdateStats {
        let y = self.targets(batch, noise);
        let mut critic_loss = [0.0; 2];
        for i in 0..2 {
            let (loss, g) = self.critic_loss_grads(i, batch, &y);
            critic_loss[i] = loss;
            self.critic_opts[i].step(&mut self.critics[i], &g);
        }
        self.updates += 1;
        let mut actor_loss = None;
        if self.updates % self.config.policy_delay as u64 == 0 {
            let (loss, g) = self.actor_loss_grads(batch);
            self.actor_opt.step(&mut self.actor, &g);
            self.soft_update_targets();
            actor_loss = Some(loss);
        }
        UpdateStats { critic_loss, actor_loss }
    }

    /// Samples a batch and updates; `None` (and a warning) on an empty buffer.
    pub fn update_from(&mut self, buffer: &ReplayBuffer) -> Option<UpdateStats> {
        let batch_size = self.config.batch_size;
        match buffer.sample(&mut self.rng, batch_size) {
            Some(batch) => Some(self.update(&batch)),
            None => {
                log::warn!("TD3 update skipped: replay buffer is empty");
                None
            }
        }
    }

    /// Losses and gradients at the current weights, nothing applied.
    pub fn gradients(&mut self, batch: &Batch) -> AgentGrads {
        let noise = self.draw_target_noise(batch.len());
        let y = self.targets(batch, &noise);
        let (l1, g1) = self.critic_loss_grads(0, batch, &y);
        let (l2, g2) = self.critic_loss_grads(1, batch, &y);
        let (la, ga) = self.actor_loss_grads(batch);
        AgentGrads { actor: ga, critics: [g1, g2], critic_loss: [l1, l2], actor_loss: la }
    }

    /// Copies the online weights into the targets.
    pub fn sync_targets(&mut self) {
        self.actor_target = self.actor.clone();
        self.critic_targets = self.critics.clone();
    }

    /// Fresh optimiser state with the given rates `[critic₁, critic₂, actor]`.
    pub fn reset_optimizers(&mut self, lrs: [f64; 3]) {
        self.critic_opts = [0, 1].map(|i| Adam::new(self.critics[i].num_params(), lrs[i]));
        self.actor_opt = Adam::new(self.actor.num_params(), lrs[2]);
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        let net = |m: &Mlp| NetworkSnapshot {
            widths: m.widths(),
            activations: m.layers.iter().map(|l| l.act).collect(),
            params: m.to_flat(),
        };
        AgentSnapshot {
            config: self.config.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            networks: vec![
                net(&self.actor),
                net(&self.critics[0]),
                net(&self.critics[1]),
                net(&self.actor_target),
                net(&self.critic_targets[0]),
                net(&self.critic_targets[1]),
            ],
            optimizers: vec![self.actor_opt.clone(), self.critic_opts[0].clone(), self.critic_opts[1].clone()],
            rng: RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
            updates: self.updates,
        }
    }

    pub fn restore(snap: &AgentSnapshot) -> Result<Self> {
        snap.config.validate()?;
        if snap.networks.len() != 6 || snap.optimizers.len() != 3 {
            return Err(MetaRlError::Checkpoint("expected six networks and three optimisers".into()));
        }
        let mut nets = Vec::with_capacity(6);
        for (i, n) in snap.networks.iter().enumerate() {
            if n.activations.len() + 1 != n.widths.len() {
                return Err(MetaRlError::Checkpoint(format!("network {i}: widths and activations disagree")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut m = Mlp::new(&n.widths, Activation::Identity, Activation::Identity, &mut rng);
            for (layer, act) in m.layers.iter_mut().zip(&n.activations) {
                layer.act = *act;
            }
            m.set_flat(&n.params).map_err(|e| MetaRlError::Checkpoint(format!("network {i}: {e}")))?;
            nets.push(m);
        }
        let expected_in = [snap.state_dim, snap.state_dim + snap.action_dim];
        if nets[0].input_dim() != expected_in[0]
            || nets[0].output_dim() != snap.action_dim
            || nets[1].input_dim() != expected_in[1]
        {
            return Err(MetaRlError::Checkpoint("network shapes do not match the state/action sizes".into()));
        }
        for (opt, net) in snap.optimizers.iter().zip([&nets[0], &nets[1], &nets[2]]) {
            if opt.m.len() != net.num_params() || opt.v.len() != net.num_params() {
                return Err(MetaRlError::Checkpoint("optimiser state has the wrong length".into()));
            }
        }
        let mut rng = ChaCha8Rng::from_seed(snap.rng.seed);
        rng.set_stream(snap.rng.stream);
        rng.set_word_pos(snap.rng.word_pos);
        let mut it = nets.into_iter();
        let mut next = || it.next().expect("six networks");
        Ok(Self {
            config: snap.config.clone(),
            state_dim: snap.state_dim,
            action_dim: snap.action_dim,
            actor: next(),
            critics: [next(), next()],
            actor_target: next(),
            critic_targets: [next(), next()],
            actor_opt: snap.optimizers[0].clone(),
            critic_opts: [snap.optimizers[1].clone(), snap.optimizers[2].clone()],
            rng,
            updates: snap.updates,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Everything needed to resume an agent bit-exactly. Networks are ordered
/// actor, critic 1, critic 2, then the three targets in the same order;
/// optimisers are actor, critic 1, critic 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub config: Td3Config,
    pub state_dim: usize,
    pub action_dim: usize,
    pub networks: Vec<NetworkSnapshot>,
    pub optimizers: Vec<Adam>,
    pub rng: RngState,
    pub updates: u64,
}
