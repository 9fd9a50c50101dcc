//! Interaction loops: rollouts, training with logging, evaluation.

use crate::env::{Environment, Step};
use crate::replay::{ReplayBuffer, Transition};
use crate::td3::Td3Agent;
use crate::Result;

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
    pub critic_loss_1: Option<f64>,
    pub critic_loss_2: Option<f64>,
    pub actor_loss: Option<f64>,
    pub worst_crlb: Option<f64>,
    pub rate_violations: Option<usize>,
}

/// Episode bookkeeping that survives across training calls.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub state: Vec<f64>,
    pub t: usize,
    pub episode: usize,
    pub total_steps: usize,
}

impl Rollout {
    pub fn start<E: Environment>(env: &mut E) -> Result<Self> {
        Ok(Self { state: env.reset()?, t: 0, episode: 0, total_steps: 0 })
    }

    pub fn step<E: Environment>(&mut self, env: &mut E, action: Vec<f64>) -> Result<(Transition, Step)> {
        let out = env.step(&action)?;
        let transition = Transition {
            state: std::mem::take(&mut self.state),
            action,
            reward: out.reward,
            next_state: out.next_state.clone(),
            terminal: out.terminal,
        };
        self.t += 1;
        self.total_steps += 1;
        if out.terminal || self.t >= env.horizon() {
            self.state = env.reset()?;
            self.t = 0;
            self.episode += 1;
        } else {
            self.state = out.next_state.clone();
        }
        Ok((transition, out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    /// Uniform random actions before the policy takes over.
    pub warmup_steps: usize,
    /// Updates start once the buffer holds this many transitions.
    pub min_buffer: usize,
    pub updates_per_step: usize,
}

impl TrainOptions {
    pub fn new(steps: usize, batch_size: usize) -> Self {
        Self { steps, warmup_steps: 0, min_buffer: batch_size, updates_per_step: 1 }
    }
}

/// Best action seen, by reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Elite {
    pub reward: f64,
    pub action: Vec<f64>,
}

impl Elite {
    pub fn offer(slot: &mut Option<Elite>, reward: f64, action: &[f64]) {
        if slot.as_ref().is_none_or(|e| reward > e.reward) {
            *slot = Some(Elite { reward, action: action.to_vec() });
        }
    }
}

/// The `capacity` best actions seen, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct EliteSet {
    pub capacity: usize,
    pub items: Vec<Elite>,
}

impl EliteSet {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: Vec::with_capacity(capacity + 1) }
    }

    pub fn offer(&mut self, reward: f64, action: &[f64]) {
        if self.capacity == 0 || (self.items.len() == self.capacity && self.items.last().is_some_and(|e| reward <= e.reward)) {
            return;
        }
        let pos = self.items.partition_point(|e| e.reward >= reward);
        self.items.insert(pos, Elite { reward, action: action.to_vec() });
        self.items.truncate(self.capacity);
    }

    pub fn best(&self) -> Option<&Elite> {
        self.items.first()
    }
}

impl Default for EliteSet {
    fn default() -> Self {
        Self::new(8)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainSummary {
    pub log: Vec<LogRow>,
    pub elites: EliteSet,
    pub updates: usize,
}

/// Interacts for `opts.steps` steps, storing every transition and running
/// TD3 updates after each one.
pub fn train<E: Environment>(
    agent: &mut Td3Agent,
    env: &mut E,
    buffer: &mut ReplayBuffer,
    rollout: &mut Rollout,
    opts: &TrainOptions,
) -> Result<TrainSummary> {
    let mut summary = TrainSummary::default();
    let noise = agent.config.exploration_noise;
    for _ in 0..opts.steps {
        let action = if rollout.total_steps < opts.warmup_steps {
            agent.random_action()
        } else {
            agent.select_action(&rollout.state, noise)
        };
        let (episode, t) = (rollout.episode, rollout.t);
        let (transition, out) = rollout.step(env, action)?;
        summary.elites.offer(out.reward, &transition.action);
        buffer.push(transition)?;
        let mut row = LogRow {
            episode,
            step: t,
            reward: out.reward,
            critic_loss_1: None,
            critic_loss_2: None,
            actor_loss: None,
            worst_crlb: out.crlb,
            rate_violations: out.rate_violations,
        };
        if buffer.len() >= opts.min_buffer.max(1) {
            for _ in 0..opts.updates_per_step {
                if let Some(stats) = agent.update_from(buffer) {
                    summary.updates += 1;
                    row.critic_loss_1 = Some(stats.critic_loss[0]);
                    row.critic_loss_2 = Some(stats.critic_loss[1]);
                    row.actor_loss = stats.actor_loss.or(row.actor_loss);
                }
            }
        }
        summary.log.push(row);
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean_reward: f64,
    pub rewards: Vec<f64>,
    pub elite: Option<Elite>,
}

/// Noise-free rollouts of `episodes` full episodes.
pub fn evaluate<E: Environment>(agent: &mut Td3Agent, env: &mut E, episodes: usize) -> Result<EvalSummary> {
    let mut rewards = Vec::new();
    let mut elite = None;
    for _ in 0..episodes {
        let mut state = env.reset()?;
        for _ in 0..env.horizon() {
            let action = agent.select_action(&state, 0.0);
            let out = env.step(&action)?;
            Elite::offer(&mut elite, out.reward, &action);
            rewards.push(out.reward);
            if out.terminal {
                break;
            }
            state = out.next_state;
        }
    }
    let mean_reward = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
    Ok(EvalSummary { mean_reward, rewards, elite })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ToyEnv;
    use crate::td3::Td3Config;

    #[test]
    fn rollout_resets_at_terminal_steps() {
        let mut env = ToyEnv::default();
        let mut r = Rollout::start(&mut env).unwrap();
        for _ in 0..3 {
            let (t, _) = r.step(&mut env, vec![0.5]).unwrap();
            assert!(t.terminal);
            assert_eq!(t.reward, 0.0);
        }
        assert_eq!((r.episode, r.t, r.total_steps), (3, 0, 3));
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let cfg = Td3Config { hidden: vec![16, 16], batch_size: 16, ..Td3Config::default() };
            let mut agent = Td3Agent::new(1, 1, cfg, 3).unwrap();
            let mut env = ToyEnv::default();
            let mut buf = ReplayBuffer::new(1000);
            let mut roll = Rollout::start(&mut env).unwrap();
            let opts = TrainOptions { warmup_steps: 20, ..TrainOptions::new(100, 16) };
            let s = train(&mut agent, &mut env, &mut buf, &mut roll, &opts).unwrap();
            (s.log, agent.actor.to_flat())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn elite_set_keeps_the_best_in_order() {
        let mut e = EliteSet::new(3);
        for (i, r) in [1.0, 5.0, -2.0, 3.0, 4.0, 0.0].into_iter().enumerate() {
            e.offer(r, &[i as f64]);
        }
        let kept: Vec<f64> = e.items.iter().map(|x| x.reward).collect();
        assert_eq!(kept, vec![5.0, 4.0, 3.0]);
        assert_eq!(e.best().unwrap().action, vec![1.0]);
    }
}
