//! Shared TD3 runs on the one-step toy bandit.
#![allow(dead_code)]

use cfisac_metarl::replay::{ReplayBuffer, Transition};
use cfisac_metarl::train::evaluate;
use cfisac_metarl::{Environment, Td3Agent, Td3Config, ToyEnv};

pub fn toy_config() -> Td3Config {
    Td3Config { hidden: vec![32, 32], batch_size: 32, gamma: 0.9, exploration_noise: 0.2, ..Td3Config::default() }
}

/// What a toy run reports besides the final policy quality.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub eval_reward: f64,
    /// Largest deviation of any target weight from `τ·online + (1−τ)·old`
    /// over all delayed updates.
    pub convex_err: f64,
    pub delayed_updates: usize,
    pub smoothed_in_bounds: bool,
}

fn max_dev(target: &[f64], online: &[f64], old: &[f64], tau: f64) -> f64 {
    target
        .iter()
        .zip(online)
        .zip(old)
        .map(|((t, w), o)| (t - (tau * w + (1.0 - tau) * o)).abs())
        .fold(0.0, f64::max)
}

/// Random actions for the first 100 steps, then the noisy policy; one
/// update per step until `updates` updates have run.
pub fn toy_td3(seed: u64, updates: usize) -> ToyRun {
    let cfg = toy_config();
    let mut env = ToyEnv::default();
    let mut agent = Td3Agent::new(1, 1, cfg.clone(), seed).unwrap();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut run = ToyRun { eval_reward: f64::NAN, convex_err: 0.0, delayed_updates: 0, smoothed_in_bounds: true };
    let mut done = 0;
    let mut step = 0;
    while done < updates {
        let state = env.reset().unwrap();
        let action = if step < 100 { agent.random_action() } else { agent.select_action(&state, cfg.exploration_noise) };
        let out = env.step(&action).unwrap();
        buffer
            .push(Transition { state, action, reward: out.reward, next_state: out.next_state, terminal: out.terminal })
            .unwrap();
        step += 1;
        if buffer.len() < cfg.batch_size {
            continue;
        }
        let batch = buffer.sample(&mut agent.rng, cfg.batch_size).unwrap();
        let noise = agent.draw_target_noise(batch.len());
        let smoothed = agent.smoothed_target_actions(batch.next_states.view(), &noise);
        run.smoothed_in_bounds &= smoothed.iter().all(|a| (-1.0..=1.0).contains(a));
        let old = (
            agent.actor_target.to_flat(),
            agent.critic_targets[0].to_flat(),
            agent.critic_targets[1].to_flat(),
        );
        let stats = agent.update_with_noise(&batch, &noise);
        done += 1;
        if stats.actor_loss.is_some() {
            run.delayed_updates += 1;
            let (ta, tc) = (cfg.tau_actor, cfg.tau_critic);
            let e = max_dev(&agent.actor_target.to_flat(), &agent.actor.to_flat(), &old.0, ta)
                .max(max_dev(&agent.critic_targets[0].to_flat(), &agent.critics[0].to_flat(), &old.1, tc))
                .max(max_dev(&agent.critic_targets[1].to_flat(), &agent.critics[1].to_flat(), &old.2, tc));
            run.convex_err = run.convex_err.max(e);
        }
    }
    run.eval_reward = evaluate(&mut agent, &mut env, 10).unwrap().mean_reward;
    run
}
