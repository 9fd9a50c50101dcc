//! One optimisation run: meta-train over scenario variants, adapt to the
//! target scenario, then score the best designs with a full worst-case solve.

use std::time::Instant;

use cfisac_core::{build_scenario, ConstraintId, ScenarioConfig};
use cfisac_metarl::meta::{derive_seed, meta_adapt, meta_train, Adapted, MetaOutcome};
use cfisac_metarl::train::{evaluate, LogRow};
use cfisac_metarl::{CfIsacEnv, EnvConfig, Environment, Td3Agent, TsMode};

use crate::config::{Baseline, ExperimentConfig};
use crate::error::{HarnessError, Result};

/// Scenario of meta-training task `task`. Task 0 is the target scenario
/// itself; the others redraw users, paths and symbols.
pub fn task_scenario(base: &ScenarioConfig, seed: u64, task: usize) -> ScenarioConfig {
    if task == 0 {
        return base.clone();
    }
    ScenarioConfig { seed: derive_seed(base.seed, seed + 1, task as u64), ..base.clone() }
}

pub fn make_env(scenario: &ScenarioConfig, env: &EnvConfig, gamma: f64) -> Result<CfIsacEnv> {
    Ok(CfIsacEnv::new(build_scenario(scenario)?, env.clone(), gamma)?)
}

/// Environment settings used for training under `baseline`.
pub fn training_env(cfg: &ExperimentConfig, baseline: Baseline) -> EnvConfig {
    let mut env = cfg.env.clone();
    baseline.configure(&mut env);
    env
}

pub fn run_meta(cfg: &ExperimentConfig, baseline: Baseline, seed: u64) -> Result<MetaOutcome> {
    let env = training_env(cfg, baseline);
    let out = meta_train(
        |task| {
            let sc = build_scenario(&task_scenario(&cfg.scenario, seed, task))?;
            CfIsacEnv::new(sc, env.clone(), cfg.td3.gamma)
        },
        &cfg.meta,
        &cfg.td3,
        seed,
    )?;
    Ok(out)
}

pub fn run_adapt(cfg: &ExperimentConfig, baseline: Baseline, meta: &Td3Agent, seed: u64) -> Result<Adapted> {
    let mut env = make_env(&cfg.scenario, &training_env(cfg, baseline), cfg.td3.gamma)?;
    if env.state_dim() != meta.state_dim || env.action_dim() != meta.action_dim {
        return Err(HarnessError::Config(format!(
            "policy expects state/action dims {}/{}, scenario gives {}/{}",
            meta.state_dim,
            meta.action_dim,
            env.state_dim(),
            env.action_dim()
        )));
    }
    Ok(meta_adapt(meta, &mut env, &cfg.meta, derive_seed(seed, 0xada9, 0))?)
}

/// A design scored under the worst-case TS error.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignScore {
    pub action: Vec<f64>,
    pub reward: f64,
    pub worst_crlb: f64,
    pub nominal_crlb: f64,
    pub r_sum: f64,
    pub violations: usize,
    pub rate_violations: usize,
}

/// Scores every candidate with a full solve and keeps the highest reward
/// (ties go to the earlier candidate). The ideal-TS baseline ranks by its
/// zero-TS reward, since it never sees the TS error.
pub fn score_candidates(cfg: &ExperimentConfig, baseline: Baseline, candidates: &[Vec<f64>]) -> Result<DesignScore> {
    let env_cfg = training_env(cfg, baseline);
    let rank_ideal = env_cfg.ts_mode == TsMode::Ideal;
    let mut env = make_env(&cfg.scenario, &env_cfg, cfg.td3.gamma)?;
    let mut best: Option<DesignScore> = None;
    for action in candidates {
        let full = env.evaluate(action, TsMode::Full)?;
        let ideal = env.evaluate(action, TsMode::Ideal)?;
        let score = DesignScore {
            action: action.clone(),
            reward: if rank_ideal { ideal.reward } else { full.reward },
            worst_crlb: full.crlb,
            nominal_crlb: ideal.crlb,
            r_sum: full.rates.sum,
            violations: full.constraints.num_violated(),
            rate_violations: full.constraints.get(ConstraintId::Rate).count,
        };
        if best.as_ref().is_none_or(|b| score.reward > b.reward) {
            best = Some(score);
        }
    }
    best.ok_or_else(|| HarnessError::Runtime("no candidate designs to score".into()))
}

/// The greedy policy's actions over `episodes` episodes plus the best
/// `k` training actions.
pub fn candidate_actions(
    cfg: &ExperimentConfig,
    baseline: Baseline,
    agent: &Td3Agent,
    elites: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut env = make_env(&cfg.scenario, &training_env(cfg, baseline), cfg.td3.gamma)?;
    let mut policy = agent.clone();
    let eval = evaluate(&mut policy, &mut env, cfg.eval.episodes)?;
    let mut out: Vec<Vec<f64>> = elites.iter().take(cfg.eval.candidates).cloned().collect();
    if let Some(e) = eval.elite {
        out.push(e.action);
    }
    Ok((out, eval.mean_reward))
}

#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub design: DesignScore,
    pub eval_reward: f64,
    pub seconds: f64,
    pub agent: Td3Agent,
    pub meta_agent: Td3Agent,
    pub meta: MetaOutcome,
    pub adapt_log: Vec<LogRow>,
}

/// Meta-train, adapt and score for one configuration and seed.
pub fn run_point(cfg: &ExperimentConfig, baseline: Baseline, seed: u64) -> Result<PointOutcome> {
    let start = Instant::now();
    let meta = run_meta(cfg, baseline, seed)?;
    let adapted = run_adapt(cfg, baseline, &meta.agent, seed)?;
    let elites: Vec<Vec<f64>> = adapted.summary.elites.items.iter().map(|e| e.action.clone()).collect();
    let (candidates, eval_reward) = candidate_actions(cfg, baseline, &adapted.agent, &elites)?;
    let design = score_candidates(cfg, baseline, &candidates)?;
    log::info!(
        "{baseline} seed {seed}: worst CRLB {:.4e}, nominal {:.4e}, {:.1}s",
        design.worst_crlb,
        design.nominal_crlb,
        start.elapsed().as_secs_f64()
    );
    Ok(PointOutcome {
        design,
        eval_reward,
        seconds: start.elapsed().as_secs_f64(),
        agent: adapted.agent,
        meta_agent: meta.agent.clone(),
        meta,
        adapt_log: adapted.summary.log,
    })
}
