//! The joint beamforming / antenna-position problem as an MDP.
//!
//! One action vector drives every AP: `K·N_t` complex beam weights (real and
//! imaginary parts interleaved), then `N_t` transmit and `N_r` receive
//! element positions. Positions and power are made feasible while decoding,
//! so only the rate floor can be violated.

use std::str::FromStr;

use cfisac_core::crlb::{phasor_from_ts, SensingModel, TsErrorMatrix};
use cfisac_core::manifold::{default_starts, worst_case_from_starts, worst_case_with_model};
use cfisac_core::metrics::{audit_constraints, weighted_sum_rate, BeamformingSet, ConstraintReport, RateReport};
use cfisac_core::{CommChannels, Complex64, MaLayout, ManifoldSolverConfig, Scenario};
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Step};
use crate::{MetaRlError, Result};

/// How the TS error inside the reward is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TsMode {
    /// Full multi-start worst-case solve on every step.
    Full,
    /// Warm-started, iteration-capped solve, refreshed periodically.
    #[default]
    Cached,
    /// Zero TS error.
    Ideal,
}

impl FromStr for TsMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "cached" => Ok(Self::Cached),
            "ideal" => Ok(Self::Ideal),
            other => Err(format!("unknown TS mode `{other}` (expected full, cached or ideal)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub horizon: usize,
    /// Penalty per violated constraint family.
    pub violation_penalty: f64,
    /// The CRLB is divided by this before entering the reward (m²).
    pub crlb_unit: f64,
    /// Lower clamp of the reward; also the reward of a singular FIM.
    pub reward_floor: f64,
    pub ts_mode: TsMode,
    /// Steps between full refreshes of the cached worst case.
    pub cache_refresh: usize,
    pub cached_cg_iters: usize,
    /// Freeze every array at uniform `D₀` spacing and ignore position actions.
    pub fixed_positions: bool,
    pub solver: ManifoldSolverConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 64,
            violation_penalty: 10.0,
            crlb_unit: 1.0,
            reward_floor: -200.0,
            ts_mode: TsMode::Cached,
            cache_refresh: 16,
            cached_cg_iters: 20,
            fixed_positions: false,
            solver: ManifoldSolverConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.cache_refresh == 0 || self.cached_cg_iters == 0 {
            return Err(MetaRlError::Config("horizon, cache_refresh and cached_cg_iters must be ≥ 1".into()));
        }
        if !(self.crlb_unit > 0.0) || !(self.violation_penalty >= 0.0) || !self.reward_floor.is_finite() {
            return Err(MetaRlError::Config("crlb_unit must be positive, the penalty non-negative, the floor finite".into()));
        }
        self.solver.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpSpec {
    pub num_users: usize,
    pub action_dim: usize,
    pub state_dim: usize,
    pub horizon: usize,
    pub gamma: f64,
}

impl MdpSpec {
    pub fn for_scenario(scenario: &Scenario, horizon: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(MetaRlError::Config(format!("gamma must lie in (0,1], got {gamma}")));
        }
        let (k, nt, nr) = (scenario.num_users(), scenario.num_tx_mas(), scenario.num_rx_mas());
        let action_dim = (2 * k + 1) * nt + nr;
        Ok(Self { num_users: k, action_dim, state_dim: k + 2 + action_dim + 1, horizon, gamma })
    }

    pub fn feature_dim(&self) -> usize {
        self.num_users + 2
    }
}

/// `[R̄_1 … R̄_K, P_max, D₀, a_prev…, r_prev]`.
pub fn encode_state(mean_rates: &[f64], p_max: f64, d0: f64, prev_action: &[f64], prev_reward: f64) -> Result<Vec<f64>> {
    let mut s = Vec::with_capacity(mean_rates.len() + 3 + prev_action.len());
    s.extend_from_slice(mean_rates);
    s.push(p_max);
    s.push(d0);
    s.extend_from_slice(prev_action);
    s.push(prev_reward);
    if s.iter().any(|v| !v.is_finite()) {
        return Err(MetaRlError::NonFinite("state features".into()));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateParts {
    pub mean_rates: Vec<f64>,
    pub p_max: f64,
    pub d0: f64,
    pub prev_action: Vec<f64>,
    pub prev_reward: f64,
}

pub fn decode_state(state: &[f64], spec: &MdpSpec) -> Result<StateParts> {
    if state.len() != spec.state_dim {
        return Err(MetaRlError::Config(format!("state has {} entries, expected {}", state.len(), spec.state_dim)));
    }
    let k = spec.num_users;
    Ok(StateParts {
        mean_rates: state[..k].to_vec(),
        p_max: state[k],
        d0: state[k + 1],
        prev_action: state[k + 2..k + 2 + spec.action_dim].to_vec(),
        prev_reward: state[state.len() - 1],
    })
}

/// Affine map into the box, then a spacing repair: sort, push forward so
/// consecutive gaps are at least `D₀`, and cap by the upper chain
/// `p_max − (N−1−t)·D₀`.
pub fn repair_positions(raw: &[f64], range: [f64; 2], d0: f64) -> Vec<f64> {
    let n = raw.len();
    let (mid, half) = (0.5 * (range[0] + range[1]), 0.5 * (range[1] - range[0]));
    let mut p: Vec<f64> = raw.iter().map(|a| (mid + a.clamp(-1.0, 1.0) * half).clamp(range[0], range[1])).collect();
    p.sort_by(f64::total_cmp);
    for t in 1..n {
        p[t] = p[t].max(p[t - 1] + d0);
    }
    for (t, v) in p.iter_mut().enumerate() {
        *v = v.min(range[1] - (n - 1 - t) as f64 * d0);
    }
    p
}

/// Per-beam projection onto `‖w‖² ≤ P_max`.
pub fn project_power(w: &mut [Complex64], p_max: f64) {
    let norm2: f64 = w.iter().map(|z| z.norm_sqr()).sum();
    if norm2 > p_max {
        let scale = (p_max / norm2).sqrt();
        w.iter_mut().for_each(|z| *z *= scale);
    }
}

/// Total map from the action box to a feasible design.
pub fn decode_action(action: &[f64], scenario: &Scenario, fixed_positions: bool) -> Result<(BeamformingSet, MaLayout)> {
    let cfg = &scenario.config;
    let (k, nt, nr) = (scenario.num_users(), scenario.num_tx_mas(), scenario.num_rx_mas());
    let expected = (2 * k + 1) * nt + nr;
    if action.len() != expected {
        return Err(MetaRlError::Config(format!("action has {} entries, expected {expected}", action.len())));
    }
    let scale = (cfg.p_max / nt as f64).sqrt();
    let beams: Vec<Vec<Complex64>> = (0..k)
        .map(|user| {
            let mut w: Vec<Complex64> = (0..nt)
                .map(|t| {
                    let i = 2 * (user * nt + t);
                    Complex64::new(action[i].clamp(-1.0, 1.0), action[i + 1].clamp(-1.0, 1.0)) * scale
                })
                .collect();
            project_power(&mut w, cfg.p_max);
            w
        })
        .collect();
    let beams = BeamformingSet::shared(beams, scenario.num_tx_aps());
    let layout = if fixed_positions {
        MaLayout::uniform(cfg)
    } else {
        let off = 2 * k * nt;
        MaLayout::shared(
            repair_positions(&action[off..off + nt], cfg.ma_range, cfg.d0_spacing),
            repair_positions(&action[off + nt..], cfg.ma_range, cfg.d0_spacing),
            scenario.num_tx_aps(),
            scenario.num_rx_aps(),
        )
    };
    Ok((beams, layout))
}

/// `−CRLB/unit − β·#violations`, counting each failing inequality (one per
/// user and subcarrier for the rate floor), clamped at the floor; the floor also
/// stands in for a singular FIM.
pub fn reward_value(crlb: f64, violations: usize, cfg: &EnvConfig) -> f64 {
    if !crlb.is_finite() {
        return cfg.reward_floor;
    }
    (-crlb / cfg.crlb_unit - cfg.violation_penalty * violations as f64).max(cfg.reward_floor)
}

/// Everything computed for one decoded action.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reward: f64,
    /// Σ_b tr(CRLB_b) at the TS error chosen by the mode; `+∞` when singular.
    pub crlb: f64,
    pub ts: Option<TsErrorMatrix>,
    pub rates: RateReport,
    pub constraints: ConstraintReport,
    pub beams: BeamformingSet,
    pub layout: MaLayout,
}

/// Zero-TS objective, or `+∞` for a singular FIM.
pub fn ideal_crlb(model: &SensingModel, scenario: &Scenario) -> Result<f64> {
    let zero = TsErrorMatrix::filled(scenario.num_tx_aps(), scenario.num_rx_aps(), 0.0);
    Ok(model.objective(&phasor_from_ts(&zero, &scenario.freq_grid))?)
}

/// Full worst-case solve; `+∞` when the FIM is singular somewhere on the way.
pub fn full_worst_crlb(
    model: &SensingModel,
    scenario: &Scenario,
    solver: &ManifoldSolverConfig,
) -> Result<(f64, Option<TsErrorMatrix>)> {
    if !ideal_crlb(model, scenario)?.is_finite() {
        return Ok((f64::INFINITY, None));
    }
    match worst_case_with_model(model, &scenario.freq_grid, scenario.config.ts_bounds, solver) {
        Ok(res) => Ok((res.worst_crlb, Some(res.ts))),
        Err(cfisac_core::Error::SingularFim { .. }) => Ok((f64::INFINITY, None)),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone)]
pub struct CfIsacEnv {
    pub scenario: Scenario,
    pub config: EnvConfig,
    pub spec: MdpSpec,
    cache: Option<TsErrorMatrix>,
    since_refresh: usize,
}

impl CfIsacEnv {
    pub fn new(scenario: Scenario, config: EnvConfig, gamma: f64) -> Result<Self> {
        config.validate()?;
        let spec = MdpSpec::for_scenario(&scenario, config.horizon, gamma)?;
        Ok(Self { scenario, config, spec, cache: None, since_refresh: 0 })
    }

    fn cached_worst(&mut self, model: &SensingModel) -> Result<(f64, Option<TsErrorMatrix>)> {
        if !ideal_crlb(model, &self.scenario)?.is_finite() {
            return Ok((f64::INFINITY, None));
        }
        let refresh = self.cache.is_none() || self.since_refresh + 1 >= self.config.cache_refresh;
        let cheap = ManifoldSolverConfig {
            max_cg_iters: self.config.cached_cg_iters,
            max_outer: if refresh { 2 } else { 1 },
            refine_iters: 20,
            random_starts: 0,
            grid_budget: 256,
            grid_starts: 1,
            ..self.config.solver.clone()
        };
        let (freq, bounds) = (&self.scenario.freq_grid, self.scenario.config.ts_bounds);
        let mut starts = if refresh { default_starts(model, freq, bounds, &cheap) } else { Vec::new() };
        starts.extend(self.cache.clone());
        match worst_case_from_starts(model, freq, bounds, &cheap, starts) {
            Ok(res) => {
                self.cache = Some(res.ts.clone());
                self.since_refresh = if refresh { 0 } else { self.since_refresh + 1 };
                Ok((res.worst_crlb, Some(res.ts)))
            }
            Err(cfisac_core::Error::SingularFim { .. }) => Ok((f64::INFINITY, None)),
            Err(e) => Err(e.into()),
        }
    }

    /// Decodes and scores an action under `mode`.
    pub fn evaluate(&mut self, action: &[f64], mode: TsMode) -> Result<Evaluation> {
        let (beams, layout) = decode_action(action, &self.scenario, self.config.fixed_positions)?;
        let channels = CommChannels::compute(&self.scenario, &layout);
        let rates = weighted_sum_rate(&self.scenario, &channels, &beams)?;
        let constraints = audit_constraints(&self.scenario, &channels, &beams, &layout, None);
        let model = SensingModel::new(&self.scenario, &beams, &layout)?;
        let (crlb, ts) = match mode {
            TsMode::Ideal => (ideal_crlb(&model, &self.scenario)?, None),
            TsMode::Full => full_worst_crlb(&model, &self.scenario, &self.config.solver)?,
            TsMode::Cached => self.cached_worst(&model)?,
        };
        let reward = reward_value(crlb, constraints.num_failing(), &self.config);
        Ok(Evaluation { reward, crlb, ts, rates, constraints, beams, layout })
    }

    fn state_for(&self, rates: &RateReport, action: &[f64], reward: f64) -> Result<Vec<f64>> {
        let cfg = &self.scenario.config;
        encode_state(&rates.mean_rates(), cfg.p_max, cfg.d0_spacing, action, reward)
    }
}

impl Environment for CfIsacEnv {
    fn state_dim(&self) -> usize {
        self.spec.state_dim
    }
    fn action_dim(&self) -> usize {
        self.spec.action_dim
    }
    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.spec.action_dim];
        let (beams, layout) = decode_action(&zero, &self.scenario, self.config.fixed_positions)?;
        let channels = CommChannels::compute(&self.scenario, &layout);
        let rates = weighted_sum_rate(&self.scenario, &channels, &beams)?;
        self.state_for(&rates, &zero, 0.0)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let mode = self.config.ts_mode;
        let eval = self.evaluate(action, mode)?;
        Ok(Step {
            next_state: self.state_for(&eval.rates, action, eval.reward)?,
            reward: eval.reward,
            terminal: false,
            crlb: Some(eval.crlb),
            rate_violations: Some(eval.constraints.get(cfisac_core::ConstraintId::Rate).count),
        })
    }
}
