//! Communication-side quantities (SINR, rates) and constraint auditing.

use std::fmt;

use num_complex::Complex64;

use crate::channel::{CVector, CommChannels, MaLayout};
use crate::crlb::TsErrorMatrix;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Slack below which a box or spacing inequality is treated as met.
pub const POSITION_SLACK: f64 = 1e-9;
/// Relative slack on the power constraint.
pub const POWER_SLACK_REL: f64 = 1e-12;

/// Transmit beams `w[a][k]`, each an `N_t`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSet {
    pub w: Vec<Vec<CVector>>,
}

impl BeamformingSet {
    pub fn zeros(num_tx_aps: usize, num_users: usize, num_tx_mas: usize) -> Self {
        Self {
            w: vec![vec![vec![Complex64::new(0.0, 0.0); num_tx_mas]; num_users]; num_tx_aps],
        }
    }

    /// The same per-user beams on every transmit AP.
    pub fn shared(per_user: Vec<CVector>, num_tx_aps: usize) -> Self {
        Self {
            w: vec![per_user; num_tx_aps],
        }
    }

    pub fn num_tx_aps(&self) -> usize {
        self.w.len()
    }

    pub fn num_users(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            w: self
                .w
                .iter()
                .map(|row| row.iter().map(|v| v.iter().map(|z| z * factor).collect()).collect())
                .collect(),
        }
    }

    pub fn check_dims(&self, scenario: &Scenario) -> Result<()> {
        let ok = self.w.len() == scenario.num_tx_aps()
            && self.w.iter().all(|row| {
                row.len() == scenario.num_users()
                    && row.iter().all(|v| v.len() == scenario.num_tx_mas())
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "beams must be {}×{} vectors of length {}",
                scenario.num_tx_aps(),
                scenario.num_users(),
                scenario.num_tx_mas()
            )))
        }
    }
}

fn inner(h: &[Complex64], w: &[Complex64]) -> Complex64 {
    h.iter().zip(w).map(|(x, y)| x.conj() * y).sum()
}

/// `Σ_a h_{a,k}ᴴ w_{a,j}`.
fn effective_gain(channels: &CommChannels, beams: &BeamformingSet, k: usize, j: usize) -> Complex64 {
    channels
        .h
        .iter()
        .zip(&beams.w)
        .map(|(h_a, w_a)| inner(&h_a[k], &w_a[j]))
        .sum()
}

/// SINR of user `k` on subcarrier `s`. The communication channel is
/// frequency-flat and the noise level is common, so `s` only selects the
/// noise term.
pub fn sinr(
    scenario: &Scenario,
    channels: &CommChannels,
    beams: &BeamformingSet,
    k: usize,
    s: usize,
) -> Result<f64> {
    let noise = noise_power(scenario, k, s);
    if !(noise > 0.0) {
        return Err(Error::Config(format!("noise power must be positive, got {noise}")));
    }
    let desired = effective_gain(channels, beams, k, k).norm_sqr();
    let interference: f64 = (0..beams.num_users())
        .filter(|&j| j != k)
        .map(|j| effective_gain(channels, beams, k, j).norm_sqr())
        .sum();
    Ok(desired / (interference + noise))
}

/// `σ²_{k,s}`: the configured noise power for every user and subcarrier.
pub fn noise_power(scenario: &Scenario, _k: usize, _s: usize) -> f64 {
    scenario.noise_power
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub sum: f64,
    /// `per_user[k][s] = R_{k,s}` in bit/s/Hz.
    pub per_user: Vec<Vec<f64>>,
}

impl RateReport {
    /// Subcarrier-averaged rate of every user.
    pub fn mean_rates(&self) -> Vec<f64> {
        self.per_user
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64)
            .collect()
    }
}

pub fn weighted_sum_rate(
    scenario: &Scenario,
    channels: &CommChannels,
    beams: &BeamformingSet,
) -> Result<RateReport> {
    let mut per_user = Vec::with_capacity(scenario.num_users());
    let mut sum = 0.0;
    for (k, eta) in scenario.rate_weights.iter().enumerate() {
        let mut row = Vec::with_capacity(scenario.num_freq());
        for s in 0..scenario.num_freq() {
            let rate = (1.0 + sinr(scenario, channels, beams, k, s)?).log2();
            sum += eta * rate;
            row.push(rate);
        }
        per_user.push(row);
    }
    Ok(RateReport { sum, per_user })
}

/// The constraint families of the joint problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintId {
    TsBounds,
    Rate,
    TxBox,
    RxBox,
    TxSpacing,
    RxSpacing,
    Power,
}

impl ConstraintId {
    pub const ALL: [ConstraintId; 7] = [
        ConstraintId::TsBounds,
        ConstraintId::Rate,
        ConstraintId::TxBox,
        ConstraintId::RxBox,
        ConstraintId::TxSpacing,
        ConstraintId::RxSpacing,
        ConstraintId::Power,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ConstraintId::TsBounds => "15b",
            ConstraintId::Rate => "15c",
            ConstraintId::TxBox => "15d",
            ConstraintId::RxBox => "15e",
            ConstraintId::TxSpacing => "15f",
            ConstraintId::RxSpacing => "15g",
            ConstraintId::Power => "15h",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstraintId::TsBounds => "ts_bounds",
            ConstraintId::Rate => "rate",
            ConstraintId::TxBox => "tx_box",
            ConstraintId::RxBox => "rx_box",
            ConstraintId::TxSpacing => "tx_spacing",
            ConstraintId::RxSpacing => "rx_spacing",
            ConstraintId::Power => "power",
        }
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name(), self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintStatus {
    pub id: ConstraintId,
    pub violated: bool,
    /// Largest shortfall over all instances of this family; 0 when satisfied.
    pub magnitude: f64,
    /// Number of individual inequalities that fail.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub entries: Vec<ConstraintStatus>,
}

impl ConstraintReport {
    pub fn get(&self, id: ConstraintId) -> &ConstraintStatus {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .expect("report carries every constraint family")
    }

    pub fn violated(&self, id: ConstraintId) -> bool {
        self.get(id).violated
    }

    /// `Σ_i 1_vio,i` over constraint families.
    pub fn num_violated(&self) -> usize {
        self.entries.iter().filter(|e| e.violated).count()
    }

    /// Individual failing inequalities summed over all families.
    pub fn num_failing(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn all_satisfied(&self) -> bool {
        self.num_violated() == 0
    }
}

#[derive(Default)]
struct Tally {
    magnitude: f64,
    count: usize,
}

impl Tally {
    fn push(&mut self, shortfall: f64, slack: f64) {
        if shortfall > slack {
            self.count += 1;
            self.magnitude = self.magnitude.max(shortfall);
        }
    }

    fn into_status(self, id: ConstraintId) -> ConstraintStatus {
        ConstraintStatus {
            id,
            violated: self.count > 0,
            magnitude: self.magnitude,
            count: self.count,
        }
    }
}

/// Evaluates every inequality of the joint problem; equality is satisfied.
/// Never fails: malformed inputs simply show up as violations.
pub fn audit_constraints(
    scenario: &Scenario,
    channels: &CommChannels,
    beams: &BeamformingSet,
    layout: &MaLayout,
    ts_errors: Option<&TsErrorMatrix>,
) -> ConstraintReport {
    let cfg = &scenario.config;
    let mut ts = Tally::default();
    if let Some(m) = ts_errors {
        let [lo, hi] = cfg.ts_bounds;
        for v in m.values() {
            ts.push((lo - v).max(v - hi), 0.0);
        }
    }

    let mut rate = Tally::default();
    match weighted_sum_rate(scenario, channels, beams) {
        Ok(report) => {
            for row in &report.per_user {
                for r in row {
                    rate.push(cfg.rate_floor - r, 0.0);
                }
            }
        }
        Err(_) => rate.push(f64::INFINITY, 0.0),
    }

    let [lo, hi] = cfg.ma_range;
    let box_tally = |arrays: &[Vec<f64>]| {
        let mut t = Tally::default();
        for p in arrays.iter().flatten() {
            t.push((lo - p).max(p - hi), POSITION_SLACK);
        }
        t
    };
    let spacing_tally = |arrays: &[Vec<f64>]| {
        let mut t = Tally::default();
        for positions in arrays {
            for w in positions.windows(2) {
                t.push(cfg.d0_spacing - (w[1] - w[0]).abs(), POSITION_SLACK);
            }
        }
        t
    };

    let mut power = Tally::default();
    for w in beams.w.iter().flatten() {
        let energy: f64 = w.iter().map(|z| z.norm_sqr()).sum();
        power.push(energy - cfg.p_max, POWER_SLACK_REL * cfg.p_max);
    }

    ConstraintReport {
        entries: vec![
            ts.into_status(ConstraintId::TsBounds),
            rate.into_status(ConstraintId::Rate),
            box_tally(&layout.tx).into_status(ConstraintId::TxBox),
            box_tally(&layout.rx).into_status(ConstraintId::RxBox),
            spacing_tally(&layout.tx).into_status(ConstraintId::TxSpacing),
            spacing_tally(&layout.rx).into_status(ConstraintId::RxSpacing),
            power.into_status(ConstraintId::Power),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_scenario, ScenarioConfig};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_beams(rng: &mut ChaCha8Rng, sc: &Scenario, scale: f64) -> BeamformingSet {
        let mut b = BeamformingSet::zeros(sc.num_tx_aps(), sc.num_users(), sc.num_tx_mas());
        for z in b.w.iter_mut().flatten().flatten() {
            *z = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale;
        }
        b
    }

    fn setup(seed: u64) -> (Scenario, MaLayout, CommChannels) {
        let sc = build_scenario(&ScenarioConfig { seed, ..ScenarioConfig::desk_scale() }).unwrap();
        let layout = MaLayout::uniform(&sc.config);
        let ch = CommChannels::compute(&sc, &layout);
        (sc, layout, ch)
    }

    #[test]
    fn single_user_sinr_is_snr() {
        let sc = build_scenario(&ScenarioConfig { num_users: 1, ..ScenarioConfig::desk_scale() }).unwrap();
        let layout = MaLayout::uniform(&sc.config);
        let ch = CommChannels::compute(&sc, &layout);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let beams = random_beams(&mut rng, &sc, 1.0);
        let g: Complex64 = (0..sc.num_tx_aps()).map(|a| inner(&ch.h[a][0], &beams.w[a][0])).sum();
        assert_relative_eq!(
            sinr(&sc, &ch, &beams, 0, 0).unwrap(),
            g.norm_sqr() / sc.noise_power,
            max_relative = 1e-12
        );
    }

    #[test]
    fn orthogonal_beams_have_no_interference() {
        let (sc, _, mut ch) = setup(2);
        // Single AP contributes, channel of user 0 is e_0, user 1's beam lives on e_1.
        for a in 0..sc.num_tx_aps() {
            for k in 0..sc.num_users() {
                ch.h[a][k] = vec![Complex64::new(0.0, 0.0); sc.num_tx_mas()];
            }
        }
        ch.h[0][0][0] = Complex64::new(1e-4, 0.0);
        let mut beams = BeamformingSet::zeros(sc.num_tx_aps(), sc.num_users(), sc.num_tx_mas());
        beams.w[0][0][0] = Complex64::new(1.0, 0.0);
        beams.w[0][1][1] = Complex64::new(0.0, 1.0);
        assert_relative_eq!(
            sinr(&sc, &ch, &beams, 0, 3).unwrap(),
            1e-8 / sc.noise_power,
            max_relative = 1e-12
        );
    }

    #[test]
    fn sinr_matches_scalar_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..10 {
            let (sc, _, ch) = setup(seed);
            let beams = random_beams(&mut rng, &sc, 0.7);
            for k in 0..2 {
                let mut terms = [[Complex64::new(0.0, 0.0); 2]; 2];
                for (j, term) in terms[k].iter_mut().enumerate() {
                    for a in 0..2 {
                        for t in 0..sc.num_tx_mas() {
                            *term += ch.h[a][k][t].conj() * beams.w[a][j][t];
                        }
                    }
                }
                let other = 1 - k;
                let oracle = terms[k][k].norm_sqr() / (terms[k][other].norm_sqr() + sc.noise_power);
                assert_relative_eq!(sinr(&sc, &ch, &beams, k, 0).unwrap(), oracle, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn nonpositive_noise_is_config_error() {
        let (mut sc, _, ch) = setup(0);
        sc.noise_power = 0.0;
        let beams = BeamformingSet::zeros(2, 2, 4);
        assert!(matches!(sinr(&sc, &ch, &beams, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn rate_cases() {
        let (mut sc, _, mut ch) = setup(3);
        let beams = BeamformingSet::zeros(2, 2, 4);
        assert_eq!(weighted_sum_rate(&sc, &ch, &beams).unwrap().sum, 0.0);

        // SINR exactly 1 for every user: unit desired gain, no interference, σ² = 1.
        sc.noise_power = 1.0;
        let mut beams = BeamformingSet::zeros(2, 2, 4);
        for a in 0..2 {
            for k in 0..2 {
                ch.h[a][k] = vec![Complex64::new(0.0, 0.0); 4];
            }
        }
        ch.h[0][0][0] = Complex64::new(1.0, 0.0);
        ch.h[0][1][1] = Complex64::new(1.0, 0.0);
        beams.w[0][0][0] = Complex64::new(1.0, 0.0);
        beams.w[0][1][1] = Complex64::new(1.0, 0.0);
        let report = weighted_sum_rate(&sc, &ch, &beams).unwrap();
        assert!(report.per_user.iter().flatten().all(|r| *r == 1.0));
    }

    #[test]
    fn rate_sum_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..10 {
            let (mut sc, _, ch) = setup(seed);
            sc.rate_weights = vec![0.3, 1.7];
            let beams = random_beams(&mut rng, &sc, 1.0);
            let r = weighted_sum_rate(&sc, &ch, &beams).unwrap();
            let recomputed: f64 = r
                .per_user
                .iter()
                .zip(&sc.rate_weights)
                .map(|(row, eta)| eta * row.iter().sum::<f64>())
                .sum();
            assert_relative_eq!(r.sum, recomputed, max_relative = 1e-12);
        }
    }

    #[test]
    fn common_phase_leaves_sinr_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..10 {
            let (sc, _, ch) = setup(seed);
            let beams = random_beams(&mut rng, &sc, 1.0);
            let rotated = beams.scaled(Complex64::from_polar(1.0, rng.random::<f64>() * 6.0));
            for k in 0..2 {
                let a = sinr(&sc, &ch, &beams, k, 0).unwrap();
                let b = sinr(&sc, &ch, &rotated, k, 0).unwrap();
                assert!((a - b).abs() <= 1e-12 * a);
            }
        }
    }

    #[test]
    fn boundary_spacing_is_feasible() {
        let (sc, _, ch) = setup(0);
        let layout = MaLayout::shared(vec![-2.0, -1.5, -1.0, -0.5], vec![1.5, 2.0], 2, 1);
        let beams = BeamformingSet::zeros(2, 2, 4);
        let report = audit_constraints(&sc, &ch, &beams, &layout, None);
        for id in [ConstraintId::TxSpacing, ConstraintId::RxSpacing, ConstraintId::TxBox, ConstraintId::RxBox] {
            assert!(!report.violated(id), "{id}");
        }
    }

    #[test]
    fn power_violation_magnitude() {
        let (sc, layout, ch) = setup(0);
        let mut beams = BeamformingSet::zeros(2, 2, 4);
        beams.w[1][0][2] = Complex64::new((sc.config.p_max + 1e-3).sqrt(), 0.0);
        let report = audit_constraints(&sc, &ch, &beams, &layout, None);
        let p = report.get(ConstraintId::Power);
        assert!(p.violated);
        assert_relative_eq!(p.magnitude, 1e-3, max_relative = 1e-9);
        assert_eq!(p.count, 1);
    }

    #[test]
    fn ts_bounds_audit() {
        let (sc, layout, ch) = setup(0);
        let beams = BeamformingSet::zeros(2, 2, 4);
        let inside = TsErrorMatrix::filled(2, 1, 0.5e-9);
        assert!(!audit_constraints(&sc, &ch, &beams, &layout, Some(&inside)).violated(ConstraintId::TsBounds));
        let outside = TsErrorMatrix::filled(2, 1, 0.7e-9);
        let r = audit_constraints(&sc, &ch, &beams, &layout, Some(&outside));
        assert!(r.violated(ConstraintId::TsBounds));
        assert_relative_eq!(r.get(ConstraintId::TsBounds).magnitude, 0.1e-9, max_relative = 1e-9);
    }

    /// Independent per-inequality recheck on random designs.
    #[test]
    fn audit_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..100 {
            let (mut sc, _, _) = setup(trial % 5);
            sc.config.rate_floor = rng.random::<f64>() * 12.0;
            let mut draw = |n: usize| {
                let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 5.0 - 2.5).collect();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                v
            };
            let layout = MaLayout::shared(draw(4), draw(2), 2, 1);
            let ch = CommChannels::compute(&sc, &layout);
            let beams = random_beams(&mut rng, &sc, 1.6);
            let report = audit_constraints(&sc, &ch, &beams, &layout, None);

            let cfg = &sc.config;
            let any_out = |arr: &[Vec<f64>]| arr.iter().flatten().any(|p| *p < cfg.ma_range[0] || *p > cfg.ma_range[1]);
            let any_close = |arr: &[Vec<f64>]| arr.iter().any(|p| p.windows(2).any(|w| w[1] - w[0] < cfg.d0_spacing));
            assert_eq!(report.violated(ConstraintId::TxBox), any_out(&layout.tx));
            assert_eq!(report.violated(ConstraintId::RxBox), any_out(&layout.rx));
            assert_eq!(report.violated(ConstraintId::TxSpacing), any_close(&layout.tx));
            assert_eq!(report.violated(ConstraintId::RxSpacing), any_close(&layout.rx));
            let over = beams.w.iter().flatten().any(|w| w.iter().map(|z| z.norm_sqr()).sum::<f64>() > cfg.p_max);
            assert_eq!(report.violated(ConstraintId::Power), over);
            let mut short = false;
            for k in 0..2 {
                let s = sinr(&sc, &ch, &beams, k, 0).unwrap();
                short |= (1.0 + s).log2() < cfg.rate_floor;
            }
            assert_eq!(report.violated(ConstraintId::Rate), short);
            for e in &report.entries {
                assert_eq!(e.violated, e.magnitude > 0.0);
            }
        }
    }
}
