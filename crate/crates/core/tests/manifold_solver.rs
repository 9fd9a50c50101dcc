mod common;

use cfisac_core::crlb::{crlb_total, phasor_from_ts, TsErrorMatrix};
use cfisac_core::manifold::{project_tangent, recover_ts, riemannian_cg_maximize, worst_case_ts, norm};
use cfisac_core::{build_scenario, Complex64, MaLayout, ManifoldSolverConfig, PhasorVector, ScenarioConfig, SensingModel};
use common::*;
use rand::Rng;

#[test]
fn cg_on_crlb_is_monotone_and_stays_on_manifold() {
    let cfg = ManifoldSolverConfig::default();
    for seed in 0..10 {
        let sc = desk(seed);
        let mut r = rng(400 + seed);
        let beams = random_beams(&mut r, &sc);
        let layout = MaLayout::uniform(&sc.config);
        let model = SensingModel::new(&sc, &beams, &layout).unwrap();
        let start = random_phasor(&mut r, &sc);
        let visited = std::cell::RefCell::new(0.0f64);
        let out = riemannian_cg_maximize(
            |x| {
                let p = start.with_values(x.to_vec());
                let m = visited.borrow().max(p.max_modulus_error());
                *visited.borrow_mut() = m;
                model.objective(&p)
            },
            |x| model.gradient(&start.with_values(x.to_vec())),
            &start.values,
            &cfg,
        )
        .unwrap();
        assert!(out.trace.windows(2).all(|w| w[1].objective >= w[0].objective), "seed {seed}");
        assert!(*visited.borrow() < 1e-12);
        let g = project_tangent(&out.point, &model.gradient(&start.with_values(out.point.clone())).unwrap());
        assert!(norm(&g) < 1e-5 || out.stalled, "seed {seed}: grad {:e}", norm(&g));
    }
}

#[test]
fn recover_ts_beats_grid_search() {
    let grid_f: Vec<f64> = ScenarioConfig::desk_scale().resolved_freq_grid();
    let bounds = [0.4e-9, 0.6e-9];
    let mut r = rng(11);
    for _ in 0..100 {
        let v: Vec<Complex64> = (0..grid_f.len())
            .map(|_| Complex64::from_polar(1.0, r.random::<f64>() * std::f64::consts::TAU))
            .collect();
        let p = PhasorVector::new(v.clone(), 1, 1, grid_f.len()).unwrap();
        let tau = recover_ts(&p, &grid_f, bounds).get(0, 0);
        let theta = unwrap(&v);
        let got = delay_fit_objective(&theta, &grid_f, tau);
        let best_grid = (0..10_000)
            .map(|i| bounds[0] + (bounds[1] - bounds[0]) * i as f64 / 9_999.0)
            .map(|t| delay_fit_objective(&theta, &grid_f, t))
            .fold(f64::INFINITY, f64::min);
        assert!(got <= best_grid + 1e-9 * (1.0 + best_grid), "{got} > {best_grid}");
    }
}

#[test]
fn worst_case_dominates_random_and_nominal() {
    let cfg = ManifoldSolverConfig::default();
    for seed in 0..5 {
        let sc = desk(seed);
        let mut r = rng(500 + seed);
        let beams = random_beams(&mut r, &sc);
        let layout = MaLayout::uniform(&sc.config);
        let model = SensingModel::new(&sc, &beams, &layout).unwrap();
        let res = worst_case_ts(&sc, &beams, &layout, &cfg).unwrap();
        let bounds = sc.config.ts_bounds;
        assert!(res.ts.within(bounds));
        let at_ts = model.objective(&phasor_from_ts(&res.ts, &sc.freq_grid)).unwrap();
        assert_eq!(res.worst_crlb, at_ts);
        assert!(res.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(res.relaxed_crlb >= res.worst_crlb);
        let nominal = TsErrorMatrix::nominal(2, 1, bounds);
        assert!(res.worst_crlb >= model.objective(&phasor_from_ts(&nominal, &sc.freq_grid)).unwrap());
        for _ in 0..10 {
            let ts = TsErrorMatrix::from_fn(2, 1, |_, _| bounds[0] + r.random::<f64>() * (bounds[1] - bounds[0]));
            let l = model.objective(&phasor_from_ts(&ts, &sc.freq_grid)).unwrap();
            assert!(res.worst_crlb >= l, "seed {seed}: {} < {}", res.worst_crlb, l);
        }
    }
}

#[test]
fn collapsed_bounds_force_the_answer() {
    let cfg = ScenarioConfig {
        num_freq_samples: 1,
        ts_bounds: [0.5e-9, 0.5e-9],
        ..ScenarioConfig::desk_scale()
    };
    let sc = build_scenario(&cfg).unwrap();
    let mut r = rng(3);
    let beams = random_beams(&mut r, &sc);
    let layout = MaLayout::uniform(&sc.config);
    let res = worst_case_ts(&sc, &beams, &layout, &ManifoldSolverConfig::default()).unwrap();
    let forced = TsErrorMatrix::filled(2, 1, 0.5e-9);
    let fims = cfisac_core::crlb::fim(&sc, &beams, &layout, &phasor_from_ts(&forced, &sc.freq_grid)).unwrap();
    let expected = crlb_total(&fims.receivers.iter().map(|r| r.fim).collect::<Vec<_>>());
    assert_eq!(res.ts, forced);
    assert_eq!(res.worst_crlb, expected);
}
