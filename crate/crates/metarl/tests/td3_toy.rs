mod common;

use common::toy_td3;

#[test]
fn toy_bandit_is_solved_on_most_seeds() {
    let runs: Vec<_> = (0..5).map(|s| toy_td3(s, 5000)).collect();
    let good = runs.iter().filter(|r| r.eval_reward > -0.01).count();
    let rewards: Vec<f64> = runs.iter().map(|r| r.eval_reward).collect();
    assert!(good >= 4, "rewards {rewards:?}");
    for r in &runs {
        assert!(r.convex_err < 1e-12, "{}", r.convex_err);
        assert_eq!(r.delayed_updates, 2500);
        assert!(r.smoothed_in_bounds);
    }
}
