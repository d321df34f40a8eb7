mod common;

use common::*;
use rand::Rng;
use subtype_bridge::kmw::km_weights;

#[test]
fn stute_weights_equal_km_jumps() {
    let (err, valid) = km_oracle(101, 200);
    assert!(err <= 1e-12, "max error {err:e}");
    assert!(valid);
}

#[test]
fn tied_event_weights_sum_to_km_jump() {
    let mut rng = rng(5);
    for _ in 0..100 {
        let n = rng.gen_range(2..=40);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let w = km_weights(&t, &e).unwrap();
        for (tt, jump) in km_jumps(&t, &e) {
            let sum: f64 = w
                .order
                .iter()
                .zip(&w.weights)
                .filter(|(&i, _)| t[i] == tt)
                .map(|(_, &x)| x)
                .sum();
            assert!((sum - jump).abs() < 1e-12, "t={tt}: {sum} vs {jump}");
        }
    }
}

#[test]
fn surrogate_at_closed_form_theta_is_the_bridge_objective() {
    let err = surrogate_equivalence(202, 100);
    assert!(err <= 1e-10, "relative error {err:e}");
}

#[test]
fn group_lasso_matches_proximal_gradient_oracle() {
    let r = solver_oracle(303, 20);
    assert!(r.glasso_gap <= 1e-5, "objective gap {:e}", r.glasso_gap);
}

#[test]
fn bridge_fit_is_optimal_within_its_support() {
    // The alternation is a local method: it can settle on a support other
    // than the global one, but never on a worse point of its own support.
    let r = solver_oracle(404, 20);
    assert!(r.bridge_support_excess <= 1e-4, "excess {:e}", r.bridge_support_excess);
}
