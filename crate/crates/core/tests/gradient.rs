mod support;

use support::gradient_check;

#[test]
fn analytic_gradient_matches_central_differences() {
    for seed in 0..20 {
        let err = gradient_check(seed, 1e-5);
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
    }
}
