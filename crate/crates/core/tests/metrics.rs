mod common;

use cpiri::eval::{apply_permutation, mae, wape, PermutationMap, WAPE_EPS_SCALE};

#[test]
fn fixtures_reproduce_exactly() {
    let fixtures = common::metric_fixtures();
    assert!(fixtures.len() >= 10);
    for f in fixtures {
        assert_eq!(
            wape(&f.y, &f.yhat, WAPE_EPS_SCALE).unwrap(),
            f.wape,
            "{}",
            f.name
        );
        assert_eq!(mae(&f.y, &f.yhat).unwrap(), f.mae, "{}", f.name);
    }
}

#[test]
fn fixtures_are_invariant_under_joint_permutation() {
    for f in common::metric_fixtures() {
        let c = f.y.shape()[1];
        for seed in 0..20 {
            let p = PermutationMap::random(c, seed);
            let (y, yhat) = (
                apply_permutation(&f.y, &p).unwrap(),
                apply_permutation(&f.yhat, &p).unwrap(),
            );
            assert!(
                (wape(&y, &yhat, WAPE_EPS_SCALE).unwrap() - f.wape).abs()
                    <= 1e-12 * f.wape.max(1.0),
                "{}",
                f.name
            );
            assert!(
                (mae(&y, &yhat).unwrap() - f.mae).abs() <= 1e-12,
                "{}",
                f.name
            );
        }
    }
}

#[test]
fn mismatched_or_non_finite_inputs_are_rejected() {
    let f = &common::metric_fixtures()[1];
    assert!(wape(&f.y, &f.y.transpose().unwrap(), WAPE_EPS_SCALE).is_err());
    let nan = f.y.map(|_| f64::NAN);
    assert!(mae(&f.y, &nan).is_err());
}
