mod common;

use common::{oracle_suite, GridOracle};
use mag::svm::{kkt_max_violation, smo_train, KernelSpec, SmoParams};
use proptest::prelude::*;

fn spec(gamma: Option<f64>) -> KernelSpec {
    gamma.map_or(KernelSpec::Linear, |g| KernelSpec::rbf(g).unwrap())
}

#[test]
fn decision_signs_match_grid_oracle() {
    for case in oracle_suite() {
        let model = smo_train(&case.x, &case.y, &SmoParams::new(case.c, spec(case.gamma))).unwrap();
        let oracle = GridOracle::solve(&case.x, &case.y, case.c, case.gamma);
        for q in &case.queries {
            let ours = model.decision(q).unwrap();
            let theirs = oracle.decision(q);
            assert_eq!(
                ours >= 0.0,
                theirs >= 0.0,
                "{}: query {q:?}: smo {ours}, oracle {theirs}",
                case.name
            );
        }
        assert!(kkt_max_violation(&model, &case.x, &case.y, case.c, 1e-3).unwrap() <= 1e-3, "{}", case.name);
    }
}

#[test]
fn oracle_recovers_two_point_solution() {
    let x = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
    let o = GridOracle::solve(&x, &[-1.0, 1.0], 10.0, None);
    // α = 0.25 lies on the 0.1 grid only approximately; the grid gets within a step
    assert!((o.alpha[0] - 0.25).abs() <= 0.1, "{:?}", o.alpha);
    assert!((o.decision(&[1.0, 1.0])).abs() < 0.2);
}

#[test]
fn smo_objective_is_at_least_the_grid_optimum() {
    for case in oracle_suite() {
        let model = smo_train(&case.x, &case.y, &SmoParams::new(case.c, spec(case.gamma))).unwrap();
        let oracle = GridOracle::solve(&case.x, &case.y, case.c, case.gamma);
        let dual = |alpha: &[f64]| {
            let mut w: f64 = alpha.iter().sum();
            for i in 0..alpha.len() {
                for j in 0..alpha.len() {
                    w -= 0.5 * alpha[i] * alpha[j] * case.y[i] * case.y[j]
                        * common::kernel(case.gamma, &case.x[i], &case.x[j]);
                }
            }
            w
        };
        // recover α per training point from the model's support vectors
        let mut alpha = vec![0.0; case.x.len()];
        let mut next = 0;
        for (i, xi) in case.x.iter().enumerate() {
            if next < model.coefs().len() && &model.support_vectors()[next] == xi {
                alpha[i] = model.coefs()[next].abs();
                next += 1;
            }
        }
        let ours = dual(&alpha);
        let grid = dual(&oracle.alpha);
        assert!(ours >= grid - 1e-3 * case.c.max(1.0), "{}: smo {ours} < grid {grid}", case.name);
    }
}

fn dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (3usize..25)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), n),
                prop::collection::vec(prop::bool::ANY, n),
            )
        })
        .prop_filter("both classes", |(_, ys)| ys.iter().any(|&b| b) && ys.iter().any(|&b| !b))
        .prop_map(|(x, ys)| (x, ys.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_feasibility_and_margins(
        (x, y) in dataset(),
        c in prop::sample::select(vec![0.1, 1.0, 10.0]),
        gamma in prop::option::of(prop::sample::select(vec![0.1, 1.0, 10.0])),
    ) {
        let params = SmoParams::new(c, spec(gamma));
        let model = smo_train(&x, &y, &params).unwrap();
        for &coef in model.coefs() {
            prop_assert!(coef.abs() > 0.0 && coef.abs() <= c);
        }
        let balance: f64 = model.coefs().iter().sum();
        prop_assert!(balance.abs() <= params.tol);
        prop_assert!(kkt_max_violation(&model, &x, &y, c, params.tol).unwrap() <= params.tol);
        for (sv, coef) in model.support_vectors().iter().zip(model.coefs()) {
            let a = coef.abs();
            if a > 1e-6 && a < c - 1e-6 {
                let d = model.decision(sv).unwrap();
                prop_assert!((d.abs() - 1.0).abs() <= 10.0 * params.tol, "free sv decision {}", d);
            }
        }
        let again = smo_train(&x, &y, &params).unwrap();
        prop_assert_eq!(model.bias().to_bits(), again.bias().to_bits());
        prop_assert_eq!(model, again);
    }
}
