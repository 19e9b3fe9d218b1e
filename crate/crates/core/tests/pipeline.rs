use clf_forge::characteristics::{integrate_forward, ExitTag, Target};
use clf_forge::local_clf::LocalClf;
use clf_forge::mpc::{run_mpc, Controller, MpcConfig};
use clf_forge::par::Execution;
use clf_forge::report;
use clf_forge::system::make_example_2d;
use clf_forge::value_eval::{evaluate_grid, evaluate_state, EvalParams, GridSpec, ValueStatus};
use proptest::prelude::*;

fn large_u() -> (clf_forge::system::Example2d, LocalClf) {
    (make_example_2d(20.0).unwrap(), LocalClf::example_2d(20.0, 1.4, 0.015, 0.01).unwrap())
}

#[test]
fn value_at_unit_state_matches_closed_form() {
    let (sys, clf) = large_u();
    let params = EvalParams { t_max: 5.0, reverse_box: Some(vec![[-3.0, 3.0], [-3.75, 3.75]]), ..Default::default() };
    let r = evaluate_state(&sys, &clf, &[1.0, 1.0], &params, 3).unwrap();
    assert_eq!(r.status, ValueStatus::Solved);
    assert!((r.v - (1.0 - (-0.75f64).exp())).abs() <= 2e-3, "v = {}", r.v);
    assert!((r.control[0] + 4.0).abs() <= 0.1);

    // the optimal costate drives the state into the target
    let p0 = r.costate.unwrap();
    let ch = integrate_forward(&sys, &Target::Sublevel(&clf), &[1.0, 1.0], &p0, 1.0, &params.exit(5.0), &params.integrator)
        .unwrap();
    assert_eq!(ch.exit.tag, ExitTag::ReachedTarget);
    assert!((ch.kruzhkov_cost - r.v).abs() <= 1e-9);
}

#[test]
fn grid_output_does_not_depend_on_execution_mode() {
    let (sys, clf) = large_u();
    let grid = GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![2, 2]).unwrap();
    let params = EvalParams { t_max: 5.0, ..Default::default() };
    let a = evaluate_grid(&sys, &clf, &grid, &params, 9, Execution::Sequential).unwrap();
    let b = evaluate_grid(&sys, &clf, &grid, &params, 9, Execution::Parallel).unwrap();
    let text = report::grid_csv(&a);
    assert_eq!(text, report::grid_csv(&b));
    assert_eq!(text.lines().count(), 1 + grid.len());
    assert!(a.mask.iter().all(|m| *m));
}

#[test]
fn saturated_linear_mpc_is_bit_reproducible() {
    let sys = make_example_2d(1.2).unwrap();
    let clf = LocalClf::example_2d(1.2, 1.4, 0.015, 0.01).unwrap();
    let cfg = MpcConfig {
        horizon: 1.0,
        controller: Controller::SaturatedLinear,
        noise: vec![0.05, 0.05],
        seed: 5,
        ..Default::default()
    };
    let a = run_mpc(&sys, &clf, &[0.3, -0.2], &cfg, &EvalParams::default()).unwrap();
    let b = run_mpc(&sys, &clf, &[0.3, -0.2], &cfg, &EvalParams::default()).unwrap();
    assert_eq!(report::mpc_states_csv(&a), report::mpc_states_csv(&b));
    assert_eq!(a.times.len(), 11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn states_inside_the_target_take_the_local_value(th in 0.0..std::f64::consts::TAU, s in 0.0..0.99f64) {
        let sys = make_example_2d(1.2).unwrap();
        let clf = LocalClf::example_2d(1.2, 1.4, 0.015, 0.01).unwrap();
        // point on the ray with V_loc = s * c
        let (d1, d2) = (th.cos(), th.sin());
        let level = s * clf.c();
        let mut lo = 0.0;
        let mut hi = 10.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if clf.value(&[mid * d1, mid * d2]) < level { lo = mid } else { hi = mid }
        }
        let x = [lo * d1, lo * d2];
        let r = evaluate_state(&sys, &clf, &x, &EvalParams::default(), 0).unwrap();
        prop_assert_eq!(r.status, ValueStatus::InTarget);
        prop_assert!((r.value - clf.value(&x)).abs() <= 1e-15);
        prop_assert!((r.v - (1.0 - (-r.value).exp())).abs() <= 1e-15);
        prop_assert!(r.control[0].abs() <= 1.2);
    }
}
