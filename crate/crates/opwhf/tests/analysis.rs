mod common;

use opwhf::analysis::{
    classify_control_mode, compare_joint_separate, control_mode_map, critical_frictions, loss_sensitivities,
    pipe_energy_loss, three_point_estimate, three_point_factors, ControlMode, GeometryLaw, ParamBox, SensitivityQuery,
    UncertaintySpec, INTERSECTION_TOL,
};
use opwhf::scheduler::{solve_opwhf, SolverOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_query(rng: &mut ChaCha8Rng) -> SensitivityQuery {
    SensitivityQuery {
        mass: rng.gen_range(0.5..50.0),
        friction: rng.gen_range(0.1..100.0),
        xi: rng.gen_range(1e-5..1e-3),
        tau: rng.gen_range(40.0..110.0),
        tau0: rng.gen_range(0.0..20.0),
        ..SensitivityQuery::default()
    }
}

/// Five-point central difference.
fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

#[test]
fn sensitivities_match_finite_differences() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..100 {
        let qy = random_query(&mut rng);
        let q = rng.gen_range(0.05..2.0);
        let (dq, dtau) = loss_sensitivities(&qy, q).unwrap();
        let fq = central(|x| pipe_energy_loss(&qy, x).unwrap(), q, 1e-3 * q);
        let ft = central(|t| pipe_energy_loss(&SensitivityQuery { tau: t, ..qy }, q).unwrap(), qy.tau, 1e-2);
        assert!((dq - fq).abs() <= 1e-6 * dq.abs(), "query {k}: dE/dq {dq} vs {fq}");
        assert!((dtau - ft).abs() <= 1e-6 * dtau.abs(), "query {k}: dE/dtau {dtau} vs {ft}");
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn derivative_examples() {
    let qy = SensitivityQuery { friction: 1e-300, tau: 10.0, tau0: 10.0, ..SensitivityQuery::default() };
    assert!(loss_sensitivities(&qy, 0.5).unwrap().0.abs() < 1e-250);
    let qy = SensitivityQuery { mass: 1.0, gravity: 9.81, friction: 1.0, tau: 10.0, tau0: 10.0, ..SensitivityQuery::default() };
    assert!((pipe_energy_loss(&qy, 1.0).unwrap() - 9.81).abs() < 1e-12);
}

#[test]
fn friction_extremes_fix_the_mode() {
    let base = SensitivityQuery::default();
    let (f_temp, f_flow) = critical_frictions(&base).unwrap();
    assert!(0.0 < f_temp && f_temp < f_flow, "{f_temp} {f_flow}");
    let (m, _) = classify_control_mode(&SensitivityQuery { friction: 1e-6, ..base }).unwrap();
    assert_eq!(m, ControlMode::Temperature);
    let (m, _) = classify_control_mode(&SensitivityQuery { friction: 1.01 * f_flow, ..base }).unwrap();
    assert_eq!(m, ControlMode::FlowRate);
    let (m, _) = classify_control_mode(&SensitivityQuery { friction: 0.99 * f_temp, ..base }).unwrap();
    assert_eq!(m, ControlMode::Temperature);
}

#[test]
fn mid_range_crossing_is_mixed_with_both_intersections() {
    let base = SensitivityQuery::default();
    let (f_temp, f_flow) = critical_frictions(&base).unwrap();
    let (m, x) = classify_control_mode(&SensitivityQuery { friction: 0.5 * (f_temp + f_flow), ..base }).unwrap();
    assert_eq!(m, ControlMode::Mixed);
    let (a, b) = (x.first.expect("first intersection"), x.second.expect("second intersection"));
    for v in [a, b] {
        assert!(base.q_lo < v && v < base.q_hi, "{v}");
    }
}

fn rank(m: ControlMode) -> u8 {
    match m {
        ControlMode::Temperature => 0,
        ControlMode::Mixed => 1,
        ControlMode::FlowRate => 2,
    }
}

#[test]
fn mode_map_over_the_default_box() {
    let bx = ParamBox::default();
    assert_eq!(bx.length, (20.0, 400.0));
    assert_eq!(bx.diameter, (0.2, 1.2));
    let n = 20;
    let map = control_mode_map(&SensitivityQuery::default(), &bx, &GeometryLaw::default(), n).unwrap();
    let modes: std::collections::BTreeSet<u8> = map.points.iter().map(|p| rank(p.mode)).collect();
    assert_eq!(modes.len(), 3, "modes present: {modes:?}");
    // flow control owns the long-thin side of the 150 m / 0.6 m corner and
    // never reaches the short-wide one
    for p in &map.points {
        if p.length <= 150.0 && p.diameter >= 0.6 {
            assert_ne!(p.mode, ControlMode::FlowRate, "FlowRate at ({}, {})", p.length, p.diameter);
        }
        if p.length >= 150.0 && p.diameter <= 0.5 {
            assert_eq!(p.mode, ControlMode::FlowRate, "({}, {}) is {:?}", p.length, p.diameter, p.mode);
        }
    }
    assert_eq!(map.at(n - 1, 0).mode, ControlMode::FlowRate);
    assert_eq!(map.at(0, n - 1).mode, ControlMode::Temperature);
    for i in 0..n {
        for j in 1..n {
            // longer pipes never move towards temperature control, wider ones never towards flow control
            assert!(rank(map.at(j, i).mode) >= rank(map.at(j - 1, i).mode));
            assert!(rank(map.at(i, j).mode) <= rank(map.at(i, j - 1).mode));
        }
    }
    let csv = map.to_csv();
    for label in ["FlowRate", "Temperature", "Mixed"] {
        assert!(csv.contains(label));
    }
    assert_eq!(csv.lines().count(), 1 + n * n);
}

#[test]
fn short_wide_and_long_thin_pipes() {
    let law = GeometryLaw::default();
    let at = |l: f64, d: f64| classify_control_mode(&SensitivityQuery { friction: law.friction(l, d), ..SensitivityQuery::default() }).unwrap().0;
    assert_eq!(at(20.0, 1.0), ControlMode::Temperature);
    assert_eq!(at(300.0, 0.3), ControlMode::FlowRate);
}

#[test]
fn map_rejects_degenerate_resolution() {
    assert!(control_mode_map(&SensitivityQuery::default(), &ParamBox::default(), &GeometryLaw::default(), 1).is_err());
}

proptest! {
    #[test]
    fn mode_is_invariant_under_mass_scaling(k in 0.01f64..100.0, f in 1e-3f64..1e4) {
        let base = SensitivityQuery { friction: f, ..SensitivityQuery::default() };
        let (m0, x0) = classify_control_mode(&base).unwrap();
        let (m1, x1) = classify_control_mode(&SensitivityQuery { mass: base.mass * k, ..base }).unwrap();
        prop_assert_eq!(m0, m1);
        for (a, b) in [(x0.first, x1.first), (x0.second, x1.second)] {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 2.0 * INTERSECTION_TOL),
                (None, None) => {}
                other => prop_assert!(false, "intersection presence changed: {:?}", other),
            }
        }
    }

    #[test]
    fn convex_response_spread_grows_with_sigma(
        a in proptest::collection::vec(0.0f64..5.0, 4),
        b in proptest::collection::vec(0.0f64..5.0, 4),
        s in proptest::collection::vec(0.0f64..0.25, 4),
    ) {
        prop_assume!(a.iter().chain(&b).any(|v| *v > 1e-3) && s.iter().any(|v| *v > 1e-3));
        let f = |x: &[f64]| -> Result<f64, String> { Ok((0..4).map(|i| a[i] * x[i] + b[i] * x[i] * x[i]).sum()) };
        let lo = three_point_factors(&s, f).unwrap();
        let s2: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        let hi = three_point_factors(&s2, f).unwrap();
        prop_assert!(hi.relative_std >= lo.relative_std, "{} then {}", lo.relative_std, hi.relative_std);
    }
}

#[test]
fn linear_toy_matches_closed_form() {
    let e = three_point_factors(&[0.05, 0.05], |x| Ok(x[0] + x[1])).unwrap();
    let expect = 2f64.sqrt() * 0.05 / 2.0;
    assert!((e.relative_std - expect).abs() <= 1e-6, "{} vs {expect}", e.relative_std);
    assert!((e.mean - 2.0).abs() < 1e-12);
}

#[test]
fn zero_uncertainty_gives_exactly_zero() {
    let s = common::fixture("micro");
    let opts = SolverOptions::default();
    let calls = std::sync::atomic::AtomicUsize::new(0);
    let e = three_point_estimate(&s, &UncertaintySpec::default(), |sc| {
        calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        solve_opwhf(sc, &opts).map(|o| o.objective).map_err(|e| e.to_string())
    })
    .unwrap();
    assert_eq!(e.relative_std, 0.0);
    assert_eq!(e.std, 0.0);
    assert_eq!(calls.into_inner(), 1);
}

#[test]
fn micro_spread_grows_when_sigma_doubles() {
    let s = common::fixture("micro");
    let opts = SolverOptions::default();
    let solve = |sc: &opwhf::model::Scenario| solve_opwhf(sc, &opts).map(|o| o.objective).map_err(|e| e.to_string());
    let u = UncertaintySpec { sigma_pv: 0.0, sigma_p: 0.05, sigma_w: 0.05, sigma_h: 0.05 };
    let lo = three_point_estimate(&s, &u, solve).unwrap();
    let hi = three_point_estimate(&s, &u.scaled(2.0), solve).unwrap();
    assert!(lo.relative_std > 0.0);
    assert!(hi.relative_std > lo.relative_std, "{} then {}", lo.relative_std, hi.relative_std);
}

#[test]
fn failed_solve_names_the_input() {
    let s = common::fixture("micro");
    let err = three_point_estimate(&s, &UncertaintySpec { sigma_h: 0.1, ..Default::default() }, |sc| {
        if sc.heat.loads[0].demand[0] > s.heat.loads[0].demand[0] {
            Err("boom".into())
        } else {
            Ok(1.0)
        }
    })
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("heat") && msg.contains("boom"), "{msg}");
    assert!(three_point_estimate(&s, &UncertaintySpec::uniform(0.9), |_| Ok(1.0)).is_err());
}

#[test]
fn decoupled_breakdown_rows_agree_and_sum() {
    let s = common::fixture("decoupled");
    let b = compare_joint_separate(&s, &SolverOptions::default()).unwrap();
    assert!(b.joint_certified && b.separate_certified);
    assert!((b.joint.total - b.separate.total).abs() <= 1e-9 * b.separate.total.abs());
    for r in [b.joint, b.separate] {
        assert_eq!(r.power + r.water + r.heating, r.total);
    }
    let csv = b.to_csv();
    assert!(csv.starts_with("item,separate,joint\n"));
    let total = csv.lines().find(|l| l.starts_with("total,")).unwrap();
    let cols: Vec<&str> = total.split(',').collect();
    assert_eq!(cols[1], cols[2]);
}

#[test]
fn micro_breakdown_sums_and_joint_is_no_worse() {
    let s = common::fixture("micro");
    let b = compare_joint_separate(&s, &SolverOptions::default()).unwrap();
    for r in [b.joint, b.separate] {
        assert_eq!(r.power + r.water + r.heating, r.total);
    }
    assert!(b.joint.total <= b.separate.total + 1e-6 * b.separate.total.abs());
}
