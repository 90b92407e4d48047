mod common;

use nalgebra::{DMatrix, DVector, Vector3};

use common::pendulum;
use proptest::prelude::*;
use rand::Rng;
use wbic_core::dynamics::GeneralizedState;
use wbic_core::estimation::*;

#[test]
fn step_response_is_first_order() {
    let tree = pendulum();
    let dt = 1e-3;
    let mut obs = MomentumObserver::uniform(1, 50.0).unwrap();
    let mut s = GeneralizedState::at_rest(&tree);
    let tau = DVector::zeros(1);
    let ext = DVector::from_element(1, 5.0);
    obs.step(&tree, &s, &tau, dt).unwrap();
    for k in 1..=100 {
        s = common::step_with_external(&tree, &s, &tau, &ext, dt);
        let r = obs.step(&tree, &s, &tau, dt).unwrap()[0];
        let t = k as f64 * dt;
        let expect = 5.0 * (1.0 - (-50.0 * t).exp());
        assert!((r - expect).abs() <= 0.02 * expect, "t={t}: {r} vs {expect}");
        if k == 20 {
            assert!((r - 3.16).abs() < 0.02 * 3.16);
        }
    }
}

#[test]
fn no_external_torque_no_residual() {
    let tree = pendulum();
    let mut obs = MomentumObserver::uniform(1, 50.0).unwrap();
    let mut s = GeneralizedState::new(DVector::from_element(1, 0.4), DVector::from_element(1, -1.0), 0.0);
    let tau = DVector::from_element(1, 1.5);
    for _ in 0..500 {
        obs.step(&tree, &s, &tau, 2e-3).unwrap();
        s = common::step_with_external(&tree, &s, &tau, &DVector::zeros(1), 2e-3);
    }
    assert!(obs.residual().norm() < 1e-6);
}

#[test]
fn constant_torque_recovered_on_random_trees() {
    let mut r = common::rng(11);
    let dt = 2e-3;
    for trial in 0..100 {
        let tree = common::random_tree(&mut r, 8);
        let mut s = common::random_state(&mut r, &tree);
        s.qd *= 0.2;
        let nv = tree.nv();
        let tau = DVector::from_fn(tree.n_actuated(), |_, _| r.random_range(-2.0..2.0));
        let ext = DVector::from_fn(nv, |_, _| r.random_range(-5.0..5.0));
        let mut obs = MomentumObserver::uniform(nv, DEFAULT_OBSERVER_GAIN).unwrap();
        obs.step(&tree, &s, &tau, dt).unwrap();
        // 10 time constants, then average over one more.
        let settle = (10.0 / DEFAULT_OBSERVER_GAIN / dt).round() as usize;
        let mut avg = DVector::zeros(nv);
        for k in 0..settle + 10 {
            s = common::step_with_external(&tree, &s, &tau, &ext, dt);
            let res = obs.step(&tree, &s, &tau, dt).unwrap();
            if k >= settle {
                avg += res / 10.0;
            }
        }
        let err = (&avg - &ext).amax();
        assert!(err < 0.01 * ext.amax(), "trial {trial}: err {err}");
    }
}

#[test]
fn rejects_bad_inputs() {
    let tree = pendulum();
    assert!(MomentumObserver::uniform(1, 0.0).is_err());
    let mut obs = MomentumObserver::uniform(1, 50.0).unwrap();
    let s = GeneralizedState::at_rest(&tree);
    assert!(obs.step(&tree, &s, &DVector::from_element(1, f64::NAN), 1e-3).is_err());
    assert!(obs.step(&tree, &s, &DVector::zeros(2), 1e-3).is_err());
}

#[test]
fn two_contact_forces_from_generalized_torque() {
    let j = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.5, 0.0, 0.0, 1.0, 0.0, -0.5]);
    let f = DVector::from_row_slice(&[392.4, 392.4]);
    let e = estimate_contact_force(&(j.transpose() * &f), &j).unwrap();
    assert!((e.force - f).amax() < 1e-9);
    let dup = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
    assert!(estimate_contact_force(&DVector::zeros(2), &dup).unwrap().rank_deficient);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn frame_is_orthonormal_and_right_handed(
        slope in -0.3f64..0.3,
        normal in 20.0f64..900.0,
        friction_ratio in -0.5f64..0.5,
    ) {
        let truth = TerrainFrame::sagittal(slope, 0.0);
        let f = truth.nz * normal + truth.nx * friction_ratio * normal;
        let e = estimate_frame(&f, &truth.nx, &TerrainFrame::flat(0.0), DEFAULT_MIN_NORMAL_FORCE, 1.0);
        let fr = e.frame;
        prop_assert!(fr.nz.dot(&fr.nx).abs() < 1e-9);
        prop_assert!(fr.ny.dot(&fr.nx).abs() < 1e-9);
        prop_assert!(fr.ny.dot(&fr.nz).abs() < 1e-9);
        for v in [fr.nx, fr.ny, fr.nz] {
            prop_assert!((v.norm() - 1.0).abs() < 1e-9);
        }
        prop_assert!((fr.nx.cross(&fr.ny) - fr.nz).norm() < 1e-9);
        prop_assert!(fr.nz.angle(&truth.nz) < 1e-9);
    }

    #[test]
    fn projector_is_idempotent(dx in -1.0f64..1.0, dy in -1.0f64..1.0, tx in 0.1f64..1.0, tz in -0.3f64..0.3) {
        for s in [ConstraintSurface::height_field(dx, dy), ConstraintSurface::from_travel(&Vector3::new(tx, 0.0, tz)).unwrap()] {
            let p = s.projector();
            prop_assert!((p * p - p).amax() < 1e-9);
            prop_assert!((s.jacobian.row(0).norm() - 1.0).abs() < 1e-12);
        }
    }
}
