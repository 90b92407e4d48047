mod common;

use nalgebra::{DVector, Vector3};
use proptest::prelude::*;
use rand::Rng;
use wbic_core::dynamics::{
    generalized_force, wheel_legged_robot, GeneralizedState, Kinematics, PointForce, WheelLeggedLayout,
};
use wbic_core::impedance::*;

fn body_params() -> ImpedanceParams {
    ImpedanceParams {
        m: DVector::from_element(1, 80.0),
        d: DVector::from_element(1, 600.0),
        k: DVector::from_element(1, 1e5),
        control_point: ControlPoint::Base,
        max_offset: 0.2,
    }
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

/// Closed loop with a plant that tracks the updated reference exactly.
#[test]
fn wrench_step_settles_at_compliance() {
    let p = body_params();
    let mut filter = ImpedanceFilter::new(p.clone()).unwrap();
    let raw = ReferenceTriple::zeros(1);
    let fe = v1(1000.0);
    // Explicit Euler removes about ω²dt/2 of decay rate from this lightly
    // damped mode, so the continuous-time oracle needs a fine step.
    let dt = 1e-4;
    // Envelope time constant of M Δẍ + D Δẋ + K Δx.
    let tau = 2.0 * p.m[0] / p.d[0];
    let steps = (5.0 * tau / dt).ceil() as usize;
    let (mut x, mut xd) = (v1(0.0), v1(0.0));
    for _ in 0..steps {
        let r = filter.step(&raw, &x, &xd, &fe, dt).unwrap();
        x = r.position.clone();
        xd = r.velocity.clone();
    }
    let expect = fe[0] / p.k[0];
    assert!((x[0] - expect).abs() < 0.01 * expect, "{} vs {expect}", x[0]);
}

#[test]
fn unforced_energy_is_non_increasing() {
    let p = body_params();
    let raw = ReferenceTriple::zeros(1);
    let accel = |x: f64, v: f64| {
        impedance_update(&p, &raw, &raw, &v1(x), &v1(v), &v1(0.0), 1e-3).unwrap().acceleration[0]
    };
    let energy = |x: f64, v: f64| 0.5 * p.m[0] * v * v + 0.5 * p.k[0] * x * x;
    let (mut x, mut v) = (0.01, -0.2);
    let e0 = energy(x, v);
    let mut prev = e0;
    let h = 1e-4;
    for _ in 0..20_000 {
        let (k1x, k1v) = (v, accel(x, v));
        let (k2x, k2v) = (v + 0.5 * h * k1v, accel(x + 0.5 * h * k1x, v + 0.5 * h * k1v));
        let (k3x, k3v) = (v + 0.5 * h * k2v, accel(x + 0.5 * h * k2x, v + 0.5 * h * k2v));
        let (k4x, k4v) = (v + h * k3v, accel(x + h * k3x, v + h * k3v));
        x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        let e = energy(x, v);
        assert!(e <= prev + 1e-9 * e0, "{e} > {prev}");
        prev = e;
    }
    assert!(prev < 1e-3 * e0);
}

#[test]
fn wrench_matches_generalized_force_on_planar_robot() {
    let tree = wheel_legged_robot();
    let layout = WheelLeggedLayout::from_tree(&tree).unwrap();
    let mut r = common::rng(5);
    for _ in 0..50 {
        let mut q = DVector::from_row_slice(&[0.0, 0.6, 0.0, 0.15, 0.0, 0.15, 0.0]);
        for i in 0..7 {
            q[i] += r.random_range(-0.1..0.1);
        }
        let state = GeneralizedState::new(q, DVector::zeros(7), 0.0);
        let kin = Kinematics::new(&tree, &state).unwrap();
        // Stacked (x, z) per wheel contact plus one (x, z) manipulation force at the arms.
        let f = DVector::from_fn(6, |_, _| r.random_range(-300.0..300.0));
        let points = [
            kin.contact_point(layout.contact_front, &Vector3::z()),
            kin.contact_point(layout.contact_rear, &Vector3::z()),
            kin.point_position(layout.torso, &Vector3::new(0.0, 0.0, 0.25)),
        ];
        let bodies = [layout.wheel_front, layout.wheel_rear, layout.torso];
        let roles = [ForceRole::Contact, ForceRole::Contact, ForceRole::Manipulation];
        let sources: Vec<WrenchSource> = (0..3)
            .map(|i| WrenchSource {
                role: roles[i],
                point: points[i],
                selector: block_selector(6, 2 * i, &[0, 2]),
            })
            .collect();
        let control = control_point_position(&kin, ControlPoint::Base);
        let w = map_external_wrench(&control, &f, &sources).unwrap();
        // Independent oracle: generalized force on the planar base coordinates
        // (x, z, pitch about the base origin).
        let forces: Vec<PointForce> = (0..3)
            .map(|i| PointForce {
                body: bodies[i],
                point: points[i],
                force: Vector3::new(f[2 * i], 0.0, f[2 * i + 1]),
            })
            .collect();
        let g = generalized_force(&kin, &forces);
        assert!((w.force.x - g[0]).abs() < 1e-9);
        assert!((w.force.z - g[1]).abs() < 1e-9);
        assert!((w.moment.y - g[2]).abs() < 1e-9, "{} vs {}", w.moment.y, g[2]);
    }
}

#[test]
fn symmetric_contacts_cancel_pitch() {
    let f = DVector::from_row_slice(&[0.0, 0.0, 400.0, 0.0, 0.0, 400.0]);
    let sources = [
        WrenchSource {
            role: ForceRole::Contact,
            point: Vector3::new(0.3, 0.0, -0.5),
            selector: block_selector(6, 0, &[0, 1, 2]),
        },
        WrenchSource {
            role: ForceRole::Contact,
            point: Vector3::new(-0.3, 0.0, -0.5),
            selector: block_selector(6, 3, &[0, 1, 2]),
        },
    ];
    let w = map_external_wrench(&Vector3::zeros(), &f, &sources).unwrap();
    assert_eq!(w.force, Vector3::new(0.0, 0.0, 800.0));
    assert!(w.moment.norm() < 1e-12);
}

proptest! {
    #[test]
    fn update_is_affine(
        a in prop::array::uniform3(-1.0f64..1.0),
        b in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let p = body_params();
        let raw = ReferenceTriple {
            position: v1(0.5),
            velocity: v1(0.1),
            acceleration: v1(-0.3),
        };
        let acc = |dx: f64, dxd: f64, fe: f64| {
            impedance_update(&p, &raw, &raw, &v1(0.5 + dx), &v1(0.1 + dxd), &v1(fe), 2e-3)
                .unwrap()
                .acceleration[0]
        };
        let base = acc(0.0, 0.0, 0.0);
        let sa = acc(a[0] * 0.01, a[1], a[2] * 100.0) - base;
        let sb = acc(b[0] * 0.01, b[1], b[2] * 100.0) - base;
        let sab = acc((a[0] + b[0]) * 0.01, a[1] + b[1], (a[2] + b[2]) * 100.0) - base;
        prop_assert!((sab - sa - sb).abs() < 1e-12 * (1.0 + sab.abs() + sa.abs() + sb.abs()));
    }
}
