//! Shared random-model generators and independent dynamics oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wbic_core::dynamics::{
    BaseMode, Body, ContactFrame, GeneralizedState, Joint, JointKind, JointLimits, KinematicTree,
    Kinematics, TaskFrame,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn vec3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-s..s),
        rng.random_range(-s..s),
        rng.random_range(-s..s),
    )
}

fn random_inertia(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let r = UnitQuaternion::from_scaled_axis(vec3(rng, 3.0));
    let d = Matrix3::from_diagonal(&Vector3::new(
        rng.random_range(0.01..1.0),
        rng.random_range(0.01..1.0),
        rng.random_range(0.01..1.0),
    ));
    let r = *r.to_rotation_matrix().matrix();
    let m = r * d * r.transpose();
    (m + m.transpose()) * 0.5
}

/// Single revolute arm on a fixed base.
pub fn pendulum() -> KinematicTree {
    KinematicTree::new(
        BaseMode::Fixed,
        9.81,
        vec![
            Body {
                name: "ground".into(),
                mass: 1.0,
                com: Vector3::zeros(),
                inertia: Matrix3::identity(),
            },
            Body {
                name: "arm".into(),
                mass: 2.0,
                com: Vector3::new(0.3, 0.0, 0.0),
                inertia: Matrix3::identity() * 0.05,
            },
        ],
        vec![Joint {
            name: "hinge".into(),
            kind: JointKind::Revolute,
            parent: 0,
            child: 1,
            origin: Vector3::zeros(),
            axis: Vector3::y(),
            limits: JointLimits::default(),
        }],
        vec![],
        vec![],
    )
    .unwrap()
}

/// Random tree with at most `max_nv` velocity coordinates (base included).
pub fn random_tree(rng: &mut ChaCha8Rng, max_nv: usize) -> KinematicTree {
    let base = match rng.random_range(0..3) {
        0 => BaseMode::Fixed,
        1 => BaseMode::Planar,
        _ => BaseMode::Spatial,
    };
    let room = max_nv - base.velocity_dofs();
    let n = rng.random_range(1..=room.max(1));
    let mut bodies = vec![];
    for i in 0..=n {
        bodies.push(Body {
            name: format!("b{i}"),
            mass: rng.random_range(0.2..5.0),
            com: vec3(rng, 0.2),
            inertia: random_inertia(rng),
        });
    }
    let mut joints = vec![];
    for i in 1..=n {
        joints.push(Joint {
            name: format!("j{i}"),
            kind: if rng.random_bool(0.5) {
                JointKind::Revolute
            } else {
                JointKind::Prismatic
            },
            axis: vec3(rng, 1.0) + Vector3::new(0.0, 0.0, 1e-3),
            parent: rng.random_range(0..i),
            child: i,
            origin: vec3(rng, 0.4),
            limits: JointLimits::default(),
        });
    }
    let contacts = vec![ContactFrame {
        name: "tip".into(),
        body: n,
        offset: vec3(rng, 0.3),
        radius: rng.random_range(0.0..0.2),
    }];
    let frames = vec![TaskFrame {
        name: "mid".into(),
        body: rng.random_range(0..=n),
        offset: vec3(rng, 0.3),
    }];
    KinematicTree::new(base, 9.81, bodies, joints, contacts, frames).unwrap()
}

pub fn random_state(rng: &mut ChaCha8Rng, tree: &KinematicTree) -> GeneralizedState {
    let mut q = DVector::from_fn(tree.nq(), |_, _| rng.random_range(-1.0..1.0));
    if tree.base() == BaseMode::Spatial {
        let quat = UnitQuaternion::from_scaled_axis(vec3(rng, 2.0));
        q[3] = quat.w;
        q[4] = quat.i;
        q[5] = quat.j;
        q[6] = quat.k;
    }
    let qd = DVector::from_fn(tree.nv(), |_, _| rng.random_range(-2.0..2.0));
    GeneralizedState::new(q, qd, 0.0)
}

/// World-frame inertia and Jacobians of every body's center of mass.
fn body_terms(kin: &Kinematics<'_>, body: usize) -> (f64, Matrix3<f64>, DMatrix<f64>, DMatrix<f64>) {
    let b = &kin.tree().bodies()[body];
    let (r, _) = kin.body_pose(body);
    let p = kin.point_position(body, &b.com);
    let j = kin.point_jacobian(body, &p);
    (
        b.mass,
        r * b.inertia * r.transpose(),
        j.rows(0, 3).into_owned(),
        j.rows(3, 3).into_owned(),
    )
}

/// `B = Σ m Jᵥᵀ Jᵥ + J_ωᵀ I J_ω` over bodies.
pub fn inertia_oracle(tree: &KinematicTree, state: &GeneralizedState) -> DMatrix<f64> {
    let kin = Kinematics::new(tree, state).unwrap();
    let mut b = DMatrix::zeros(tree.nv(), tree.nv());
    for i in 0..tree.bodies().len() {
        let (m, iw, jw, jv) = body_terms(&kin, i);
        b += m * jv.transpose() * &jv + jw.transpose() * iw * &jw;
    }
    b
}

/// Bias force from body-wise Newton-Euler equations projected through the
/// body Jacobians (Kane's method).
pub fn bias_oracle(tree: &KinematicTree, state: &GeneralizedState) -> DVector<f64> {
    let kin = Kinematics::new(tree, state).unwrap();
    let mut c = DVector::zeros(tree.nv());
    for i in 0..tree.bodies().len() {
        let body = &tree.bodies()[i];
        let (m, iw, jw, jv) = body_terms(&kin, i);
        let p = kin.point_position(i, &body.com);
        let (aw, al) = kin.point_bias(i, &p);
        let w = &jw * &state.qd;
        let w = Vector3::new(w[0], w[1], w[2]);
        let force = m * (al + Vector3::new(0.0, 0.0, tree.gravity()));
        let torque = iw * aw + w.cross(&(iw * w));
        c += jv.transpose() * force + jw.transpose() * torque;
    }
    c
}

/// Exact minimizer of a box-constrained QP by enumerating every
/// free/lower/upper activity pattern and keeping the best feasible candidate.
pub fn box_qp_enumeration(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
) -> DVector<f64> {
    let n = c.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let patterns = 3usize.pow(n as u32);
    for code in 0..patterns {
        let mut state = vec![0u8; n];
        let mut k = code;
        for s in state.iter_mut() {
            *s = (k % 3) as u8;
            k /= 3;
        }
        let mut x = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        for i in 0..n {
            match state[i] {
                1 => x[i] = lo[i],
                2 => x[i] = hi[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let fixed = h * &x;
            let rhs = DVector::from_fn(free.len(), |a, _| -(c[free[a]] + fixed[free[a]]));
            let Some(ch) = hf.cholesky() else { continue };
            let sol = ch.solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[a];
            }
        }
        if (0..n).any(|i| x[i] < lo[i] - 1e-12 || x[i] > hi[i] + 1e-12) {
            continue;
        }
        let f = 0.5 * x.dot(&(h * &x)) + c.dot(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.unwrap().1
}

/// Random strictly convex box QP with `n` variables.
pub fn random_box_qp(r: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>, Vec<f64>, Vec<f64>) {
    let a = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
    let h = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
    let c = DVector::from_fn(n, |_, _| r.random_range(-3.0..3.0));
    let lo: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..0.0)).collect();
    let hi: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    (h, c, lo, hi)
}

/// One step of `B q̈ + C = Sᵀτ + τ_ext` by semi-implicit Euler.
pub fn step_with_external(
    tree: &KinematicTree,
    state: &GeneralizedState,
    tau: &DVector<f64>,
    tau_ext: &DVector<f64>,
    dt: f64,
) -> GeneralizedState {
    let terms = wbic_core::dynamics::compute_dynamics(tree, state).unwrap();
    let mut rhs = tau_ext - &terms.c;
    let nb = tree.base_dofs();
    for j in 0..tau.len() {
        rhs[nb + j] += tau[j];
    }
    let qdd = wbic_core::dynamics::solve_inertia(&terms.b, &rhs).unwrap();
    let qd = &state.qd + qdd * dt;
    let q = tree.integrate(&state.q, &qd, dt);
    GeneralizedState::new(q, qd, state.t + dt)
}

/// Tracking result of the 1-dof Coulomb friction bench.
pub struct FrictionBench {
    pub rms_error: f64,
    pub final_estimate: f64,
    pub estimate_trace: Vec<f64>,
}

/// Rotary joint (inertia 0.1 kg·m², Coulomb friction `coulomb`) tracking
/// `sin(πt)` under computed-torque PD, optionally with adaptive
/// compensation. The RMS error is taken over the last `tail` seconds.
pub fn coulomb_bench(coulomb: f64, compensate: bool, duration: f64, tail: f64) -> FrictionBench {
    use wbic_core::friction_comp::FrictionCompState;
    let (inertia, kp, kd, dt) = (0.1, 100.0, 20.0, 1e-3);
    let mut comp = FrictionCompState::new(
        DVector::from_element(1, 20.0),
        DVector::from_element(1, 10.0),
        30.0,
    )
    .unwrap();
    let (mut x, mut v) = (0.0f64, 0.0f64);
    let steps = (duration / dt).round() as usize;
    let tail_from = steps - (tail / dt).round() as usize;
    let mut sq = 0.0;
    let mut trace = Vec::with_capacity(steps);
    let w = std::f64::consts::PI;
    for k in 0..steps {
        let t = k as f64 * dt;
        let (xd, vd, ad) = ((w * t).sin(), w * (w * t).cos(), -w * w * (w * t).sin());
        let (e, ed) = (xd - x, vd - v);
        let u_acc = ad + kp * e + kd * ed;
        let mut u = inertia * u_acc;
        if compensate {
            comp.activate(&DVector::from_element(1, v), &DVector::from_element(1, u_acc)).unwrap();
            comp.update(&DVector::from_element(1, e), &DVector::from_element(1, ed), dt).unwrap();
            u += comp.sigma[0] * comp.f_f[0];
        }
        // Coulomb friction with stiction.
        let friction = if v.abs() > 1e-6 {
            -coulomb * v.signum()
        } else if u.abs() <= coulomb {
            -u
        } else {
            -coulomb * u.signum()
        };
        let a = (u + friction) / inertia;
        let v_new = v + a * dt;
        v = if v != 0.0 && v_new.signum() != v.signum() && (u.abs() <= coulomb) { 0.0 } else { v_new };
        x += v * dt;
        if k >= tail_from {
            sq += e * e;
        }
        trace.push(comp.f_f[0]);
    }
    FrictionBench {
        rms_error: (sq / (steps - tail_from) as f64).sqrt(),
        final_estimate: comp.f_f[0],
        estimate_trace: trace,
    }
}
