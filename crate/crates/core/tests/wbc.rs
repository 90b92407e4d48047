mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use wbic_core::dynamics::{
    wheel_legged_robot, Axis, BaseMode, Body, GeneralizedState, Joint, JointKind, JointLimits,
    KinematicTree, TaskRow, TaskTerm,
};
use wbic_core::qp::{self, QpProblem, QpSettings};
use wbic_core::wbc::{
    assemble, solve, FrictionCone, TaskReference, TaskSpec, WbcInput, WbcWeights,
};

use common::{box_qp_enumeration, random_box_qp, rng};

fn standing_state(tree: &KinematicTree) -> GeneralizedState {
    let mut s = GeneralizedState::at_rest(tree);
    s.q[1] = 0.6;
    s.q[3] = 0.15;
    s.q[5] = 0.15;
    s
}

fn height_row() -> TaskRow {
    TaskRow {
        terms: vec![
            TaskTerm { frame: "base".into(), axis: Axis::Z, weight: 1.0 },
            TaskTerm { frame: "wheel_front".into(), axis: Axis::Z, weight: -0.5 },
            TaskTerm { frame: "wheel_rear".into(), axis: Axis::Z, weight: -0.5 },
        ],
    }
}

fn task(name: &str, row: TaskRow, kp: f64, kd: f64, pos: f64) -> TaskSpec {
    TaskSpec {
        name: name.into(),
        row,
        kp,
        kd,
        reference: TaskReference { position: pos, velocity: 0.0, acceleration: 0.0 },
        weight: 1.0,
    }
}

fn stand_tasks() -> Vec<TaskSpec> {
    let centroid = TaskRow {
        terms: vec![
            TaskTerm { frame: "wheel_front".into(), axis: Axis::X, weight: 0.5 },
            TaskTerm { frame: "wheel_rear".into(), axis: Axis::X, weight: 0.5 },
        ],
    };
    vec![
        task("height", height_row(), 1000.0, 20.0, 0.5),
        task("pitch", TaskRow::single("base", Axis::RotY), 300.0, 15.0, 0.0),
        task("centroid", centroid, 800.0, 10.0, 0.0),
    ]
}

fn flat_cones(mu: f64) -> Vec<FrictionCone> {
    vec![
        FrictionCone::new("wheel_front", Vector3::z(), mu),
        FrictionCone::new("wheel_rear", Vector3::z(), mu),
    ]
}

struct Fixture {
    tree: KinematicTree,
    state: GeneralizedState,
    tasks: Vec<TaskSpec>,
    cones: Vec<FrictionCone>,
    zeros_nv: DVector<f64>,
    prev_tau: DVector<f64>,
    prev_f: DVector<f64>,
}

fn fixture() -> Fixture {
    let tree = wheel_legged_robot();
    let state = standing_state(&tree);
    Fixture {
        zeros_nv: DVector::zeros(tree.nv()),
        prev_tau: DVector::zeros(4),
        prev_f: DVector::zeros(4),
        state,
        tree,
        tasks: stand_tasks(),
        cones: flat_cones(0.1),
    }
}

impl Fixture {
    fn input(&self, weights: WbcWeights) -> WbcInput<'_> {
        WbcInput {
            tree: &self.tree,
            state: &self.state,
            tasks: &self.tasks,
            cones: &self.cones,
            friction: &self.zeros_nv,
            known_external: &self.zeros_nv,
            prev_tau: &self.prev_tau,
            prev_force: &self.prev_f,
            weights,
            normal_force_max: 4.0 * 80.0 * 9.81,
            dt: 2e-3,
        }
    }
}

#[test]
fn static_stand_supports_total_weight() {
    let fx = fixture();
    let p = assemble(&fx.input(WbcWeights::default())).unwrap();
    assert_eq!(p.z.nrows(), 7 + 3 + 4);
    let s = solve(&p).unwrap();
    let fz = s.force[1] + s.force[3];
    assert_relative_eq!(fz, 80.0 * 9.81, epsilon = 1e-6);
    assert!(s.eq_residual < 1e-6 * (1.0 + p.n.amax()));
    assert!(s.kkt_residual < 1e-6);
    assert!(s.cone_slack >= -1e-8);
    // Inner planar cone: |f_t| ≤ μ f_n on flat ground.
    for c in 0..2 {
        assert!(s.force[2 * c].abs() <= 0.1 * s.force[2 * c + 1] + 1e-9);
    }
}

#[test]
fn zero_gravity_zero_targets_gives_zero_solution() {
    let mut fx = fixture();
    fx.tree = KinematicTree::new(
        BaseMode::Planar,
        0.0,
        fx.tree.bodies().to_vec(),
        fx.tree.joints().to_vec(),
        fx.tree.contacts().to_vec(),
        fx.tree.frames().to_vec(),
    )
    .unwrap();
    // The standing pose already sits at every task reference.
    let s = solve(&assemble(&fx.input(WbcWeights::default())).unwrap()).unwrap();
    assert!(s.qdd.amax() < 1e-9 && s.tau.amax() < 1e-9 && s.force.amax() < 1e-9);
}

#[test]
fn matches_dense_kkt_oracle_when_no_bound_is_active() {
    let mut fx = fixture();
    fx.cones = flat_cones(1.0);
    let w = WbcWeights { qdd: 1.0, tau: 1.0, force: 1.0, tau_rate: 0.0, force_rate: 0.0 };
    let p = assemble(&fx.input(w)).unwrap();
    let s = solve(&p).unwrap();
    assert_eq!(s.active_set, 0);
    // [H Zᵀ; Z 0] [X; λ] = [−c; N] solved by least squares (Z may be rank deficient).
    let nx = p.z.ncols();
    let m = p.z.nrows();
    let mut k = DMatrix::zeros(nx + m, nx + m);
    k.view_mut((0, 0), (nx, nx)).copy_from(&p.qp.h);
    k.view_mut((0, nx), (nx, m)).copy_from(&p.z.transpose());
    k.view_mut((nx, 0), (m, nx)).copy_from(&p.z);
    let mut rhs = DVector::zeros(nx + m);
    rhs.rows_mut(0, nx).copy_from(&(-&p.qp.c));
    rhs.rows_mut(nx, m).copy_from(&p.n);
    let sol = k.svd(true, true).solve(&rhs, 1e-12).unwrap();
    let f_oracle = sol.rows(p.nv + p.n_tau, p.n_force);
    assert!((f_oracle - &s.force).amax() < 1e-6);
}

#[test]
fn one_dof_torque_limit_binds() {
    let body = |n: &str, m: f64| Body {
        name: n.into(),
        mass: m,
        com: Vector3::zeros(),
        inertia: Matrix3::identity(),
    };
    let tree = KinematicTree::new(
        BaseMode::Fixed,
        9.81,
        vec![body("ground", 1.0), body("slider", 10.0)],
        vec![Joint {
            name: "lift".into(),
            kind: JointKind::Prismatic,
            axis: Vector3::z(),
            parent: 0,
            child: 1,
            origin: Vector3::zeros(),
            limits: JointLimits { effort: 50.0, ..JointLimits::default() },
        }],
        vec![],
        vec![],
    )
    .unwrap();
    let state = GeneralizedState::at_rest(&tree);
    let zero = DVector::zeros(1);
    let input = WbcInput {
        tree: &tree,
        state: &state,
        tasks: &[],
        cones: &[],
        friction: &zero,
        known_external: &zero,
        prev_tau: &zero,
        prev_force: &DVector::zeros(0),
        weights: WbcWeights { qdd: 1.0, tau: 1e-6, force: 0.0, tau_rate: 0.0, force_rate: 0.0 },
        normal_force_max: 1.0,
        dt: 2e-3,
    };
    let s = solve(&assemble(&input).unwrap()).unwrap();
    assert_eq!(s.tau[0], 50.0);
    assert_relative_eq!(s.qdd[0], (50.0 - 98.1) / 10.0, epsilon = 1e-9);
}

#[test]
fn dynamic_consistency_with_friction_term() {
    let fx = fixture();
    let mut friction = DVector::zeros(7);
    friction[4] = 3.0;
    let mut input = fx.input(WbcWeights::default());
    input.friction = &friction;
    let p = assemble(&input).unwrap();
    let s = solve(&p).unwrap();
    let d = wbic_core::dynamics::compute_dynamics(&fx.tree, &fx.state).unwrap();
    let j = &p.jacobians.contact;
    let mut st_tau = DVector::zeros(7);
    st_tau.rows_mut(3, 4).copy_from(&s.tau);
    let r = &d.b * &s.qdd + &d.c - st_tau - &friction - j.transpose() * &s.force;
    assert!(r.amax() < 1e-6);
}

#[test]
fn torque_rate_weight_is_monotone() {
    let mut fx = fixture();
    fx.prev_tau = DVector::from_vec(vec![300.0, 5.0, 450.0, -5.0]);
    fx.prev_f = DVector::from_vec(vec![10.0, 300.0, -10.0, 480.0]);
    let mut last = f64::INFINITY;
    for rt in [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1] {
        let w = WbcWeights { tau_rate: rt, ..WbcWeights::default() };
        let s = solve(&assemble(&fx.input(w)).unwrap()).unwrap();
        let d = (&s.tau - &fx.prev_tau).norm();
        assert!(d <= last + 1e-9, "R_tau {rt}: {d} > {last}");
        last = d;
    }
}

#[test]
fn repeated_solve_is_bit_identical() {
    let fx = fixture();
    let p = assemble(&fx.input(WbcWeights::default())).unwrap();
    let a = solve(&p).unwrap();
    let b = solve(&p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn box_qp_matches_enumeration_oracle() {
    let mut r = rng(21);
    for trial in 0..50 {
        let n = 1 + trial % 8;
        let (h, c, lo, hi) = random_box_qp(&mut r, n);
        let mut p = QpProblem::new(h.clone(), c.clone());
        p.push_bounds(&(0..n).collect::<Vec<_>>(), &lo, &hi, "box");
        let s = qp::solve(&p, &QpSettings { regularization: 0.0, ..QpSettings::default() }).unwrap();
        let oracle = box_qp_enumeration(&h, &c, &lo, &hi);
        assert!((&s.x - oracle).amax() < 1e-8, "trial {trial}");
    }
}

#[test]
fn infeasible_cone_is_reported_by_family() {
    let mut fx = fixture();
    // Demand a large forward acceleration on a nearly frictionless floor.
    fx.cones = flat_cones(1e-3);
    fx.tasks[2].reference.acceleration = 3.0;
    let err = solve(&assemble(&fx.input(WbcWeights::default())).unwrap()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("friction_cone") || msg.contains("normal_force"), "{msg}");
}
