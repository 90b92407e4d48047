//! Weighted-QP whole-body controller over `X = [q̈; τ; f_C]`.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::dynamics::{
    compute_jacobians_with, dynamics_with, ContactQuery, DynamicsError, GeneralizedState,
    KinematicTree, Kinematics, TaskJacobians, TaskRow,
};
use crate::qp::{self, QpError, QpProblem, QpSettings};

pub const TORQUE_FAMILY: &str = "torque_bounds";
pub const CONE_FAMILY: &str = "friction_cone";
pub const NORMAL_FAMILY: &str = "normal_force";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WbcError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("QP solve failed: {0}")]
    Solver(#[from] QpError),
    #[error("invalid WBC input: {0}")]
    Invalid(String),
}

/// Desired position, velocity and acceleration of one task coordinate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaskReference {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub row: TaskRow,
    pub kp: f64,
    pub kd: f64,
    pub reference: TaskReference,
    /// Kept for configuration compatibility; tasks are hard equality rows.
    pub weight: f64,
}

/// PD task feedback: `ẍ_des = ẍ_ref + K_P(x_ref − x) + K_D(ẋ_ref − ẋ)`.
pub fn task_acceleration(task: &TaskSpec, x: f64, xd: f64) -> f64 {
    let r = &task.reference;
    r.acceleration + task.kp * (r.position - x) + task.kd * (r.velocity - xd)
}

/// Linearized friction cone of one contact.
#[derive(Clone, Debug, PartialEq)]
pub struct FrictionCone {
    pub contact: String,
    pub normal: Vector3<f64>,
    pub mu: f64,
    /// Pyramid facet count for 3-D contacts (planar contacts use the two exact edges).
    pub facets: usize,
}

impl FrictionCone {
    pub fn new(contact: &str, normal: Vector3<f64>, mu: f64) -> Self {
        Self {
            contact: contact.to_string(),
            normal,
            mu,
            facets: 4,
        }
    }

    /// Rows `G` with `G f ≤ 0` for a force expressed on `axes`.
    pub fn rows(&self, axes: &[usize]) -> DMatrix<f64> {
        let n = self.normal;
        let pick = |v: Vector3<f64>| DVector::from_iterator(axes.len(), axes.iter().map(|&a| v[a]));
        if axes.len() == 2 {
            // Sagittal plane: the tangent is the in-plane perpendicular of n.
            let t = Vector3::new(n.z, 0.0, -n.x);
            let mut g = DMatrix::zeros(2, 2);
            g.set_row(0, &(pick(t - self.mu * n)).transpose());
            g.set_row(1, &(pick(-t - self.mu * n)).transpose());
            return g;
        }
        let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let t1 = (seed - n * n.dot(&seed)).normalize();
        let t2 = n.cross(&t1);
        let k = self.facets.max(3);
        let inner = (std::f64::consts::PI / k as f64).cos();
        let mut g = DMatrix::zeros(k, axes.len());
        for j in 0..k {
            let a = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
            let d = a.cos() * t1 + a.sin() * t2;
            g.set_row(j, &pick(d - self.mu * inner * n).transpose());
        }
        g
    }
}

/// Diagonal cost weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WbcWeights {
    pub qdd: f64,
    pub tau: f64,
    pub force: f64,
    /// Weight on `τ − τ(t−Δt)`.
    pub tau_rate: f64,
    /// Weight on `f_C − f_C(t−Δt)`.
    pub force_rate: f64,
}

impl Default for WbcWeights {
    fn default() -> Self {
        Self {
            qdd: 1e-3,
            tau: 1e-6,
            force: 1e-6,
            tau_rate: 1e-4,
            force_rate: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WbcInput<'a> {
    pub tree: &'a KinematicTree,
    pub state: &'a GeneralizedState,
    pub tasks: &'a [TaskSpec],
    pub cones: &'a [FrictionCone],
    /// Generalized friction disturbance `Sᵀτ_f` (length nv) as seen by the
    /// dynamics; the solver adds the torque that cancels it.
    pub friction: &'a DVector<f64>,
    /// Known generalized external force, e.g. `J_Mᵀ f_M` from carried loads.
    pub known_external: &'a DVector<f64>,
    pub prev_tau: &'a DVector<f64>,
    pub prev_force: &'a DVector<f64>,
    pub weights: WbcWeights,
    /// Upper bound on each contact's normal force.
    pub normal_force_max: f64,
    pub dt: f64,
}

#[derive(Clone, Debug)]
pub struct WbcProblem {
    /// Equality block `Z X = N`.
    pub z: DMatrix<f64>,
    pub n: DVector<f64>,
    pub qp: QpProblem,
    pub nv: usize,
    pub n_tau: usize,
    pub n_force: usize,
    pub contact_dim: usize,
    pub tau_min: DVector<f64>,
    pub tau_max: DVector<f64>,
    /// Cone rows acting on the force block (`G f ≤ 0`).
    pub cone_rows: DMatrix<f64>,
    pub jacobians: TaskJacobians,
    /// Desired task accelerations after PD feedback.
    pub task_acc: DVector<f64>,
    pub friction: DVector<f64>,
    pub rank_deficient_contacts: bool,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WbcSolution {
    pub qdd: DVector<f64>,
    pub tau: DVector<f64>,
    pub force: DVector<f64>,
    pub iterations: usize,
    /// `‖ZX − N‖∞`.
    pub eq_residual: f64,
    pub kkt_residual: f64,
    /// Minimum of `−G f` over cone rows (≥ 0 when satisfied).
    pub cone_slack: f64,
    pub active_set: usize,
}

pub fn assemble(input: &WbcInput<'_>) -> Result<WbcProblem, WbcError> {
    let tree = input.tree;
    let kin = Kinematics::new(tree, input.state)?;
    assemble_with(&kin, input)
}

/// Same as [`assemble`] on an existing kinematics cache for `input.state`.
pub fn assemble_with(kin: &Kinematics<'_>, input: &WbcInput<'_>) -> Result<WbcProblem, WbcError> {
    let tree = input.tree;
    let nv = tree.nv();
    let na = tree.n_actuated();
    let nb = tree.base_dofs();
    let check = |what: &str, got: usize, want: usize| {
        if got != want {
            Err(WbcError::Invalid(format!("{what}: expected length {want}, got {got}")))
        } else {
            Ok(())
        }
    };
    check("friction", input.friction.len(), nv)?;
    check("known_external", input.known_external.len(), nv)?;
    check("prev_tau", input.prev_tau.len(), na)?;
    if !(input.dt > 0.0) {
        return Err(WbcError::Invalid(format!("dt must be > 0, got {}", input.dt)));
    }
    let w = &input.weights;
    for (name, v) in [
        ("qdd", w.qdd),
        ("tau", w.tau),
        ("force", w.force),
        ("tau_rate", w.tau_rate),
        ("force_rate", w.force_rate),
    ] {
        if !(v >= 0.0) {
            return Err(WbcError::Invalid(format!("weight {name} must be >= 0")));
        }
    }
    for t in input.tasks {
        if !(t.kp >= 0.0 && t.kd >= 0.0 && t.weight >= 0.0) {
            return Err(WbcError::Invalid(format!("task '{}': gains and weight must be >= 0", t.name)));
        }
    }
    for c in input.cones {
        if (c.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(WbcError::Invalid(format!("cone '{}': normal is not unit", c.contact)));
        }
        if !(c.mu > 0.0) {
            return Err(WbcError::Invalid(format!("cone '{}': mu must be > 0", c.contact)));
        }
    }

    let rows: Vec<TaskRow> = input.tasks.iter().map(|t| t.row.clone()).collect();
    let queries: Vec<ContactQuery> = input
        .cones
        .iter()
        .map(|c| ContactQuery {
            name: c.contact.clone(),
            normal: c.normal,
        })
        .collect();
    let jac = compute_jacobians_with(kin, &rows, &queries)?;
    let terms = dynamics_with(kin);
    let cd = jac.contact_dim;
    let nf = cd * input.cones.len();
    check("prev_force", input.prev_force.len(), nf)?;
    let nt = rows.len();
    let nx = nv + na + nf;

    let task_acc = DVector::from_fn(nt, |i, _| {
        task_acceleration(&input.tasks[i], jac.task_position[i], jac.task_velocity[i])
    });

    // Z = [B, −Sᵀ, −J_Cᵀ; J_R, 0, 0; J_C, 0, 0].
    let mut z = DMatrix::zeros(nv + nt + nf, nx);
    let mut n = DVector::zeros(nv + nt + nf);
    z.view_mut((0, 0), (nv, nv)).copy_from(&terms.b);
    for j in 0..na {
        z[(nb + j, nv + j)] = -1.0;
    }
    if nf > 0 {
        z.view_mut((0, nv + na), (nv, nf))
            .copy_from(&(-jac.contact.transpose()));
        z.view_mut((nv + nt, 0), (nf, nv)).copy_from(&jac.contact);
        n.rows_mut(nv + nt, nf).copy_from(&(-&jac.contact_bias));
    }
    n.rows_mut(0, nv)
        .copy_from(&(-&terms.c + input.friction + input.known_external));
    if nt > 0 {
        z.view_mut((nv, 0), (nt, nv)).copy_from(&jac.task);
        n.rows_mut(nv, nt).copy_from(&(&task_acc - &jac.task_bias));
    }

    let mut h = DMatrix::zeros(nx, nx);
    let mut c = DVector::zeros(nx);
    for i in 0..nv {
        h[(i, i)] = 2.0 * w.qdd;
    }
    for j in 0..na {
        h[(nv + j, nv + j)] = 2.0 * (w.tau + w.tau_rate);
        c[nv + j] = -2.0 * w.tau_rate * input.prev_tau[j];
    }
    for k in 0..nf {
        h[(nv + na + k, nv + na + k)] = 2.0 * (w.force + w.force_rate);
        c[nv + na + k] = -2.0 * w.force_rate * input.prev_force[k];
    }
    let mut qp = QpProblem::new(h, c);
    qp.set_equalities(z.clone(), n.clone());

    let tau_max = DVector::from_iterator(na, tree.joints().iter().map(|j| j.limits.effort));
    let tau_min = -&tau_max;
    let idx: Vec<usize> = (nv..nv + na).collect();
    qp.push_bounds(&idx, tau_min.as_slice(), tau_max.as_slice(), TORQUE_FAMILY);

    let axes = tree.base().contact_axes();
    let mut cone_rows = DMatrix::zeros(0, nf);
    for (ci, cone) in input.cones.iter().enumerate() {
        let g = cone.rows(axes);
        let mut block = DMatrix::zeros(g.nrows(), nx);
        block.view_mut((0, nv + na + ci * cd), (g.nrows(), cd)).copy_from(&g);
        qp.push_inequalities(&block, &DVector::zeros(g.nrows()), CONE_FAMILY);
        let mut grow = DMatrix::zeros(cone_rows.nrows() + g.nrows(), nf);
        grow.rows_mut(0, cone_rows.nrows()).copy_from(&cone_rows);
        grow.view_mut((cone_rows.nrows(), ci * cd), (g.nrows(), cd)).copy_from(&g);
        cone_rows = grow;

        // 0 ≤ nᵀf ≤ f_max.
        let mut nrow = DMatrix::zeros(2, nx);
        for (k, &a) in axes.iter().enumerate() {
            nrow[(0, nv + na + ci * cd + k)] = -cone.normal[a];
            nrow[(1, nv + na + ci * cd + k)] = cone.normal[a];
        }
        let rhs = DVector::from_vec(vec![0.0, input.normal_force_max]);
        qp.push_inequalities(&nrow, &rhs, NORMAL_FAMILY);
    }

    let rank_deficient_contacts = nf > 0 && {
        let sv = jac.contact.clone().svd(false, false).singular_values;
        sv.min() < 1e-8 * sv.max().max(1.0) || jac.contact.nrows() > nv
    };
    if rank_deficient_contacts {
        log::warn!("contact Jacobian is rank deficient");
    }

    Ok(WbcProblem {
        z,
        n,
        qp,
        nv,
        n_tau: na,
        n_force: nf,
        contact_dim: cd,
        tau_min,
        tau_max,
        cone_rows,
        jacobians: jac,
        task_acc,
        friction: input.friction.clone(),
        rank_deficient_contacts,
        dt: input.dt,
    })
}

pub fn solve(problem: &WbcProblem) -> Result<WbcSolution, WbcError> {
    let sol = qp::solve(&problem.qp, &QpSettings::default())?;
    let (nv, na, nf) = (problem.nv, problem.n_tau, problem.n_force);
    let x = &sol.x;
    let force = x.rows(nv + na, nf).into_owned();
    let cone_slack = if problem.cone_rows.nrows() == 0 {
        f64::INFINITY
    } else {
        (-(&problem.cone_rows * &force)).min()
    };
    Ok(WbcSolution {
        qdd: x.rows(0, nv).into_owned(),
        tau: x.rows(nv, na).into_owned(),
        force,
        iterations: sol.iterations,
        eq_residual: (&problem.z * x - &problem.n).amax(),
        kkt_residual: sol.kkt_residual,
        cone_slack,
        active_set: sol.active.len(),
    })
}
