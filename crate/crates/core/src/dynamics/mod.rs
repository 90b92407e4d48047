//! Floating-base rigid-body kinematics and dynamics.

mod algorithms;
mod kinematics;
mod model;
mod model_file;
mod robot;
pub mod spatial;

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

pub use kinematics::{
    compute_jacobians, compute_jacobians_with, Axis, ContactQuery, Kinematics, TaskJacobians,
    TaskRow, TaskTerm,
};
pub use model::{
    BaseMode, Body, ContactFrame, Joint, JointKind, JointLimits, KinematicTree, TaskFrame,
    COM_FRAME,
};
pub use model_file::{parse_model, parse_model_file};
pub use robot::{wheel_legged_robot, WheelLeggedLayout, WHEEL_LEGGED_MODEL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("base quaternion norm {0} is not within 1e-9 of 1")]
    QuaternionNorm(f64),
    #[error("inertia matrix is not positive definite")]
    SingularInertia,
    #[error("unknown frame '{0}'")]
    UnknownFrame(String),
}

/// Robot configuration, velocity and time.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub t: f64,
}

impl GeneralizedState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>, t: f64) -> Self {
        Self { q, qd, t }
    }

    /// Neutral configuration with zero velocity.
    pub fn at_rest(tree: &KinematicTree) -> Self {
        Self::new(tree.neutral(), DVector::zeros(tree.nv()), 0.0)
    }

    pub fn check(&self, tree: &KinematicTree) -> Result<(), DynamicsError> {
        check_len("q", tree.nq(), self.q.len())?;
        check_len("qd", tree.nv(), self.qd.len())?;
        if !self.q.iter().all(|v| v.is_finite()) {
            return Err(DynamicsError::NonFinite("q"));
        }
        if !self.qd.iter().all(|v| v.is_finite()) {
            return Err(DynamicsError::NonFinite("qd"));
        }
        if tree.base() == BaseMode::Spatial {
            let norm = self.q.rows(3, 4).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(DynamicsError::QuaternionNorm(norm));
            }
        }
        Ok(())
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), DynamicsError> {
    if expected != got {
        return Err(DynamicsError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// Inertia matrix `B` and bias force `C` (gravity plus velocity products).
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsTerms {
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// A point force applied to a body; `point` and `force` in world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointForce {
    pub body: usize,
    pub point: Vector3<f64>,
    pub force: Vector3<f64>,
}

pub fn compute_dynamics(
    tree: &KinematicTree,
    state: &GeneralizedState,
) -> Result<DynamicsTerms, DynamicsError> {
    let kin = Kinematics::new(tree, state)?;
    Ok(dynamics_with(&kin))
}

/// Same as [`compute_dynamics`] on an existing kinematics cache.
pub fn dynamics_with(kin: &Kinematics<'_>) -> DynamicsTerms {
    let b = algorithms::crba(kin);
    let c = algorithms::rnea(kin, &DVector::zeros(kin.tree().nv()), true);
    DynamicsTerms { b, c }
}

/// Generalized force `B q̈ + C` producing acceleration `qdd`.
pub fn inverse_dynamics(
    tree: &KinematicTree,
    state: &GeneralizedState,
    qdd: &DVector<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    check_len("qdd", tree.nv(), qdd.len())?;
    let kin = Kinematics::new(tree, state)?;
    Ok(algorithms::rnea(&kin, qdd, true))
}

/// `Jᵀ f` summed over point forces.
pub fn generalized_force(kin: &Kinematics<'_>, forces: &[PointForce]) -> DVector<f64> {
    let mut out = DVector::zeros(kin.tree().nv());
    for pf in forces {
        let j = kin.point_jacobian(pf.body, &pf.point);
        out += j.rows(3, 3).transpose() * pf.force;
    }
    out
}

/// `q̈ = B⁻¹(Sᵀτ + Σ Jᵀf − C)`.
pub fn forward_dynamics(
    tree: &KinematicTree,
    state: &GeneralizedState,
    tau: &DVector<f64>,
    forces: &[PointForce],
) -> Result<DVector<f64>, DynamicsError> {
    check_len("tau", tree.n_actuated(), tau.len())?;
    if !tau.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite("tau"));
    }
    let kin = Kinematics::new(tree, state)?;
    let terms = dynamics_with(&kin);
    let mut rhs = generalized_force(&kin, forces) - &terms.c;
    let nb = tree.base_dofs();
    for j in 0..tau.len() {
        rhs[nb + j] += tau[j];
    }
    solve_inertia(&terms.b, &rhs)
}

/// Solves `B x = rhs` by Cholesky.
pub fn solve_inertia(b: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
    let chol = b.clone().cholesky().ok_or(DynamicsError::SingularInertia)?;
    Ok(chol.solve(rhs))
}

/// Kinetic and gravitational potential energy (zero potential at `z = 0`).
pub fn energy(tree: &KinematicTree, state: &GeneralizedState) -> Result<(f64, f64), DynamicsError> {
    let kin = Kinematics::new(tree, state)?;
    let b = algorithms::crba(&kin);
    let kinetic = 0.5 * state.qd.dot(&(&b * &state.qd));
    let (com, _, _) = kin.center_of_mass();
    Ok((kinetic, tree.total_mass() * tree.gravity() * com.z))
}
