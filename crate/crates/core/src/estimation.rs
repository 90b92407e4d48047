//! External force observation and terrain-frame estimation.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::dynamics::{compute_dynamics, DynamicsError, GeneralizedState, KinematicTree};
use crate::wbc::FrictionCone;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid estimator setting: {0}")]
    Invalid(String),
    #[error("non-finite estimator input: {0}")]
    NonFinite(&'static str),
}

pub const DEFAULT_OBSERVER_GAIN: f64 = 50.0;
pub const DEFAULT_MIN_SPEED: f64 = 0.02;
pub const DEFAULT_MIN_NORMAL_FORCE: f64 = 5.0;
/// Minimum angle between the contact force and `n̂_x` for a usable normal.
pub const DEGENERATE_ANGLE: f64 = 5.0 * std::f64::consts::PI / 180.0;
pub const DEFAULT_HISTORY_WINDOW: f64 = 0.1;

/// Generalized-momentum observer. Each step forms the raw residual
/// `B(q)(q̇ₖ − q̇ₖ₋₁)/dt + c(q, q̇) − Sᵀτ` over the previous interval and passes
/// it through the exact zero-order-hold discretization of `ṙ = K_O(τ_ext − r)`.
#[derive(Clone, Debug)]
pub struct MomentumObserver {
    gain: DVector<f64>,
    residual: DVector<f64>,
    prev: Option<GeneralizedState>,
}

impl MomentumObserver {
    pub fn new(gain: DVector<f64>) -> Result<Self, EstimationError> {
        if gain.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(EstimationError::Invalid("observer gains must be > 0".into()));
        }
        let n = gain.len();
        Ok(Self {
            gain,
            residual: DVector::zeros(n),
            prev: None,
        })
    }

    pub fn uniform(nv: usize, gain: f64) -> Result<Self, EstimationError> {
        Self::new(DVector::from_element(nv, gain))
    }

    pub fn residual(&self) -> &DVector<f64> {
        &self.residual
    }

    pub fn reset(&mut self) {
        self.residual.fill(0.0);
        self.prev = None;
    }

    /// Advances the observer with the state at the end of an interval during
    /// which `tau` (actuated joints) was applied. Returns `τ̂_ext`.
    pub fn step(
        &mut self,
        tree: &KinematicTree,
        state: &GeneralizedState,
        tau: &DVector<f64>,
        dt: f64,
    ) -> Result<&DVector<f64>, EstimationError> {
        let nv = tree.nv();
        if self.gain.len() != nv {
            return Err(DynamicsError::DimensionMismatch {
                what: "observer gain",
                expected: nv,
                got: self.gain.len(),
            }
            .into());
        }
        if tau.len() != tree.n_actuated() {
            return Err(DynamicsError::DimensionMismatch {
                what: "applied torque",
                expected: tree.n_actuated(),
                got: tau.len(),
            }
            .into());
        }
        if !(dt > 0.0) {
            return Err(EstimationError::Invalid(format!("dt = {dt} must be > 0")));
        }
        if tau.iter().any(|v| !v.is_finite()) {
            return Err(EstimationError::NonFinite("applied torque"));
        }
        state.check(tree)?;
        let Some(prev) = self.prev.replace(state.clone()) else {
            return Ok(&self.residual);
        };
        let terms = compute_dynamics(tree, &prev)?;
        let mut raw = &terms.b * (&state.qd - &prev.qd) / dt + &terms.c;
        let base = tree.base_dofs();
        for j in 0..tau.len() {
            raw[base + j] -= tau[j];
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EstimationError::NonFinite("dynamics terms"));
        }
        for i in 0..nv {
            let a = (-self.gain[i] * dt).exp();
            self.residual[i] = a * self.residual[i] + (1.0 - a) * raw[i];
        }
        Ok(&self.residual)
    }
}

/// Minimum-norm solution of `J_eᵀ f = τ̂_ext`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceEstimate {
    pub force: DVector<f64>,
    /// `J_e` lacks full row rank over the given contacts.
    pub rank_deficient: bool,
}

pub fn estimate_contact_force(
    tau_ext: &DVector<f64>,
    j_e: &DMatrix<f64>,
) -> Result<ForceEstimate, EstimationError> {
    if j_e.ncols() != tau_ext.len() {
        return Err(DynamicsError::DimensionMismatch {
            what: "contact Jacobian columns",
            expected: tau_ext.len(),
            got: j_e.ncols(),
        }
        .into());
    }
    if tau_ext.iter().chain(j_e.iter()).any(|v| !v.is_finite()) {
        return Err(EstimationError::NonFinite("force estimation input"));
    }
    let m = j_e.nrows();
    if m == 0 {
        return Ok(ForceEstimate {
            force: DVector::zeros(0),
            rank_deficient: false,
        });
    }
    let svd = j_e.transpose().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax.max(1.0);
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    let force = svd
        .solve(tau_ext, tol)
        .map_err(|e| EstimationError::Invalid(e.to_string()))?;
    Ok(ForceEstimate {
        force,
        rank_deficient: rank < m,
    })
}

/// Height-field constraint `ψ = n̂ᵀ(x − x₀) = 0` linearized at a contact.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSurface {
    /// Normalized constraint Jacobian (one row per constraint).
    pub jacobian: DMatrix<f64>,
}

impl ConstraintSurface {
    /// Surface from the gradient `∂ψ/∂x`, normalized to unit rows.
    pub fn from_gradient(gradient: &DMatrix<f64>) -> Result<Self, EstimationError> {
        let mut jacobian = gradient.clone();
        for mut row in jacobian.row_iter_mut() {
            let n = row.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(EstimationError::Invalid("zero constraint gradient".into()));
            }
            row /= n;
        }
        Ok(Self { jacobian })
    }

    /// Surface `z = h(x, y)` at a point with slopes `(∂h/∂x, ∂h/∂y)`.
    pub fn height_field(dhdx: f64, dhdy: f64) -> Self {
        let g = DMatrix::from_row_slice(1, 3, &[-dhdx, -dhdy, 1.0]);
        Self::from_gradient(&g).expect("height-field gradient is never zero")
    }

    /// Surface through a travelled direction `d`, assuming no lateral bank:
    /// the normal is world up with its component along `d` removed.
    pub fn from_travel(d: &Vector3<f64>) -> Result<Self, EstimationError> {
        let n = d.norm();
        if !(n > 0.0) {
            return Err(EstimationError::Invalid("zero travel direction".into()));
        }
        let t = d / n;
        let up = Vector3::z() - t * t.z;
        if up.norm() < 1e-9 {
            return Err(EstimationError::Invalid("vertical travel direction".into()));
        }
        Self::from_gradient(&DMatrix::from_row_slice(1, 3, up.as_slice()))
    }

    /// `P = I − J⁺J`.
    pub fn projector(&self) -> Matrix3<f64> {
        let j = &self.jacobian;
        let pinv = j
            .clone()
            .pseudo_inverse(1e-12)
            .expect("pseudo-inverse with non-negative epsilon");
        let p = DMatrix::identity(3, 3) - pinv * j;
        Matrix3::from_iterator(p.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NxEstimate {
    pub nx: Vector3<f64>,
    /// Speed was below threshold and `nx` is the held previous value.
    pub stale: bool,
}

/// `n̂_x = P ẋ / ‖P ẋ‖`; holds `prev` below `v_min`.
pub fn estimate_nx(
    projector: &Matrix3<f64>,
    v_forward: &Vector3<f64>,
    prev: &Vector3<f64>,
    v_min: f64,
) -> NxEstimate {
    let pv = projector * v_forward;
    if v_forward.norm() <= v_min || pv.norm() <= 1e-12 || !pv.iter().all(|v| v.is_finite()) {
        return NxEstimate {
            nx: *prev,
            stale: true,
        };
    }
    NxEstimate {
        nx: pv.normalize(),
        stale: false,
    }
}

/// Orthonormal contact frame `{n̂_x, n̂_y, n̂_z}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TerrainFrame {
    pub nx: Vector3<f64>,
    pub ny: Vector3<f64>,
    pub nz: Vector3<f64>,
    pub t: f64,
}

impl TerrainFrame {
    pub fn flat(t: f64) -> Self {
        Self {
            nx: Vector3::x(),
            ny: Vector3::y(),
            nz: Vector3::z(),
            t,
        }
    }

    /// Frame whose normal lies in the sagittal plane at `slope` (rad, rising
    /// along +x).
    pub fn sagittal(slope: f64, t: f64) -> Self {
        let (s, c) = slope.sin_cos();
        Self {
            nx: Vector3::new(c, 0.0, s),
            ny: Vector3::y(),
            nz: Vector3::new(-s, 0.0, c),
            t,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameEstimate {
    pub frame: TerrainFrame,
    /// Contact too light; previous frame held.
    pub held: bool,
    /// Force nearly parallel to `n̂_x`; previous frame held.
    pub degenerate: bool,
}

/// Normal from the contact force with its `n̂_x` component removed, then
/// `n̂_y = n̂_z × n̂_x`. The normal points up (positive world z).
pub fn estimate_frame(
    f_c: &Vector3<f64>,
    nx: &Vector3<f64>,
    prev: &TerrainFrame,
    f_min: f64,
    t: f64,
) -> FrameEstimate {
    let hold = |held, degenerate| FrameEstimate {
        frame: *prev,
        held,
        degenerate,
    };
    if !f_c.iter().chain(nx.iter()).all(|v| v.is_finite()) || (nx.norm() - 1.0).abs() > 1e-6 {
        return hold(true, true);
    }
    let fz = f_c - nx * f_c.dot(nx);
    let fzn = fz.norm();
    if fzn <= f_min {
        return hold(true, false);
    }
    if fzn <= f_c.norm() * DEGENERATE_ANGLE.sin() {
        return hold(true, true);
    }
    let mut nz = fz / fzn;
    if nz.z < 0.0 {
        nz = -nz;
    }
    // Remove the rounding residue of the projection so nᵀ_z n̂_x stays at
    // machine precision.
    nz = (nz - nx * nz.dot(nx)).normalize();
    let ny = nz.cross(nx);
    FrameEstimate {
        frame: TerrainFrame { nx: *nx, ny, nz, t },
        held: false,
        degenerate: false,
    }
}

/// Friction cones aligned with the current frames; `None` keeps the
/// previous cone.
pub fn update_cones(
    frames: &[Option<TerrainFrame>],
    previous: &[FrictionCone],
    mu: f64,
) -> Vec<FrictionCone> {
    previous
        .iter()
        .zip(frames)
        .map(|(cone, frame)| match frame {
            Some(f) => FrictionCone {
                normal: f.nz,
                mu,
                ..cone.clone()
            },
            None => cone.clone(),
        })
        .collect()
}

/// Sliding window of a point's positions, giving the travelled direction.
#[derive(Clone, Debug)]
pub struct TrajectoryHistory {
    window: f64,
    samples: VecDeque<(f64, Vector3<f64>)>,
}

impl TrajectoryHistory {
    pub fn new(window: f64) -> Self {
        Self {
            window,
            samples: VecDeque::new(),
        }
    }

    pub fn push(&mut self, t: f64, p: Vector3<f64>) {
        self.samples.push_back((t, p));
        while let Some(&(t0, _)) = self.samples.front() {
            if t - t0 > self.window + 1e-12 {
                self.samples.pop_front();
            } else {
                break;
            }
        }
    }

    /// Mean velocity across the window.
    pub fn velocity(&self) -> Option<Vector3<f64>> {
        let (t0, p0) = self.samples.front()?;
        let (t1, p1) = self.samples.back()?;
        (t1 - t0 > 0.0).then(|| (p1 - p0) / (t1 - t0))
    }
}

/// Per-contact terrain estimation state for the closed loop.
#[derive(Clone, Debug)]
pub struct TerrainEstimator {
    pub histories: Vec<TrajectoryHistory>,
    pub frames: Vec<TerrainFrame>,
    pub stale: Vec<bool>,
    pub degenerate: Vec<bool>,
    pub v_min: f64,
    pub f_min: f64,
}

impl TerrainEstimator {
    pub fn new(contacts: usize, window: f64) -> Self {
        Self {
            histories: vec![TrajectoryHistory::new(window); contacts],
            frames: vec![TerrainFrame::flat(0.0); contacts],
            stale: vec![true; contacts],
            degenerate: vec![false; contacts],
            v_min: DEFAULT_MIN_SPEED,
            f_min: DEFAULT_MIN_NORMAL_FORCE,
        }
    }

    /// Updates contact `i` from its wheel-center position and estimated force.
    pub fn update(&mut self, i: usize, t: f64, center: Vector3<f64>, f_c: &Vector3<f64>) -> &TerrainFrame {
        self.histories[i].push(t, center);
        let prev = self.frames[i];
        let nx = match self.histories[i].velocity() {
            Some(v) => match ConstraintSurface::from_travel(&v) {
                Ok(s) => estimate_nx(&s.projector(), &v, &prev.nx, self.v_min),
                Err(_) => NxEstimate { nx: prev.nx, stale: true },
            },
            None => NxEstimate { nx: prev.nx, stale: true },
        };
        self.stale[i] = nx.stale;
        let est = estimate_frame(f_c, &nx.nx, &prev, self.f_min, t);
        self.degenerate[i] = est.degenerate;
        self.frames[i] = est.frame;
        &self.frames[i]
    }
}
