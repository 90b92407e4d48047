//! Closed-loop impedance reference shaping.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::dynamics::Kinematics;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImpedanceError {
    #[error("invalid impedance parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite external wrench")]
    NonFiniteWrench,
    #[error("selectors do not partition the external force vector: {0}")]
    Partition(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlPoint {
    /// Base frame origin.
    Base,
    /// Whole-body center of mass.
    Centroid,
}

/// Diagonal impedance `M Δẍ + D Δẋ + K Δx = F_e` per controlled direction.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpedanceParams {
    pub m: DVector<f64>,
    pub d: DVector<f64>,
    pub k: DVector<f64>,
    pub control_point: ControlPoint,
    /// Bound on `|x_ref − x'_ref|` per direction.
    pub max_offset: f64,
}

impl ImpedanceParams {
    pub fn validate(&self) -> Result<(), ImpedanceError> {
        let n = self.m.len();
        if self.d.len() != n || self.k.len() != n {
            return Err(ImpedanceError::Dimension(format!(
                "M, D, K lengths {}, {}, {}",
                n,
                self.d.len(),
                self.k.len()
            )));
        }
        if self.m.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(ImpedanceError::InvalidParams("M entries must be > 0".into()));
        }
        if self.k.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(ImpedanceError::InvalidParams("K entries must be > 0".into()));
        }
        if self.d.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(ImpedanceError::InvalidParams("D entries must be >= 0".into()));
        }
        if !(self.max_offset > 0.0) {
            return Err(ImpedanceError::InvalidParams("max_offset must be > 0".into()));
        }
        Ok(())
    }
}

/// Position, velocity and acceleration references.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTriple {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    pub acceleration: DVector<f64>,
}

impl ReferenceTriple {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: DVector::zeros(n),
            velocity: DVector::zeros(n),
            acceleration: DVector::zeros(n),
        }
    }
}

/// One impedance step.
///
/// Returns `ẍ = ẍ'_ref + M⁻¹(F_e − DΔẋ − KΔx)` with `Δx = x − x'_ref`, and
/// integrates the updated reference `prev` by explicit Euler over `dt`.
pub fn impedance_update(
    params: &ImpedanceParams,
    raw: &ReferenceTriple,
    prev: &ReferenceTriple,
    x: &DVector<f64>,
    xd: &DVector<f64>,
    fe: &DVector<f64>,
    dt: f64,
) -> Result<ReferenceTriple, ImpedanceError> {
    let n = params.m.len();
    for (what, len) in [
        ("raw position", raw.position.len()),
        ("raw velocity", raw.velocity.len()),
        ("raw acceleration", raw.acceleration.len()),
        ("previous position", prev.position.len()),
        ("previous velocity", prev.velocity.len()),
        ("x", x.len()),
        ("xd", xd.len()),
        ("F_e", fe.len()),
    ] {
        if len != n {
            return Err(ImpedanceError::Dimension(format!("{what}: expected {n}, got {len}")));
        }
    }
    if !(dt > 0.0) {
        return Err(ImpedanceError::InvalidParams(format!("dt must be > 0, got {dt}")));
    }
    if !fe.iter().all(|v| v.is_finite()) {
        return Err(ImpedanceError::NonFiniteWrench);
    }
    let mut out = ReferenceTriple::zeros(n);
    for i in 0..n {
        let dx = x[i] - raw.position[i];
        let dxd = xd[i] - raw.velocity[i];
        let acc = raw.acceleration[i] + (fe[i] - params.d[i] * dxd - params.k[i] * dx) / params.m[i];
        out.acceleration[i] = acc;
        out.velocity[i] = prev.velocity[i] + dt * acc;
        let lim = params.max_offset;
        let pos = prev.position[i] + dt * prev.velocity[i];
        out.position[i] = pos.clamp(raw.position[i] - lim, raw.position[i] + lim);
    }
    Ok(out)
}

/// Stateful wrapper keeping the updated reference between ticks.
#[derive(Clone, Debug)]
pub struct ImpedanceFilter {
    params: ImpedanceParams,
    reference: Option<ReferenceTriple>,
}

impl ImpedanceFilter {
    pub fn new(params: ImpedanceParams) -> Result<Self, ImpedanceError> {
        params.validate()?;
        Ok(Self {
            params,
            reference: None,
        })
    }

    pub fn params(&self) -> &ImpedanceParams {
        &self.params
    }

    /// Latest updated reference, if any step has run.
    pub fn reference(&self) -> Option<&ReferenceTriple> {
        self.reference.as_ref()
    }

    pub fn step(
        &mut self,
        raw: &ReferenceTriple,
        x: &DVector<f64>,
        xd: &DVector<f64>,
        fe: &DVector<f64>,
        dt: f64,
    ) -> Result<&ReferenceTriple, ImpedanceError> {
        let prev = self.reference.clone().unwrap_or_else(|| raw.clone());
        let next = impedance_update(&self.params, raw, &prev, x, xd, fe, dt)?;
        Ok(self.reference.insert(next))
    }
}

/// Force and moment about the control point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForceRole {
    Manipulation,
    Contact,
}

/// One force source: `selector` (3 × len f_ext) extracts its force from the
/// stacked external force vector; it acts at `point` (world coordinates).
#[derive(Clone, Debug, PartialEq)]
pub struct WrenchSource {
    pub role: ForceRole,
    pub point: Vector3<f64>,
    pub selector: DMatrix<f64>,
}

/// World position of the control point.
pub fn control_point_position(kin: &Kinematics<'_>, cp: ControlPoint) -> Vector3<f64> {
    match cp {
        ControlPoint::Base => kin.body_pose(kin.tree().root()).1,
        ControlPoint::Centroid => kin.center_of_mass().0,
    }
}

/// Sum of every source's force transported to `control`:
/// `F̂_e = Σ J_{B,M,i}ᵀ S_{M,i} f̂ + Σ J_{B,C,i}ᵀ S_{C,i} f̂`.
pub fn map_external_wrench(
    control: &Vector3<f64>,
    f_ext: &DVector<f64>,
    sources: &[WrenchSource],
) -> Result<Wrench, ImpedanceError> {
    let m = f_ext.len();
    if !f_ext.iter().all(|v| v.is_finite()) {
        return Err(ImpedanceError::NonFiniteWrench);
    }
    let mut coverage = DVector::<f64>::zeros(m);
    for (i, s) in sources.iter().enumerate() {
        if s.selector.shape() != (3, m) {
            return Err(ImpedanceError::Dimension(format!(
                "selector {i}: expected 3 x {m}, got {:?}",
                s.selector.shape()
            )));
        }
        for c in 0..m {
            for r in 0..3 {
                let v = s.selector[(r, c)];
                if v != 0.0 && v != 1.0 {
                    return Err(ImpedanceError::Partition(format!(
                        "selector {i} has entry {v} (only 0/1 allowed)"
                    )));
                }
                coverage[c] += v;
            }
        }
    }
    if let Some(c) = (0..m).find(|&c| coverage[c] != 1.0) {
        return Err(ImpedanceError::Partition(format!(
            "component {c} is selected {} times",
            coverage[c]
        )));
    }
    let mut w = Wrench {
        force: Vector3::zeros(),
        moment: Vector3::zeros(),
    };
    for s in sources {
        let f: Vector3<f64> = (&s.selector * f_ext).fixed_rows::<3>(0).into_owned();
        // Point Jacobian relative to the control point is [I, −[r]×]; its
        // transpose maps f to (f, r × f).
        w.force += f;
        w.moment += (s.point - control).cross(&f);
    }
    Ok(w)
}

/// Selector picking components `offset..offset+dim` of a stacked vector of
/// length `len` into the axes `axes` of a 3-vector.
pub fn block_selector(len: usize, offset: usize, axes: &[usize]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(3, len);
    for (k, &a) in axes.iter().enumerate() {
        s[(a, offset + k)] = 1.0;
    }
    s
}
