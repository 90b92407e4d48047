//! Model-free friction compensation: a signum-gated adaptive friction
//! estimate mapped to joint torques.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrictionCompError {
    #[error("invalid friction compensation setting: {0}")]
    Invalid(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite friction compensation input")]
    NonFinite,
}

pub const DEFAULT_VELOCITY_DEADBAND: f64 = 1e-4;
pub const DEFAULT_FORCE_LIMIT: f64 = 30.0;

/// `+1` when moving forward (or at rest and pushed forward), `−1` for the
/// reverse, `0` at rest with no push. `|ẋ| ≤ eps` counts as rest.
pub fn signum_activation(xd: f64, u: f64, eps: f64) -> f64 {
    if xd > eps {
        1.0
    } else if xd < -eps {
        -1.0
    } else if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-direction friction estimate with adaptation law
/// `Ḟ_f = k_P σ (ė + k_λ e)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrictionCompState {
    pub f_f: DVector<f64>,
    pub k_p: DVector<f64>,
    pub k_lambda: DVector<f64>,
    pub sigma: DVector<f64>,
    pub f_max: f64,
    pub eps_v: f64,
}

impl FrictionCompState {
    pub fn new(k_p: DVector<f64>, k_lambda: DVector<f64>, f_max: f64) -> Result<Self, FrictionCompError> {
        if k_p.len() != k_lambda.len() {
            return Err(FrictionCompError::Dimension {
                what: "k_lambda",
                expected: k_p.len(),
                got: k_lambda.len(),
            });
        }
        if k_p.iter().chain(k_lambda.iter()).any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(FrictionCompError::Invalid("gains must be >= 0".into()));
        }
        if !(f_max > 0.0) {
            return Err(FrictionCompError::Invalid(format!("f_max = {f_max} must be > 0")));
        }
        let n = k_p.len();
        Ok(Self {
            f_f: DVector::zeros(n),
            k_p,
            k_lambda,
            sigma: DVector::zeros(n),
            f_max,
            eps_v: DEFAULT_VELOCITY_DEADBAND,
        })
    }

    pub fn dim(&self) -> usize {
        self.f_f.len()
    }

    /// Refreshes `σ` from task velocity and desired acceleration.
    pub fn activate(&mut self, xd: &DVector<f64>, u: &DVector<f64>) -> Result<(), FrictionCompError> {
        self.check("velocity", xd)?;
        self.check("desired acceleration", u)?;
        for i in 0..self.dim() {
            self.sigma[i] = signum_activation(xd[i], u[i], self.eps_v);
        }
        Ok(())
    }

    /// `F_f ← clamp(F_f + dt k_P σ (ė + k_λ e), ±F_max)`.
    pub fn update(&mut self, e: &DVector<f64>, ed: &DVector<f64>, dt: f64) -> Result<(), FrictionCompError> {
        self.check("error", e)?;
        self.check("error rate", ed)?;
        if !(dt > 0.0) {
            return Err(FrictionCompError::Invalid(format!("dt = {dt} must be > 0")));
        }
        for i in 0..self.dim() {
            let rate = self.k_p[i] * self.sigma[i] * (ed[i] + self.k_lambda[i] * e[i]);
            self.f_f[i] = (self.f_f[i] + dt * rate).clamp(-self.f_max, self.f_max);
        }
        Ok(())
    }

    /// `τ_f = Jᵀ σ F_f`.
    pub fn to_joint_torques(&self, j: &DMatrix<f64>) -> Result<DVector<f64>, FrictionCompError> {
        to_joint_torques(j, &self.sigma, &self.f_f)
    }

    fn check(&self, what: &'static str, v: &DVector<f64>) -> Result<(), FrictionCompError> {
        if v.len() != self.dim() {
            return Err(FrictionCompError::Dimension {
                what,
                expected: self.dim(),
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FrictionCompError::NonFinite);
        }
        Ok(())
    }
}

/// `τ_f = Jᵀ σ F_f` with `σ` diagonal.
pub fn to_joint_torques(
    j: &DMatrix<f64>,
    sigma: &DVector<f64>,
    f_f: &DVector<f64>,
) -> Result<DVector<f64>, FrictionCompError> {
    if j.nrows() != sigma.len() || sigma.len() != f_f.len() {
        return Err(FrictionCompError::Dimension {
            what: "task Jacobian rows",
            expected: f_f.len(),
            got: j.nrows(),
        });
    }
    Ok(j.transpose() * sigma.component_mul(f_f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_table() {
        let eps = DEFAULT_VELOCITY_DEADBAND;
        assert_eq!(signum_activation(0.1, -5.0, eps), 1.0);
        assert_eq!(signum_activation(0.0, 3.0, eps), 1.0);
        assert_eq!(signum_activation(0.0, 0.0, eps), 0.0);
        let vs = [-1.0, 0.0, 1.0];
        for &v in &vs {
            for &u in &vs {
                let want = if v != 0.0 { v } else { u };
                assert_eq!(signum_activation(v, u, eps), want, "v={v} u={u}");
            }
        }
    }

    #[test]
    fn adaptation_step() {
        let mut s = FrictionCompState::new(DVector::from_element(1, 100.0), DVector::from_element(1, 10.0), 30.0).unwrap();
        let one = DVector::from_element(1, 1.0);
        s.activate(&one, &one).unwrap();
        s.update(&DVector::from_element(1, 0.01), &DVector::zeros(1), 0.002).unwrap();
        assert!((s.f_f[0] - 0.02).abs() < 1e-15);
        // Zero error is a fixed point; zero activation freezes the estimate.
        s.update(&DVector::zeros(1), &DVector::zeros(1), 0.002).unwrap();
        assert!((s.f_f[0] - 0.02).abs() < 1e-15);
        s.activate(&DVector::zeros(1), &DVector::zeros(1)).unwrap();
        s.update(&DVector::from_element(1, 5.0), &one, 0.002).unwrap();
        assert!((s.f_f[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn clamp_bounds_estimate() {
        let mut s = FrictionCompState::new(DVector::from_element(1, 1e6), DVector::from_element(1, 1.0), 30.0).unwrap();
        let one = DVector::from_element(1, 1.0);
        s.activate(&one, &one).unwrap();
        s.update(&one, &one, 1.0).unwrap();
        assert_eq!(s.f_f[0], 30.0);
    }

    #[test]
    fn joint_torque_mapping() {
        let j = DMatrix::identity(1, 1);
        let t = to_joint_torques(&j, &DVector::from_element(1, 1.0), &DVector::from_element(1, 2.0)).unwrap();
        assert_eq!(t[0], 2.0);
        let z = to_joint_torques(&DMatrix::from_element(2, 3, 1.0), &DVector::from_element(2, 1.0), &DVector::zeros(2)).unwrap();
        assert_eq!(z, DVector::zeros(3));
    }

    #[test]
    fn rejects_non_finite() {
        let mut s = FrictionCompState::new(DVector::from_element(1, 1.0), DVector::from_element(1, 1.0), 30.0).unwrap();
        let nan = DVector::from_element(1, f64::NAN);
        assert_eq!(s.update(&nan, &nan, 0.01), Err(FrictionCompError::NonFinite));
    }
}
