//! Plücker spatial algebra. Spatial vectors are stored `[angular; linear]`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

pub type SpatialVec = Vector6<f64>;

#[inline]
pub fn angular(v: &SpatialVec) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

#[inline]
pub fn linear(v: &SpatialVec) -> Vector3<f64> {
    Vector3::new(v[3], v[4], v[5])
}

#[inline]
pub fn spatial(ang: Vector3<f64>, lin: Vector3<f64>) -> SpatialVec {
    Vector6::new(ang.x, ang.y, ang.z, lin.x, lin.y, lin.z)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Motion cross product `v ×ₘ m`.
pub fn cross_motion(v: &SpatialVec, m: &SpatialVec) -> SpatialVec {
    let (w, vl) = (angular(v), linear(v));
    let (mw, ml) = (angular(m), linear(m));
    spatial(w.cross(&mw), w.cross(&ml) + vl.cross(&mw))
}

/// Force cross product `v ×* f`.
pub fn cross_force(v: &SpatialVec, f: &SpatialVec) -> SpatialVec {
    let (w, vl) = (angular(v), linear(v));
    let (n, fl) = (angular(f), linear(f));
    spatial(w.cross(&n) + vl.cross(&fl), w.cross(&fl))
}

/// Coordinate transform from frame A to frame B.
///
/// `rot` maps A coordinates into B coordinates (the transpose of B's orientation
/// expressed in A) and `trans` is B's origin expressed in A.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn translation(r: Vector3<f64>) -> Self {
        Self {
            rot: Matrix3::identity(),
            trans: r,
        }
    }

    /// Transform into a child frame whose orientation (in A) is `orientation`
    /// and whose origin (in A) is `origin`.
    pub fn from_pose(orientation: Matrix3<f64>, origin: Vector3<f64>) -> Self {
        Self {
            rot: orientation.transpose(),
            trans: origin,
        }
    }

    pub fn apply_motion(&self, v: &SpatialVec) -> SpatialVec {
        let w = angular(v);
        let vl = linear(v);
        spatial(self.rot * w, self.rot * (vl - self.trans.cross(&w)))
    }

    pub fn apply_force(&self, f: &SpatialVec) -> SpatialVec {
        let n = angular(f);
        let fl = linear(f);
        spatial(self.rot * (n - self.trans.cross(&fl)), self.rot * fl)
    }

    /// Inverse motion transform (B → A).
    pub fn inv_apply_motion(&self, v: &SpatialVec) -> SpatialVec {
        let w = self.rot.transpose() * angular(v);
        let vl = self.rot.transpose() * linear(v) + self.trans.cross(&w);
        spatial(w, vl)
    }

    /// `Xᵀ f`: maps a force expressed in B back to A.
    pub fn transpose_apply_force(&self, f: &SpatialVec) -> SpatialVec {
        let fl = self.rot.transpose() * linear(f);
        let n = self.rot.transpose() * angular(f) + self.trans.cross(&fl);
        spatial(n, fl)
    }

    /// `other ∘ self`: first A→B by `self`, then B→C by `other`.
    pub fn then(&self, other: &Transform) -> Transform {
        Transform {
            rot: other.rot * self.rot,
            trans: self.trans + self.rot.transpose() * other.trans,
        }
    }

    pub fn motion_matrix(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rot);
        m.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-self.rot * skew(&self.trans)));
        m
    }
}

/// Rigid-body inertia about the body frame origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass.
    pub inertia_com: Matrix3<f64>,
}

impl SpatialInertia {
    pub fn zero() -> Self {
        Self {
            mass: 0.0,
            com: Vector3::zeros(),
            inertia_com: Matrix3::zeros(),
        }
    }

    pub fn mul(&self, v: &SpatialVec) -> SpatialVec {
        let w = angular(v);
        let h = self.mass * (linear(v) + w.cross(&self.com));
        spatial(self.inertia_com * w + self.com.cross(&h), h)
    }

    pub fn matrix(&self) -> Matrix6<f64> {
        let cx = skew(&self.com);
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.inertia_com + self.mass * cx * cx.transpose()));
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(self.mass * cx));
        m.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(self.mass * cx.transpose()));
        m.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(self.mass * Matrix3::identity()));
        m
    }
}

/// Rotation about a unit axis.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(axis);
    Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * k * k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn motion_transform_matches_matrix_form() {
        let r = axis_angle(&Vector3::new(0.3, -0.5, 0.8).normalize(), 0.7);
        let x = Transform::from_pose(r, Vector3::new(0.1, -0.4, 0.25));
        let v = Vector6::new(0.3, -1.0, 0.2, 1.5, 0.4, -0.9);
        assert_relative_eq!(x.apply_motion(&v), x.motion_matrix() * v, epsilon = 1e-12);
        assert_relative_eq!(x.inv_apply_motion(&x.apply_motion(&v)), v, epsilon = 1e-12);
        // Force transform is the inverse transpose of the motion transform.
        let f = Vector6::new(-0.2, 0.8, 1.1, 3.0, -2.0, 0.5);
        let m = x.motion_matrix();
        assert_relative_eq!(
            x.apply_force(&f),
            m.try_inverse().unwrap().transpose() * f,
            epsilon = 1e-12
        );
        assert_relative_eq!(x.transpose_apply_force(&f), m.transpose() * f, epsilon = 1e-12);
    }

    #[test]
    fn composition_order() {
        let a = Transform::from_pose(
            axis_angle(&Vector3::y(), 0.4),
            Vector3::new(0.2, 0.0, -0.1),
        );
        let b = Transform::from_pose(
            axis_angle(&Vector3::x(), -0.3),
            Vector3::new(0.0, 0.5, 0.3),
        );
        let v = Vector6::new(0.1, 0.2, 0.3, -0.4, 0.5, 0.6);
        assert_relative_eq!(
            a.then(&b).apply_motion(&v),
            b.apply_motion(&a.apply_motion(&v)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn inertia_matrix_matches_product() {
        let si = SpatialInertia {
            mass: 2.5,
            com: Vector3::new(0.1, -0.2, 0.05),
            inertia_com: Matrix3::from_diagonal(&Vector3::new(0.3, 0.2, 0.4)),
        };
        let v = Vector6::new(0.4, -0.3, 1.2, 0.7, 0.1, -0.6);
        assert_relative_eq!(si.mul(&v), si.matrix() * v, epsilon = 1e-12);
        let m = si.matrix();
        assert_relative_eq!(m, m.transpose(), epsilon = 1e-14);
    }
}
