//! Kinematic tree description and validation.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, UnitQuaternion, Vector3};

use super::spatial::{axis_angle, SpatialInertia, SpatialVec, Transform};
use super::DynamicsError;

/// Root joint parameterization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseMode {
    /// Root body welded to the world.
    Fixed,
    /// Sagittal floating base: `(x, z, pitch)`.
    Planar,
    /// Full floating base: position + unit quaternion, body-frame twist `[v; ω]`.
    Spatial,
}

impl BaseMode {
    pub fn velocity_dofs(self) -> usize {
        match self {
            BaseMode::Fixed => 0,
            BaseMode::Planar => 3,
            BaseMode::Spatial => 6,
        }
    }

    pub fn position_dofs(self) -> usize {
        match self {
            BaseMode::Fixed => 0,
            BaseMode::Planar => 3,
            BaseMode::Spatial => 7,
        }
    }

    /// World linear axes that carry contact force components.
    pub fn contact_axes(self) -> &'static [usize] {
        match self {
            BaseMode::Planar => &[0, 2],
            BaseMode::Fixed | BaseMode::Spatial => &[0, 1, 2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub name: String,
    pub mass: f64,
    /// Center of mass in the body frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass, body axes.
    pub inertia: Matrix3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLimits {
    pub position: (f64, f64),
    pub velocity: f64,
    pub effort: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            position: (f64::NEG_INFINITY, f64::INFINITY),
            velocity: f64::INFINITY,
            effort: f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub parent: usize,
    pub child: usize,
    /// Joint frame origin in the parent body frame.
    pub origin: Vector3<f64>,
    pub limits: JointLimits,
}

/// Wheel contact: a disc of `radius` centered at `offset` on `body`.
/// A zero radius gives a plain point contact.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactFrame {
    pub name: String,
    pub body: usize,
    pub offset: Vector3<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskFrame {
    pub name: String,
    pub body: usize,
    pub offset: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum LinkJoint {
    Fixed,
    Revolute(Vector3<f64>),
    Prismatic(Vector3<f64>),
    Free,
}

#[derive(Clone, Debug)]
pub(crate) struct Link {
    pub parent: Option<usize>,
    pub joint: LinkJoint,
    pub placement: Vector3<f64>,
    pub inertia: SpatialInertia,
    pub q_idx: usize,
    pub v_idx: usize,
}

impl Link {
    pub fn nv(&self) -> usize {
        match self.joint {
            LinkJoint::Fixed => 0,
            LinkJoint::Revolute(_) | LinkJoint::Prismatic(_) => 1,
            LinkJoint::Free => 6,
        }
    }

    /// Motion subspace columns in link coordinates.
    pub fn motion_subspace(&self) -> Vec<SpatialVec> {
        match self.joint {
            LinkJoint::Fixed => Vec::new(),
            LinkJoint::Revolute(a) => vec![SpatialVec::new(a.x, a.y, a.z, 0.0, 0.0, 0.0)],
            LinkJoint::Prismatic(a) => vec![SpatialVec::new(0.0, 0.0, 0.0, a.x, a.y, a.z)],
            LinkJoint::Free => {
                // Velocity ordering is [v; ω] so linear columns come first.
                let mut cols = Vec::with_capacity(6);
                for i in 0..3 {
                    let mut s = SpatialVec::zeros();
                    s[3 + i] = 1.0;
                    cols.push(s);
                }
                for i in 0..3 {
                    let mut s = SpatialVec::zeros();
                    s[i] = 1.0;
                    cols.push(s);
                }
                cols
            }
        }
    }

    /// Parent-to-link transform at configuration `q`.
    pub fn transform(&self, q: &DVector<f64>) -> Transform {
        let joint = match self.joint {
            LinkJoint::Fixed => Transform::identity(),
            LinkJoint::Revolute(a) => {
                Transform::from_pose(axis_angle(&a, q[self.q_idx]), Vector3::zeros())
            }
            LinkJoint::Prismatic(a) => Transform::translation(a * q[self.q_idx]),
            LinkJoint::Free => {
                let i = self.q_idx;
                let p = Vector3::new(q[i], q[i + 1], q[i + 2]);
                let quat = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                    q[i + 3],
                    q[i + 4],
                    q[i + 5],
                    q[i + 6],
                ));
                Transform::from_pose(*quat.to_rotation_matrix().matrix(), p)
            }
        };
        Transform::translation(self.placement).then(&joint)
    }
}

/// Validated floating-base kinematic tree.
#[derive(Clone, Debug)]
pub struct KinematicTree {
    base: BaseMode,
    gravity: f64,
    bodies: Vec<Body>,
    joints: Vec<Joint>,
    root: usize,
    contacts: Vec<ContactFrame>,
    frames: Vec<TaskFrame>,
    pub(crate) links: Vec<Link>,
    body_link: Vec<usize>,
    nq: usize,
    nv: usize,
}

impl KinematicTree {
    /// Builds and validates a tree. Joints may be given in any order; they are
    /// stored parent-first (depth-first, declaration order among siblings).
    pub fn new(
        base: BaseMode,
        gravity: f64,
        bodies: Vec<Body>,
        joints: Vec<Joint>,
        contacts: Vec<ContactFrame>,
        frames: Vec<TaskFrame>,
    ) -> Result<Self, DynamicsError> {
        let invalid = |msg: String| Err(DynamicsError::InvalidModel(msg));
        if bodies.is_empty() {
            return invalid("model has no bodies".into());
        }
        if !gravity.is_finite() || gravity < 0.0 {
            return invalid(format!("gravity must be finite and >= 0, got {gravity}"));
        }
        for b in &bodies {
            if !(b.mass > 0.0) || !b.mass.is_finite() {
                return invalid(format!("body '{}': mass must be > 0", b.name));
            }
            let asym = (b.inertia - b.inertia.transpose()).abs().max();
            if asym > 1e-12 * b.inertia.abs().max().max(1.0) {
                return invalid(format!("body '{}': inertia is not symmetric", b.name));
            }
            let eig = SymmetricEigen::new(b.inertia).eigenvalues;
            if eig.iter().any(|&e| !(e > 0.0)) {
                return invalid(format!(
                    "body '{}': inertia is not positive definite",
                    b.name
                ));
            }
        }
        let mut parent_of = vec![None; bodies.len()];
        for (ji, j) in joints.iter().enumerate() {
            if j.parent >= bodies.len() || j.child >= bodies.len() {
                return invalid(format!("joint '{}': body index out of range", j.name));
            }
            if j.parent == j.child {
                return invalid(format!("joint '{}': parent equals child", j.name));
            }
            if parent_of[j.child].is_some() {
                return invalid(format!(
                    "body '{}' is the child of more than one joint",
                    bodies[j.child].name
                ));
            }
            parent_of[j.child] = Some(ji);
            if j.axis.norm() < 1e-12 || !j.axis.iter().all(|v| v.is_finite()) {
                return invalid(format!("joint '{}': axis must be non-zero", j.name));
            }
            let (lo, hi) = j.limits.position;
            if !(lo < hi) {
                return invalid(format!(
                    "joint '{}': position limits need min < max, got [{lo}, {hi}]",
                    j.name
                ));
            }
            if !(j.limits.velocity > 0.0) || !(j.limits.effort > 0.0) {
                return invalid(format!(
                    "joint '{}': velocity and effort limits must be > 0",
                    j.name
                ));
            }
        }
        let roots: Vec<usize> = (0..bodies.len())
            .filter(|&b| parent_of[b].is_none())
            .collect();
        if roots.len() != 1 {
            return invalid(format!(
                "tree must have exactly one root body, found {}",
                roots.len()
            ));
        }
        let root = roots[0];

        // Depth-first ordering from the root; anything unreached is part of a cycle.
        let mut order = Vec::with_capacity(joints.len());
        let mut stack = vec![root];
        let mut seen = vec![false; bodies.len()];
        while let Some(b) = stack.pop() {
            if seen[b] {
                return invalid("kinematic loop detected".into());
            }
            seen[b] = true;
            let children: Vec<usize> = joints
                .iter()
                .enumerate()
                .filter(|(_, j)| j.parent == b)
                .map(|(i, _)| i)
                .collect();
            for &ji in children.iter().rev() {
                stack.push(joints[ji].child);
            }
            if let Some(ji) = parent_of[b] {
                order.push(ji);
            }
        }
        if seen.iter().any(|s| !s) {
            return invalid("tree contains bodies unreachable from the root (cycle)".into());
        }
        let joints: Vec<Joint> = order
            .into_iter()
            .map(|ji| {
                let mut j = joints[ji].clone();
                j.axis = j.axis.normalize();
                j
            })
            .collect();

        let mut links = Vec::new();
        let mut q_idx = 0;
        let mut v_idx = 0;
        let inertia_of = |b: &Body| SpatialInertia {
            mass: b.mass,
            com: b.com,
            inertia_com: b.inertia,
        };
        let mut push = |links: &mut Vec<Link>, parent, joint, placement, inertia| {
            let link = Link {
                parent,
                joint,
                placement,
                inertia,
                q_idx,
                v_idx,
            };
            let nv = link.nv();
            q_idx += if joint == LinkJoint::Free { 7 } else { nv };
            v_idx += nv;
            links.push(link);
            links.len() - 1
        };
        let root_link = match base {
            BaseMode::Fixed => push(
                &mut links,
                None,
                LinkJoint::Fixed,
                Vector3::zeros(),
                inertia_of(&bodies[root]),
            ),
            BaseMode::Planar => {
                let px = push(
                    &mut links,
                    None,
                    LinkJoint::Prismatic(Vector3::x()),
                    Vector3::zeros(),
                    SpatialInertia::zero(),
                );
                let pz = push(
                    &mut links,
                    Some(px),
                    LinkJoint::Prismatic(Vector3::z()),
                    Vector3::zeros(),
                    SpatialInertia::zero(),
                );
                push(
                    &mut links,
                    Some(pz),
                    LinkJoint::Revolute(Vector3::y()),
                    Vector3::zeros(),
                    inertia_of(&bodies[root]),
                )
            }
            BaseMode::Spatial => push(
                &mut links,
                None,
                LinkJoint::Free,
                Vector3::zeros(),
                inertia_of(&bodies[root]),
            ),
        };
        let mut body_link = vec![usize::MAX; bodies.len()];
        body_link[root] = root_link;
        for j in &joints {
            let lj = match j.kind {
                JointKind::Revolute => LinkJoint::Revolute(j.axis),
                JointKind::Prismatic => LinkJoint::Prismatic(j.axis),
            };
            let l = push(
                &mut links,
                Some(body_link[j.parent]),
                lj,
                j.origin,
                inertia_of(&bodies[j.child]),
            );
            body_link[j.child] = l;
        }
        let nq = q_idx;
        let nv = v_idx;

        let mut names = std::collections::HashSet::new();
        for c in &contacts {
            if c.body >= bodies.len() {
                return invalid(format!("contact '{}': body index out of range", c.name));
            }
            if !(c.radius >= 0.0) {
                return invalid(format!("contact '{}': radius must be >= 0", c.name));
            }
            if !names.insert(c.name.clone()) {
                return invalid(format!("duplicate frame name '{}'", c.name));
            }
        }
        for f in &frames {
            if f.body >= bodies.len() {
                return invalid(format!("frame '{}': body index out of range", f.name));
            }
            if f.name == COM_FRAME || !names.insert(f.name.clone()) {
                return invalid(format!("duplicate or reserved frame name '{}'", f.name));
            }
        }

        Ok(Self {
            base,
            gravity,
            bodies,
            joints,
            root,
            contacts,
            frames,
            links,
            body_link,
            nq,
            nv,
        })
    }

    pub fn base(&self) -> BaseMode {
        self.base
    }
    pub fn gravity(&self) -> f64 {
        self.gravity
    }
    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }
    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }
    pub fn root(&self) -> usize {
        self.root
    }
    pub fn contacts(&self) -> &[ContactFrame] {
        &self.contacts
    }
    pub fn frames(&self) -> &[TaskFrame] {
        &self.frames
    }
    /// Position-vector length.
    pub fn nq(&self) -> usize {
        self.nq
    }
    /// Velocity-vector length (`n + 6`, `n + 3` or `n`).
    pub fn nv(&self) -> usize {
        self.nv
    }
    /// Number of actuated joints `n`.
    pub fn n_actuated(&self) -> usize {
        self.joints.len()
    }
    pub fn base_dofs(&self) -> usize {
        self.base.velocity_dofs()
    }
    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }
    pub(crate) fn link_of_body(&self, body: usize) -> usize {
        self.body_link[body]
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }
    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }
    pub fn contact_index(&self, name: &str) -> Option<usize> {
        self.contacts.iter().position(|c| c.name == name)
    }

    /// Velocity index of actuated joint `j`.
    pub fn joint_v_index(&self, j: usize) -> usize {
        self.base_dofs() + j
    }
    /// Position index of actuated joint `j`.
    pub fn joint_q_index(&self, j: usize) -> usize {
        self.base.position_dofs() + j
    }

    /// Selection matrix `S` (n × nv) picking actuated coordinates.
    pub fn selection_matrix(&self) -> DMatrix<f64> {
        let n = self.n_actuated();
        let mut s = DMatrix::zeros(n, self.nv);
        for j in 0..n {
            s[(j, self.base_dofs() + j)] = 1.0;
        }
        s
    }

    /// Neutral configuration: zero joints, identity orientation.
    pub fn neutral(&self) -> DVector<f64> {
        let mut q = DVector::zeros(self.nq);
        if self.base == BaseMode::Spatial {
            q[3] = 1.0;
        }
        q
    }

    /// Advances a configuration by velocity `v` over `dt`.
    pub fn integrate(&self, q: &DVector<f64>, v: &DVector<f64>, dt: f64) -> DVector<f64> {
        let mut out = q.clone();
        for link in &self.links {
            match link.joint {
                LinkJoint::Fixed => {}
                LinkJoint::Revolute(_) | LinkJoint::Prismatic(_) => {
                    out[link.q_idx] += dt * v[link.v_idx];
                }
                LinkJoint::Free => {
                    let (qi, vi) = (link.q_idx, link.v_idx);
                    let quat = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                        q[qi + 3],
                        q[qi + 4],
                        q[qi + 5],
                        q[qi + 6],
                    ));
                    let vb = Vector3::new(v[vi], v[vi + 1], v[vi + 2]);
                    let wb = Vector3::new(v[vi + 3], v[vi + 4], v[vi + 5]);
                    let p = Vector3::new(q[qi], q[qi + 1], q[qi + 2]) + quat * vb * dt;
                    let next = quat * UnitQuaternion::from_scaled_axis(wb * dt);
                    out[qi] = p.x;
                    out[qi + 1] = p.y;
                    out[qi + 2] = p.z;
                    out[qi + 3] = next.w;
                    out[qi + 4] = next.i;
                    out[qi + 5] = next.j;
                    out[qi + 6] = next.k;
                }
            }
        }
        out
    }
}

/// Reserved frame name resolving to the whole-body center of mass.
pub const COM_FRAME: &str = "com";
