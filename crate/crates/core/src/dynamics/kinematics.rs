use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::model::{KinematicTree, COM_FRAME};
use super::spatial::{angular, cross_motion, linear, SpatialVec, Transform};
use super::{DynamicsError, GeneralizedState};

/// Forward-kinematics cache for one state: link poses, velocities and the
/// velocity-product (zero joint acceleration) accelerations.
#[derive(Clone, Debug)]
pub struct Kinematics<'a> {
    tree: &'a KinematicTree,
    pub(crate) xup: Vec<Transform>,
    pub(crate) xworld: Vec<Transform>,
    pub(crate) vel: Vec<SpatialVec>,
    pub(crate) bias: Vec<SpatialVec>,
    /// Motion-subspace columns in world coordinates (origin-referenced).
    cols_world: Vec<Vec<SpatialVec>>,
    pub(crate) qd: DVector<f64>,
}

impl<'a> Kinematics<'a> {
    pub fn new(tree: &'a KinematicTree, state: &GeneralizedState) -> Result<Self, DynamicsError> {
        state.check(tree)?;
        let n = tree.links.len();
        let mut xup = Vec::with_capacity(n);
        let mut xworld: Vec<Transform> = Vec::with_capacity(n);
        let mut vel: Vec<SpatialVec> = Vec::with_capacity(n);
        let mut bias: Vec<SpatialVec> = Vec::with_capacity(n);
        let mut cols_world = Vec::with_capacity(n);
        for link in &tree.links {
            let x = link.transform(&state.q);
            let cols = link.motion_subspace();
            let mut vj = SpatialVec::zeros();
            for (k, s) in cols.iter().enumerate() {
                vj += s * state.qd[link.v_idx + k];
            }
            let (xw, v, c) = match link.parent {
                Some(p) => {
                    let v = x.apply_motion(&vel[p]) + vj;
                    let c = x.apply_motion(&bias[p]) + cross_motion(&v, &vj);
                    (xworld[p].then(&x), v, c)
                }
                None => (x, vj, SpatialVec::zeros()),
            };
            cols_world.push(cols.iter().map(|s| xw.inv_apply_motion(s)).collect());
            xup.push(x);
            xworld.push(xw);
            vel.push(v);
            bias.push(c);
        }
        Ok(Self {
            tree,
            xup,
            xworld,
            vel,
            bias,
            cols_world,
            qd: state.qd.clone(),
        })
    }

    pub fn tree(&self) -> &KinematicTree {
        self.tree
    }

    /// World orientation and origin of a body frame.
    pub fn body_pose(&self, body: usize) -> (Matrix3<f64>, Vector3<f64>) {
        let x = &self.xworld[self.tree.link_of_body(body)];
        (x.rot.transpose(), x.trans)
    }

    pub fn point_position(&self, body: usize, offset: &Vector3<f64>) -> Vector3<f64> {
        let (r, p) = self.body_pose(body);
        p + r * offset
    }

    /// 6 × nv Jacobian `[angular; linear]` of the body-fixed point currently at
    /// `point` (world coordinates).
    pub fn point_jacobian(&self, body: usize, point: &Vector3<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(6, self.tree.nv());
        let mut link = Some(self.tree.link_of_body(body));
        while let Some(l) = link {
            let info = &self.tree.links[l];
            for (k, s) in self.cols_world[l].iter().enumerate() {
                let w = angular(s);
                let v = linear(s) + w.cross(point);
                let c = info.v_idx + k;
                j[(0, c)] = w.x;
                j[(1, c)] = w.y;
                j[(2, c)] = w.z;
                j[(3, c)] = v.x;
                j[(4, c)] = v.y;
                j[(5, c)] = v.z;
            }
            link = info.parent;
        }
        j
    }

    /// World angular and linear velocity of the body-fixed point at `point`.
    pub fn point_velocity(&self, body: usize, point: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let (r, p) = self.body_pose(body);
        let v = &self.vel[self.tree.link_of_body(body)];
        let local = r.transpose() * (point - p);
        let w = angular(v);
        (r * w, r * (linear(v) + w.cross(&local)))
    }

    /// `J̇ q̇` for the body-fixed point at `point`: world angular and classical
    /// linear acceleration at zero joint acceleration.
    pub fn point_bias(&self, body: usize, point: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let (r, p) = self.body_pose(body);
        let l = self.tree.link_of_body(body);
        let (v, a) = (&self.vel[l], &self.bias[l]);
        let local = r.transpose() * (point - p);
        let (w, vl) = (angular(v), linear(v));
        let (aw, al) = (angular(a), linear(a));
        let lin = al + aw.cross(&local) + w.cross(&(vl + w.cross(&local)));
        (r * aw, r * lin)
    }

    /// Whole-body center of mass: position, 3 × nv Jacobian and `J̇ q̇`.
    pub fn center_of_mass(&self) -> (Vector3<f64>, DMatrix<f64>, Vector3<f64>) {
        let total = self.tree.total_mass();
        let mut pos = Vector3::zeros();
        let mut jac = DMatrix::zeros(3, self.tree.nv());
        let mut bias = Vector3::zeros();
        for (bi, b) in self.tree.bodies().iter().enumerate() {
            let p = self.point_position(bi, &b.com);
            let w = b.mass / total;
            pos += w * p;
            jac += w * self.point_jacobian(bi, &p).rows(3, 3);
            bias += w * self.point_bias(bi, &p).1;
        }
        (pos, jac, bias)
    }

    /// World position of a contact's disc center.
    pub fn contact_center(&self, contact: usize) -> Vector3<f64> {
        let c = &self.tree.contacts()[contact];
        self.point_position(c.body, &c.offset)
    }

    /// Contact point on a wheel given the surface normal at contact.
    pub fn contact_point(&self, contact: usize, normal: &Vector3<f64>) -> Vector3<f64> {
        let c = &self.tree.contacts()[contact];
        self.contact_center(contact) - c.radius * normal
    }

    /// Resolves a named point frame (task frame, contact center, or `com`):
    /// returns `(position, orientation, 6×nv jacobian, angular bias, linear bias)`.
    fn frame(&self, name: &str) -> Result<FrameKinematics, DynamicsError> {
        if name == COM_FRAME {
            let (p, j, b) = self.center_of_mass();
            // Centroid has no orientation; angular rows come from the root body.
            let root = self.tree.root();
            let (r, _) = self.body_pose(root);
            let jr = self.point_jacobian(root, &p);
            let (wr, _) = self.point_velocity(root, &p);
            let (ab, _) = self.point_bias(root, &p);
            let mut jac = DMatrix::zeros(6, self.tree.nv());
            jac.rows_mut(0, 3).copy_from(&jr.rows(0, 3));
            jac.rows_mut(3, 3).copy_from(&j);
            let lin_vel = &j * &self.qd;
            return Ok(FrameKinematics {
                position: p,
                orientation: r,
                jacobian: jac,
                angular_velocity: wr,
                linear_velocity: lin_vel.fixed_rows::<3>(0).into_owned(),
                angular_bias: ab,
                linear_bias: b,
            });
        }
        let (body, offset) = if let Some(f) = self.tree.frames().iter().find(|f| f.name == name) {
            (f.body, f.offset)
        } else if let Some(c) = self.tree.contacts().iter().find(|c| c.name == name) {
            (c.body, c.offset)
        } else {
            return Err(DynamicsError::UnknownFrame(name.to_string()));
        };
        let (r, _) = self.body_pose(body);
        let p = self.point_position(body, &offset);
        let (w, v) = self.point_velocity(body, &p);
        let (aw, al) = self.point_bias(body, &p);
        Ok(FrameKinematics {
            position: p,
            orientation: r,
            jacobian: self.point_jacobian(body, &p),
            angular_velocity: w,
            linear_velocity: v,
            angular_bias: aw,
            linear_bias: al,
        })
    }
}

struct FrameKinematics {
    position: Vector3<f64>,
    orientation: Matrix3<f64>,
    jacobian: DMatrix<f64>,
    angular_velocity: Vector3<f64>,
    linear_velocity: Vector3<f64>,
    angular_bias: Vector3<f64>,
    linear_bias: Vector3<f64>,
}

/// Task coordinate selector. Rotation coordinates are the angle about a single
/// world axis, which is exact for planar motion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
    RotX,
    RotY,
    RotZ,
}

impl Axis {
    fn row(self) -> usize {
        match self {
            Axis::RotX => 0,
            Axis::RotY => 1,
            Axis::RotZ => 2,
            Axis::X => 3,
            Axis::Y => 4,
            Axis::Z => 5,
        }
    }
}

/// One term of a task row: `weight · coordinate(frame, axis)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTerm {
    pub frame: String,
    pub axis: Axis,
    pub weight: f64,
}

/// A scalar task coordinate formed as a weighted sum of frame coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRow {
    pub terms: Vec<TaskTerm>,
}

impl TaskRow {
    pub fn single(frame: &str, axis: Axis) -> Self {
        Self {
            terms: vec![TaskTerm {
                frame: frame.to_string(),
                axis,
                weight: 1.0,
            }],
        }
    }
}

/// Contact to evaluate, with the surface normal used to locate the contact
/// point on the wheel rim.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactQuery {
    pub name: String,
    pub normal: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct TaskJacobians {
    /// `J_R`, one row per task row.
    pub task: DMatrix<f64>,
    /// `J̇_R q̇`.
    pub task_bias: DVector<f64>,
    pub task_position: DVector<f64>,
    pub task_velocity: DVector<f64>,
    /// `J_C`, `contact_dim` rows per contact.
    pub contact: DMatrix<f64>,
    /// `J̇_C q̇`.
    pub contact_bias: DVector<f64>,
    pub contact_points: Vec<Vector3<f64>>,
    pub contact_dim: usize,
}

impl TaskJacobians {
    /// Stacked `J = [J_R; J_C]` and `J̇ q̇`.
    pub fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let nv = self.task.ncols().max(self.contact.ncols());
        let (nr, nc) = (self.task.nrows(), self.contact.nrows());
        let mut j = DMatrix::zeros(nr + nc, nv);
        let mut b = DVector::zeros(nr + nc);
        if nr > 0 {
            j.rows_mut(0, nr).copy_from(&self.task);
            b.rows_mut(0, nr).copy_from(&self.task_bias);
        }
        if nc > 0 {
            j.rows_mut(nr, nc).copy_from(&self.contact);
            b.rows_mut(nr, nc).copy_from(&self.contact_bias);
        }
        (j, b)
    }
}

fn rotation_angle(r: &Matrix3<f64>, axis: Axis) -> f64 {
    match axis {
        Axis::RotX => r[(2, 1)].atan2(r[(2, 2)]),
        Axis::RotY => r[(0, 2)].atan2(r[(0, 0)]),
        Axis::RotZ => r[(1, 0)].atan2(r[(0, 0)]),
        _ => unreachable!(),
    }
}

/// Task and contact Jacobians with their `J̇ q̇` terms.
pub fn compute_jacobians(
    tree: &KinematicTree,
    state: &GeneralizedState,
    tasks: &[TaskRow],
    contacts: &[ContactQuery],
) -> Result<TaskJacobians, DynamicsError> {
    let kin = Kinematics::new(tree, state)?;
    compute_jacobians_with(&kin, tasks, contacts)
}

/// Same as [`compute_jacobians`] on an existing kinematics cache.
pub fn compute_jacobians_with(
    kin: &Kinematics<'_>,
    tasks: &[TaskRow],
    contacts: &[ContactQuery],
) -> Result<TaskJacobians, DynamicsError> {
    let tree = kin.tree();
    let nv = tree.nv();
    let mut task = DMatrix::zeros(tasks.len(), nv);
    let mut task_bias = DVector::zeros(tasks.len());
    let mut task_position = DVector::zeros(tasks.len());
    let mut task_velocity = DVector::zeros(tasks.len());
    let mut cache: Vec<(String, FrameKinematics)> = Vec::new();
    for (i, row) in tasks.iter().enumerate() {
        for term in &row.terms {
            if !cache.iter().any(|(n, _)| n == &term.frame) {
                cache.push((term.frame.clone(), kin.frame(&term.frame)?));
            }
            let fk = &cache.iter().find(|(n, _)| n == &term.frame).unwrap().1;
            let r = term.axis.row();
            let w = term.weight;
            for c in 0..nv {
                task[(i, c)] += w * fk.jacobian[(r, c)];
            }
            let (pos, vel, bias) = if r < 3 {
                (
                    rotation_angle(&fk.orientation, term.axis),
                    fk.angular_velocity[r],
                    fk.angular_bias[r],
                )
            } else {
                (
                    fk.position[r - 3],
                    fk.linear_velocity[r - 3],
                    fk.linear_bias[r - 3],
                )
            };
            task_position[i] += w * pos;
            task_velocity[i] += w * vel;
            task_bias[i] += w * bias;
        }
    }

    let axes = tree.base().contact_axes();
    let dim = axes.len();
    let mut contact = DMatrix::zeros(dim * contacts.len(), nv);
    let mut contact_bias = DVector::zeros(dim * contacts.len());
    let mut contact_points = Vec::with_capacity(contacts.len());
    for (ci, cq) in contacts.iter().enumerate() {
        let idx = tree
            .contact_index(&cq.name)
            .ok_or_else(|| DynamicsError::UnknownFrame(cq.name.clone()))?;
        let body = tree.contacts()[idx].body;
        let p = kin.contact_point(idx, &cq.normal);
        let j = kin.point_jacobian(body, &p);
        // The contact point is geometric (it stays at the rim bottom), so its
        // bias acceleration omits the material point's centripetal term.
        let center = kin.contact_center(idx);
        let (aw, ac) = kin.point_bias(body, &center);
        let b = ac + aw.cross(&(p - center));
        for (k, &ax) in axes.iter().enumerate() {
            contact.row_mut(ci * dim + k).copy_from(&j.row(3 + ax));
            contact_bias[ci * dim + k] = b[ax];
        }
        contact_points.push(p);
    }
    Ok(TaskJacobians {
        task,
        task_bias,
        task_position,
        task_velocity,
        contact,
        contact_bias,
        contact_points,
        contact_dim: dim,
    })
}
