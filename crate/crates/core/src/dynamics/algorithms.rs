//! Composite-rigid-body and recursive Newton-Euler passes.

use nalgebra::{DMatrix, DVector, Matrix6};

use super::kinematics::Kinematics;
use super::model::KinematicTree;
use super::spatial::{cross_force, cross_motion, SpatialVec};

/// Joint-space inertia matrix.
pub(crate) fn crba(kin: &Kinematics<'_>) -> DMatrix<f64> {
    let tree = kin.tree();
    let links = &tree.links;
    let nv = tree.nv();
    let mut ic: Vec<Matrix6<f64>> = links.iter().map(|l| l.inertia.matrix()).collect();
    for i in (0..links.len()).rev() {
        if let Some(p) = links[i].parent {
            let x = kin.xup[i].motion_matrix();
            let contrib = x.transpose() * ic[i] * x;
            ic[p] += contrib;
        }
    }
    let mut b = DMatrix::zeros(nv, nv);
    for i in 0..links.len() {
        let cols_i = links[i].motion_subspace();
        for (k, s) in cols_i.iter().enumerate() {
            let row = links[i].v_idx + k;
            let mut f: SpatialVec = ic[i] * s;
            for (k2, s2) in cols_i.iter().enumerate() {
                b[(row, links[i].v_idx + k2)] = s2.dot(&f);
            }
            let mut j = i;
            while let Some(p) = links[j].parent {
                f = kin.xup[j].transpose_apply_force(&f);
                j = p;
                for (k2, s2) in links[j].motion_subspace().iter().enumerate() {
                    let col = links[j].v_idx + k2;
                    let val = s2.dot(&f);
                    b[(row, col)] = val;
                    b[(col, row)] = val;
                }
            }
        }
    }
    b
}

/// Generalized force needed to produce `qdd`; gravity included when `gravity`.
pub(crate) fn rnea(kin: &Kinematics<'_>, qdd: &DVector<f64>, gravity: bool) -> DVector<f64> {
    let qd = &kin.qd;
    let tree: &KinematicTree = kin.tree();
    let links = &tree.links;
    let n = links.len();
    let mut acc: Vec<SpatialVec> = Vec::with_capacity(n);
    let mut force: Vec<SpatialVec> = Vec::with_capacity(n);
    // Uniform upward acceleration of the world frame stands in for gravity.
    let a0 = if gravity {
        SpatialVec::new(0.0, 0.0, 0.0, 0.0, 0.0, tree.gravity())
    } else {
        SpatialVec::zeros()
    };
    for (i, link) in links.iter().enumerate() {
        let cols = link.motion_subspace();
        let mut vj = SpatialVec::zeros();
        let mut aj = SpatialVec::zeros();
        for (k, s) in cols.iter().enumerate() {
            vj += s * qd[link.v_idx + k];
            aj += s * qdd[link.v_idx + k];
        }
        let parent_acc = match link.parent {
            Some(p) => acc[p],
            None => a0,
        };
        let v = kin.vel[i];
        let a = kin.xup[i].apply_motion(&parent_acc) + aj + cross_motion(&v, &vj);
        let iv = link.inertia.mul(&v);
        force.push(link.inertia.mul(&a) + cross_force(&v, &iv));
        acc.push(a);
    }
    let mut tau = DVector::zeros(tree.nv());
    for i in (0..n).rev() {
        let link = &links[i];
        for (k, s) in link.motion_subspace().iter().enumerate() {
            tau[link.v_idx + k] = s.dot(&force[i]);
        }
        if let Some(p) = link.parent {
            let f = kin.xup[i].transpose_apply_force(&force[i]);
            force[p] += f;
        }
    }
    tau
}
