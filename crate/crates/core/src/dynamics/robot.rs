//! Default wheel-legged robot and the named layout controllers rely on.

use super::model::{BaseMode, KinematicTree};
use super::model_file::parse_model;
use super::DynamicsError;

/// Built-in sagittal wheel-legged model description.
pub const WHEEL_LEGGED_MODEL: &str = include_str!("../../models/wheel_legged.toml");

pub fn wheel_legged_robot() -> KinematicTree {
    parse_model(WHEEL_LEGGED_MODEL).expect("built-in model is valid")
}

/// Indices of the joints, contacts and frames of a two-wheel-leg robot.
/// Joint indices are actuated-joint indices (`τ` order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WheelLeggedLayout {
    pub leg_front: usize,
    pub wheel_front: usize,
    pub leg_rear: usize,
    pub wheel_rear: usize,
    pub contact_front: usize,
    pub contact_rear: usize,
    pub torso: usize,
}

impl WheelLeggedLayout {
    /// Looks up the expected names: joints `leg_front`, `wheel_front`,
    /// `leg_rear`, `wheel_rear`, contacts `wheel_front`, `wheel_rear`, and
    /// frames `base` and `arms`, on a planar base.
    pub fn from_tree(tree: &KinematicTree) -> Result<Self, DynamicsError> {
        if tree.base() != BaseMode::Planar {
            return Err(DynamicsError::InvalidModel(format!(
                "wheel-legged model needs a planar base, got {:?}",
                tree.base()
            )));
        }
        let joint = |n: &str| {
            tree.joint_index(n)
                .ok_or_else(|| DynamicsError::InvalidModel(format!("missing joint '{n}'")))
        };
        let contact = |n: &str| {
            tree.contact_index(n)
                .ok_or_else(|| DynamicsError::InvalidModel(format!("missing contact '{n}'")))
        };
        for f in ["base", "arms"] {
            if !tree.frames().iter().any(|fr| fr.name == f) {
                return Err(DynamicsError::InvalidModel(format!("missing frame '{f}'")));
            }
        }
        Ok(Self {
            leg_front: joint("leg_front")?,
            wheel_front: joint("wheel_front")?,
            leg_rear: joint("leg_rear")?,
            wheel_rear: joint("wheel_rear")?,
            contact_front: contact("wheel_front")?,
            contact_rear: contact("wheel_rear")?,
            torso: tree.root(),
        })
    }

    pub fn legs(&self) -> [usize; 2] {
        [self.leg_front, self.leg_rear]
    }

    pub fn wheels(&self) -> [usize; 2] {
        [self.wheel_front, self.wheel_rear]
    }

    pub fn contacts(&self) -> [usize; 2] {
        [self.contact_front, self.contact_rear]
    }
}
