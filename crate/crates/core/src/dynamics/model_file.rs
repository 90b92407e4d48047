//! TOML robot description. See `docs/model-format.md` for the schema.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;

use super::model::{
    BaseMode, Body, ContactFrame, Joint, JointKind, JointLimits, KinematicTree, TaskFrame,
};
use super::DynamicsError;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    base: String,
    #[serde(default = "default_gravity")]
    gravity: f64,
}

fn default_gravity() -> f64 {
    9.81
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BodySpec {
    mass: f64,
    #[serde(default)]
    com: [f64; 3],
    inertia: InertiaSpec,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum InertiaSpec {
    Diagonal([f64; 3]),
    /// `[ixx, iyy, izz, ixy, ixz, iyz]`
    Six([f64; 6]),
    Full([[f64; 3]; 3]),
}

impl InertiaSpec {
    fn matrix(&self) -> Matrix3<f64> {
        match *self {
            InertiaSpec::Diagonal(d) => Matrix3::from_diagonal(&Vector3::from(d)),
            InertiaSpec::Six([xx, yy, zz, xy, xz, yz]) => {
                Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
            }
            InertiaSpec::Full(m) => Matrix3::from_fn(|r, c| m[r][c]),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSpec {
    #[serde(rename = "type")]
    kind: String,
    parent: String,
    child: String,
    #[serde(default)]
    origin: [f64; 3],
    axis: [f64; 3],
    #[serde(default)]
    limits: LimitsSpec,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct LimitsSpec {
    position: Option<[f64; 2]>,
    velocity: Option<f64>,
    effort: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactSpec {
    body: String,
    #[serde(default)]
    offset: [f64; 3],
    #[serde(default)]
    radius: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameSpec {
    body: String,
    #[serde(default)]
    offset: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    model: ModelSection,
    body: toml::Table,
    #[serde(default)]
    joint: toml::Table,
    #[serde(default)]
    contact: toml::Table,
    #[serde(default)]
    frame: toml::Table,
}

fn section<T: for<'de> Deserialize<'de>>(kind: &str, name: &str, v: &toml::Value) -> Result<T, DynamicsError> {
    v.clone()
        .try_into()
        .map_err(|e: toml::de::Error| DynamicsError::InvalidModel(format!("[{kind}.{name}]: {}", e.message())))
}

/// Parses a model description from TOML text.
pub fn parse_model(text: &str) -> Result<KinematicTree, DynamicsError> {
    let file: ModelFile =
        toml::from_str(text).map_err(|e| DynamicsError::InvalidModel(e.to_string()))?;
    let base = match file.model.base.as_str() {
        "fixed" => BaseMode::Fixed,
        "planar" => BaseMode::Planar,
        "spatial" => BaseMode::Spatial,
        other => {
            return Err(DynamicsError::InvalidModel(format!(
                "[model].base: expected fixed, planar or spatial, got '{other}'"
            )))
        }
    };
    let mut bodies = Vec::new();
    for (name, v) in &file.body {
        let b: BodySpec = section("body", name, v)?;
        bodies.push(Body {
            name: name.clone(),
            mass: b.mass,
            com: Vector3::from(b.com),
            inertia: b.inertia.matrix(),
        });
    }
    let body_idx = |kind: &str, owner: &str, name: &str| {
        bodies.iter().position(|b| b.name == name).ok_or_else(|| {
            DynamicsError::InvalidModel(format!("[{kind}.{owner}]: unknown body '{name}'"))
        })
    };
    let mut joints = Vec::new();
    for (name, v) in &file.joint {
        let j: JointSpec = section("joint", name, v)?;
        let kind = match j.kind.as_str() {
            "revolute" => JointKind::Revolute,
            "prismatic" => JointKind::Prismatic,
            other => {
                return Err(DynamicsError::InvalidModel(format!(
                    "[joint.{name}].type: expected revolute or prismatic, got '{other}'"
                )))
            }
        };
        let d = JointLimits::default();
        joints.push(Joint {
            name: name.clone(),
            kind,
            axis: Vector3::from(j.axis),
            parent: body_idx("joint", name, &j.parent)?,
            child: body_idx("joint", name, &j.child)?,
            origin: Vector3::from(j.origin),
            limits: JointLimits {
                position: j.limits.position.map_or(d.position, |[a, b]| (a, b)),
                velocity: j.limits.velocity.unwrap_or(d.velocity),
                effort: j.limits.effort.unwrap_or(d.effort),
            },
        });
    }
    let mut contacts = Vec::new();
    for (name, v) in &file.contact {
        let c: ContactSpec = section("contact", name, v)?;
        contacts.push(ContactFrame {
            name: name.clone(),
            body: body_idx("contact", name, &c.body)?,
            offset: Vector3::from(c.offset),
            radius: c.radius,
        });
    }
    let mut frames = Vec::new();
    for (name, v) in &file.frame {
        let f: FrameSpec = section("frame", name, v)?;
        frames.push(TaskFrame {
            name: name.clone(),
            body: body_idx("frame", name, &f.body)?,
            offset: Vector3::from(f.offset),
        });
    }
    KinematicTree::new(base, file.model.gravity, bodies, joints, contacts, frames)
}

/// Reads and parses a model file.
pub fn parse_model_file(path: &Path) -> Result<KinematicTree, DynamicsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DynamicsError::InvalidModel(format!("{}: {e}", path.display())))?;
    parse_model(&text).map_err(|e| match e {
        DynamicsError::InvalidModel(m) => DynamicsError::InvalidModel(format!("{}: {m}", path.display())),
        other => other,
    })
}
