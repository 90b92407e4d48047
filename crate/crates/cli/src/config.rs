//! Experiment configuration: a TOML file layered over the built-in scenario
//! defaults, then command-line flags layered over the file.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Deserialize;
use wbic_core::dynamics::{parse_model_file, wheel_legged_robot, KinematicTree, WheelLeggedLayout};
use wbic_core::icc::DampingPolicy;
use wbic_core::sim::{make_terrain, Integrator, Scenario, ScenarioConfig, TaskGains, TerrainKind};

/// One problem found while loading or checking a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// Config key or file the problem belongs to.
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// A scalar applied to all three axes, or one value per axis.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Axes {
    All(f64),
    Each([f64; 3]),
}

impl Axes {
    fn vector(self) -> Vector3<f64> {
        match self {
            Axes::All(v) => Vector3::repeat(v),
            Axes::Each(v) => Vector3::from(v),
        }
    }
}

/// `"bang-bang"` or a constant damping value.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PolicySpec {
    Named(String),
    Constant(f64),
}

impl PolicySpec {
    pub fn resolve(&self) -> Result<DampingPolicy, String> {
        match self {
            PolicySpec::Constant(d) => Ok(DampingPolicy::Constant(*d)),
            PolicySpec::Named(n) => parse_policy(n),
        }
    }
}

/// Parses `bang-bang` or a number such as `100`.
pub fn parse_policy(text: &str) -> Result<DampingPolicy, String> {
    if text == "bang-bang" {
        return Ok(DampingPolicy::BangBang);
    }
    text.parse::<f64>()
        .map(DampingPolicy::Constant)
        .map_err(|_| format!("unknown damping policy '{text}' (expected 'bang-bang' or a number)"))
}

pub fn policy_label(policy: &DampingPolicy) -> String {
    match policy {
        DampingPolicy::BangBang => "bang-bang".into(),
        DampingPolicy::Constant(d) => format!("D={d}"),
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainSection {
    pub kind: Option<String>,
    pub start: Option<f64>,
    pub slope: Option<f64>,
    pub rise: Option<f64>,
    pub blend: Option<f64>,
    pub plateau: Option<f64>,
    pub bump_height: Option<f64>,
    pub bump_spacing: Option<f64>,
    pub amplitude: Option<f64>,
    pub wavelength: Option<f64>,
    pub cycles: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedSection {
    pub v_max: Option<f64>,
    pub start: Option<f64>,
    pub ramp: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IccSection {
    pub m_body: Option<f64>,
    pub m_left: Option<f64>,
    pub m_right: Option<f64>,
    pub k_body: Option<Axes>,
    pub d_body: Option<Axes>,
    pub k_left: Option<Axes>,
    pub k_right: Option<Axes>,
    pub d_left_min: Option<Axes>,
    pub d_left_max: Option<Axes>,
    pub d_right_min: Option<Axes>,
    pub d_right_max: Option<Axes>,
    pub policy: Option<PolicySpec>,
    pub hysteresis: Option<f64>,
}

/// `[kp, kd]` pairs.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub height: Option<[f64; 2]>,
    pub pitch: Option<[f64; 2]>,
    pub centroid: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub mu: Option<f64>,
    pub height: Option<f64>,
    pub observer_gain: Option<f64>,
    pub estimate_terrain: Option<bool>,
    pub friction_comp: Option<bool>,
    pub friction_max: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub integrator: Option<String>,
    pub substeps: Option<usize>,
    pub contact_stiffness: Option<f64>,
    pub contact_damping: Option<f64>,
    pub grip_mu: Option<f64>,
    pub rolling_resistance: Option<f64>,
    pub wheel_coulomb: Option<f64>,
    pub leg_coulomb: Option<f64>,
    pub noise_q: Option<f64>,
    pub noise_qd: Option<f64>,
    pub max_penetration: Option<f64>,
}

/// Contents of a config file. Every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    /// Robot description; the built-in wheel-legged model when absent.
    pub model: Option<PathBuf>,
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    /// Control period, shared by plant and controller.
    pub dt: Option<f64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub terrain: TerrainSection,
    #[serde(default)]
    pub speed: SpeedSection,
    #[serde(default)]
    pub icc: IccSection,
    #[serde(default)]
    pub gains: GainsSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub plant: PlantSection,
}

impl ExperimentFile {
    /// Reads a config file. Relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, Diagnostic> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Diagnostic::new(&shown, format!("cannot read config: {e}")))?;
        let mut file: Self =
            toml::from_str(&text).map_err(|e| Diagnostic::new(&shown, e.to_string().trim_end().to_string()))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.model, &mut file.out].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(file)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub scenarios: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A fully resolved experiment: robot, output directory and one config per
/// scenario.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub tree: KinematicTree,
    pub out: PathBuf,
    pub runs: Vec<ScenarioConfig>,
}

pub const DEFAULT_SCENARIO: &str = "terrain1";
pub const DEFAULT_OUT: &str = "out";

fn set<T: Copy>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

fn set_axes(target: &mut Vector3<f64>, value: Option<Axes>) {
    if let Some(v) = value {
        *target = v.vector();
    }
}

fn apply(file: &ExperimentFile, cfg: &mut ScenarioConfig, diags: &mut Vec<Diagnostic>) {
    set(&mut cfg.duration, file.duration);
    if let Some(dt) = file.dt {
        cfg.plant.dt = dt;
        cfg.controller.dt = dt;
    }

    let t = &file.terrain;
    if let Some(kind) = &t.kind {
        match TerrainKind::parse(kind) {
            Some(k) => cfg.terrain.kind = k,
            None => diags.push(Diagnostic::new(
                "terrain.kind",
                format!("unknown terrain '{kind}' (expected flat, ramp, cobblestone, wave or composite)"),
            )),
        }
    }
    let p = &mut cfg.terrain;
    set(&mut p.start, t.start);
    set(&mut p.slope, t.slope);
    set(&mut p.rise, t.rise);
    set(&mut p.blend, t.blend);
    set(&mut p.plateau, t.plateau);
    set(&mut p.bump_height, t.bump_height);
    set(&mut p.bump_spacing, t.bump_spacing);
    set(&mut p.amplitude, t.amplitude);
    set(&mut p.wavelength, t.wavelength);
    set(&mut p.cycles, t.cycles);

    set(&mut cfg.speed.v_max, file.speed.v_max);
    set(&mut cfg.speed.start, file.speed.start);
    set(&mut cfg.speed.ramp, file.speed.ramp);

    let s = &file.icc;
    let icc = &mut cfg.controller.icc;
    set(&mut icc.m_body, s.m_body);
    set(&mut icc.m_left, s.m_left);
    set(&mut icc.m_right, s.m_right);
    set_axes(&mut icc.k_body, s.k_body);
    set_axes(&mut icc.d_body, s.d_body);
    set_axes(&mut icc.k_left, s.k_left);
    set_axes(&mut icc.k_right, s.k_right);
    set_axes(&mut icc.d_left_min, s.d_left_min);
    set_axes(&mut icc.d_left_max, s.d_left_max);
    set_axes(&mut icc.d_right_min, s.d_right_min);
    set_axes(&mut icc.d_right_max, s.d_right_max);
    // The height impedance shares the body mass, damping and stiffness.
    let imp = &mut cfg.controller.impedance;
    imp.m[0] = icc.m_body;
    imp.d[0] = icc.d_body.z;
    imp.k[0] = icc.k_body.z;
    if let Some(policy) = &s.policy {
        match policy.resolve() {
            Ok(p) => cfg.controller.policy = p,
            Err(m) => diags.push(Diagnostic::new("icc.policy", m)),
        }
    }
    set(&mut cfg.controller.icc_hysteresis, s.hysteresis);

    let gains = |g: Option<[f64; 2]>| g.map(|[kp, kd]| TaskGains { kp, kd });
    set(&mut cfg.controller.height_gains, gains(file.gains.height));
    set(&mut cfg.controller.pitch_gains, gains(file.gains.pitch));
    set(&mut cfg.controller.centroid_gains, gains(file.gains.centroid));

    let c = &file.controller;
    set(&mut cfg.controller.mu, c.mu);
    set(&mut cfg.controller.height, c.height);
    set(&mut cfg.controller.observer_gain, c.observer_gain);
    set(&mut cfg.controller.estimate_terrain, c.estimate_terrain);
    set(&mut cfg.controller.friction_comp, c.friction_comp);
    set(&mut cfg.controller.friction_max, c.friction_max);

    let s = &file.plant;
    if let Some(name) = &s.integrator {
        match name.as_str() {
            "semi-implicit-euler" => cfg.plant.integrator = Integrator::SemiImplicitEuler,
            "rk4" => cfg.plant.integrator = Integrator::Rk4,
            _ => diags.push(Diagnostic::new(
                "plant.integrator",
                format!("unknown integrator '{name}' (expected semi-implicit-euler or rk4)"),
            )),
        }
    }
    let p = &mut cfg.plant;
    set(&mut p.substeps, s.substeps);
    set(&mut p.contact_stiffness, s.contact_stiffness);
    set(&mut p.contact_damping, s.contact_damping);
    set(&mut p.grip_mu, s.grip_mu);
    set(&mut p.rolling_resistance, s.rolling_resistance);
    set(&mut p.wheel_coulomb, s.wheel_coulomb);
    set(&mut p.leg_coulomb, s.leg_coulomb);
    set(&mut p.noise_q, s.noise_q);
    set(&mut p.noise_qd, s.noise_qd);
    set(&mut p.max_penetration, s.max_penetration);
}

/// Checks a resolved scenario config without simulating it.
fn check(cfg: &ScenarioConfig, diags: &mut Vec<Diagnostic>) {
    let field = cfg.scenario.name();
    let mut found: Vec<String> = Vec::new();
    for r in [cfg.validate(), cfg.plant.validate(), cfg.controller.validate()] {
        if let Err(e) = r {
            found.push(e.to_string());
        }
    }
    if let Err(e) = make_terrain(&cfg.terrain) {
        found.push(e.to_string());
    }
    found.dedup();
    for m in found {
        if !diags.iter().any(|d| d.message == m) {
            diags.push(Diagnostic::new(field, m));
        }
    }
}

fn load_tree(model: Option<&Path>, diags: &mut Vec<Diagnostic>) -> Option<KinematicTree> {
    let tree = match model {
        None => wheel_legged_robot(),
        Some(path) if !path.exists() => {
            diags.push(Diagnostic::new("model", format!("model file {} does not exist", path.display())));
            return None;
        }
        Some(path) => match parse_model_file(path) {
            Ok(t) => t,
            Err(e) => {
                diags.push(Diagnostic::new("model", format!("{}: {e}", path.display())));
                return None;
            }
        },
    };
    if let Err(e) = WheelLeggedLayout::from_tree(&tree) {
        diags.push(Diagnostic::new("model", e.to_string()));
        return None;
    }
    Some(tree)
}

/// Resolves file and flags into runnable configs, or every problem found.
pub fn resolve(file: &ExperimentFile, overrides: &Overrides) -> Result<Experiment, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let tree = load_tree(file.model.as_deref(), &mut diags);
    let names: Vec<String> = if !overrides.scenarios.is_empty() {
        overrides.scenarios.clone()
    } else {
        vec![file.scenario.clone().unwrap_or_else(|| DEFAULT_SCENARIO.into())]
    };
    let mut runs = Vec::new();
    for name in &names {
        let Some(scenario) = Scenario::parse(name) else {
            let known: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
            diags.push(Diagnostic::new(
                "scenario",
                format!("unknown scenario '{name}' (expected one of {})", known.join(", ")),
            ));
            continue;
        };
        let mut cfg = ScenarioConfig::new(scenario);
        apply(file, &mut cfg, &mut diags);
        set(&mut cfg.seed, file.seed);
        set(&mut cfg.seed, overrides.seed);
        cfg.terrain.seed = cfg.seed;
        check(&cfg, &mut diags);
        runs.push(cfg);
    }
    let out = overrides
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    match tree {
        Some(tree) if diags.is_empty() => Ok(Experiment { tree, out, runs }),
        _ => Err(diags),
    }
}
