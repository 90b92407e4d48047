//! Named closed-loop scenarios and the run loop tying plant and controller.

use std::collections::VecDeque;

use nalgebra::{DVector, Vector3};

use super::controller::{arms_offset, Controller, ControllerConfig, ForwardCommand};
use super::log::{RunLog, RunSample};
use super::plant::{Load, Plant, PlantConfig};
use super::terrain::{make_terrain, TerrainKind, TerrainParams};
use super::SimError;
use crate::dynamics::{GeneralizedState, KinematicTree, WheelLeggedLayout};
use crate::estimation::{DEFAULT_HISTORY_WINDOW, DEFAULT_MIN_NORMAL_FORCE};
use crate::icc::DampingPolicy;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Slope up, cobblestones, slope down.
    Terrain1,
    /// Sinusoidal waves.
    Terrain2,
    /// Flat ground carrying both loads.
    FlatCarry,
    /// Waves with fixed load damping instead of bang-bang.
    AblationFixedDamping,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Terrain1,
        Scenario::Terrain2,
        Scenario::FlatCarry,
        Scenario::AblationFixedDamping,
    ];

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Terrain1 => "terrain1",
            Scenario::Terrain2 => "terrain2",
            Scenario::FlatCarry => "flat-carry",
            Scenario::AblationFixedDamping => "ablation-fixed-damping",
        }
    }
}

/// Forward speed command: rest, smooth ramp to `v_max`, then cruise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedProfile {
    pub v_max: f64,
    pub start: f64,
    pub ramp: f64,
}

impl SpeedProfile {
    /// Speed and acceleration at time `t`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let u = ((t - self.start) / self.ramp).clamp(0.0, 1.0);
        let v = self.v_max * u * u * (3.0 - 2.0 * u);
        let a = if u > 0.0 && u < 1.0 {
            self.v_max * 6.0 * u * (1.0 - u) / self.ramp
        } else {
            0.0
        };
        (v, a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub duration: f64,
    pub seed: u64,
    pub terrain: TerrainParams,
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    pub speed: SpeedProfile,
    /// Initial leg extensions.
    pub leg_extension: f64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        let mut controller = ControllerConfig::default();
        let mut terrain = TerrainParams::default();
        let mut speed = SpeedProfile { v_max: 0.5, start: 0.5, ramp: 3.0 };
        match scenario {
            Scenario::Terrain1 => {
                terrain.kind = TerrainKind::Composite;
                controller.mu = 0.4;
            }
            Scenario::Terrain2 => {
                terrain.kind = TerrainKind::Wave;
                controller.mu = 0.4;
                speed.v_max = 0.8;
            }
            Scenario::FlatCarry => {
                terrain.kind = TerrainKind::Flat;
                controller.mu = 0.1;
            }
            Scenario::AblationFixedDamping => {
                terrain.kind = TerrainKind::Wave;
                controller.mu = 0.4;
                controller.policy = DampingPolicy::Constant(100.0);
                speed.v_max = 0.8;
            }
        }
        Self {
            scenario,
            duration: 10.0,
            seed: 1,
            terrain,
            plant: PlantConfig::default(),
            controller,
            speed,
            leg_extension: 0.15,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SimError::Config(format!("duration = {} must be > 0", self.duration)));
        }
        if (self.plant.dt - self.controller.dt).abs() > 1e-12 {
            return Err(SimError::Config(format!(
                "plant.dt = {} differs from controller.dt = {}",
                self.plant.dt, self.controller.dt
            )));
        }
        if !(self.speed.v_max.abs() <= 0.8) {
            return Err(SimError::Config(format!("speed.v_max = {} exceeds 0.8 m/s", self.speed.v_max)));
        }
        if !(self.speed.ramp > 0.0 && self.speed.start >= 0.0) {
            return Err(SimError::Config("speed.ramp must be > 0 and speed.start >= 0".into()));
        }
        self.plant.validate()?;
        self.controller.validate()
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub log: RunLog,
    pub mean_solve_seconds: f64,
    pub max_solve_seconds: f64,
    pub energy: f64,
}

/// Initial pose resting on the ground with loads hanging statically.
fn initial_conditions(
    tree: &KinematicTree,
    cfg: &ScenarioConfig,
    terrain_h0: f64,
) -> Result<(GeneralizedState, [Load; 2]), SimError> {
    let layout = WheelLeggedLayout::from_tree(tree)?;
    let mut q = tree.neutral();
    for j in layout.legs() {
        q[tree.joint_q_index(j)] = cfg.leg_extension;
    }
    let mut state = GeneralizedState::new(q.clone(), DVector::zeros(tree.nv()), 0.0);
    let kin = crate::dynamics::Kinematics::new(tree, &state)?;
    let contact = layout.contact_front;
    let radius = tree.contacts()[contact].radius;
    let lowest = kin.contact_center(contact).z - radius;
    // Sink slightly so the wheels start near static compression.
    let load = cfg.controller.icc.m_left + cfg.controller.icc.m_right;
    let sink = 0.5 * (tree.total_mass() + load) * tree.gravity() / cfg.plant.contact_stiffness;
    q[1] += terrain_h0 - lowest - sink;
    state.q = q;
    let kin = crate::dynamics::Kinematics::new(tree, &state)?;
    let attach = kin.point_position(layout.torso, &arms_offset(tree));
    let p = &cfg.controller.icc;
    let g = tree.gravity();
    let hang = |m: f64, k: &Vector3<f64>| attach - Vector3::new(0.0, 0.0, m * g / k.z);
    let loads = [
        Load {
            mass: p.m_left,
            stiffness: p.k_left,
            damping: p.d_left_mid(),
            position: hang(p.m_left, &p.k_left),
            velocity: Vector3::zeros(),
        },
        Load {
            mass: p.m_right,
            stiffness: p.k_right,
            damping: p.d_right_mid(),
            position: hang(p.m_right, &p.k_right),
            velocity: Vector3::zeros(),
        },
    ];
    Ok((state, loads))
}

/// Plant on the scenario terrain, resting on both wheels with the loads
/// hanging statically.
pub fn build_plant(tree: &KinematicTree, cfg: &ScenarioConfig) -> Result<Plant, SimError> {
    cfg.validate()?;
    let terrain = make_terrain(&TerrainParams { seed: cfg.seed, ..cfg.terrain.clone() })?;
    let (state, loads) = initial_conditions(tree, cfg, terrain.height(0.0))?;
    Plant::new(
        tree.clone(),
        cfg.plant.clone(),
        terrain,
        state,
        loads,
        arms_offset(tree),
        cfg.seed,
    )
}

/// Runs one scenario to completion. Deterministic for a given config.
pub fn run_scenario(tree: &KinematicTree, cfg: &ScenarioConfig) -> Result<ScenarioResult, SimError> {
    let mut plant = build_plant(tree, cfg)?;
    let layout = plant.layout.clone();
    let mut controller = Controller::new(tree.clone(), cfg.controller.clone())?;
    let dt = cfg.controller.dt;
    let ticks = (cfg.duration / dt).round() as usize;
    let mut log = RunLog::new(tree.nq());
    log.samples.reserve(ticks);

    let kin = crate::dynamics::Kinematics::new(tree, &plant.state)?;
    let mut x_ref = 0.5
        * (kin.contact_center(layout.contact_front).x + kin.contact_center(layout.contact_rear).x);
    drop(kin);

    let window = (DEFAULT_HISTORY_WINDOW / dt).round() as usize + 1;
    let mut normal_history: [VecDeque<f64>; 2] = [VecDeque::new(), VecDeque::new()];
    let mut solve_total = 0.0;
    let mut solve_max: f64 = 0.0;
    let mut energy = 0.0;

    for tick in 0..ticks {
        let t = tick as f64 * dt;
        let (v, a) = cfg.speed.at(t);
        let sensors = plant.sense()?;
        let out = controller.step(&sensors, ForwardCommand { position: x_ref, velocity: v, acceleration: a })?;
        solve_total += out.solve_seconds;
        solve_max = solve_max.max(out.solve_seconds);
        energy = out.energy;

        // Ground truth at the instant the controller acted.
        let q = &plant.state.q;
        let f_obj = plant.load_forces()?;
        let mut sample = RunSample {
            t,
            q: q.iter().copied().collect(),
            leg_ext: layout.legs().map(|j| q[tree.joint_q_index(j)]),
            d_left: out.damping[0].into(),
            d_right: out.damping[1].into(),
            rho1: out.rho1,
            rho2: out.rho2,
            energy: out.energy,
            solver_iters: out.solver_iters,
            solver_residual: out.solver_residual,
            cone_slack: out.cone_slack,
            tau_margin: out.tau_margin,
            height: out.height,
            height_ref: out.height_ref,
            load_rel_acc: [plant.load_rel_acc[0].z, plant.load_rel_acc[1].z],
            ..Default::default()
        };
        for i in 0..2 {
            let c = &plant.contacts[i];
            sample.fc_true[i] = [c.force.x, c.force.z];
            sample.fc_est[i] = [out.fc_est[i].x, out.fc_est[i].z];
            sample.f_obj[i] = [f_obj[i].x, f_obj[i].z];
            sample.nx_est[i] = [out.frames[i].nx.x, out.frames[i].nx.z];
            sample.nz_est[i] = [out.frames[i].nz.x, out.frames[i].nz.z];
            sample.nz_true[i] = [c.normal.x, c.normal.z];
            let h = &mut normal_history[i];
            h.push_back(c.normal.x.atan2(c.normal.z));
            if h.len() > window {
                h.pop_front();
            }
            let (lo, hi) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &a| (l.min(a), u.max(a)));
            let loaded = c.force.dot(&c.normal) > DEFAULT_MIN_NORMAL_FORCE;
            sample.steady_contact[i] = h.len() == window && hi - lo < 0.01 && loaded;
        }
        let front_x = plant.contacts[0].point.x;
        sample.terrain_x = front_x;
        sample.terrain_h = plant.terrain.height(front_x);
        sample.terrain_slope = plant.terrain.slope(front_x);
        log.samples.push(sample);

        plant.step(&out.tau, out.damping)?;
        x_ref += v * dt;
    }
    Ok(ScenarioResult {
        log,
        mean_solve_seconds: if ticks > 0 { solve_total / ticks as f64 } else { 0.0 },
        max_solve_seconds: solve_max,
        energy,
    })
}
