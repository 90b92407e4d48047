//! The two-rate controller: terrain-aware WBC at the inner rate and
//! bang-bang load damping at the outer rate. It sees only sensor readings.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DVector, Vector3};

use super::plant::SensorReading;
use super::SimError;
use crate::dynamics::{
    compute_jacobians_with, Axis, ContactQuery, GeneralizedState, KinematicTree, Kinematics, TaskRow,
    TaskTerm, WheelLeggedLayout,
};
use crate::estimation::{
    estimate_contact_force, update_cones, MomentumObserver, TerrainEstimator, TerrainFrame,
    DEFAULT_HISTORY_WINDOW,
};
use crate::friction_comp::FrictionCompState;
use crate::icc::{
    locomotion_power, stability_power, BangBangDamping, DampingController, DampingPolicy, IccParams,
    IccState,
};
use crate::impedance::{ControlPoint, ImpedanceFilter, ImpedanceParams, ReferenceTriple};
use crate::wbc::{
    assemble_with, solve, task_acceleration, FrictionCone, TaskReference, TaskSpec, WbcInput, WbcWeights,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskGains {
    pub kp: f64,
    pub kd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    pub dt: f64,
    /// Inner ticks per outer (ICC) tick.
    pub outer_every: usize,
    /// Base height above the mean wheel center.
    pub height: f64,
    pub height_gains: TaskGains,
    pub pitch_gains: TaskGains,
    pub centroid_gains: TaskGains,
    /// Friction coefficient used in the WBC cones.
    pub mu: f64,
    pub normal_force_max: f64,
    pub weights: WbcWeights,
    pub observer_gain: f64,
    /// Align cones with the estimated terrain frames; otherwise keep them
    /// vertical.
    pub estimate_terrain: bool,
    pub friction_comp: bool,
    /// Adaptation gains per task direction (height, pitch, centroid).
    pub friction_kp: [f64; 3],
    pub friction_klambda: [f64; 3],
    pub friction_max: f64,
    pub impedance: ImpedanceParams,
    pub icc: IccParams,
    pub policy: DampingPolicy,
    pub icc_hysteresis: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let icc = IccParams::default();
        Self {
            dt: 2e-3,
            outer_every: 5,
            height: 0.5,
            height_gains: TaskGains { kp: 1000.0, kd: 20.0 },
            pitch_gains: TaskGains { kp: 300.0, kd: 15.0 },
            centroid_gains: TaskGains { kp: 800.0, kd: 10.0 },
            mu: 0.1,
            normal_force_max: 1500.0,
            weights: WbcWeights::default(),
            observer_gain: 50.0,
            estimate_terrain: true,
            friction_comp: true,
            friction_kp: [50.0, 0.0, 500.0],
            friction_klambda: [10.0, 10.0, 10.0],
            friction_max: 80.0,
            impedance: ImpedanceParams {
                m: DVector::from_element(1, icc.m_body),
                d: DVector::from_element(1, icc.d_body.z),
                k: DVector::from_element(1, icc.k_body.z),
                control_point: ControlPoint::Base,
                max_offset: 0.2,
            },
            icc,
            policy: DampingPolicy::BangBang,
            icc_hysteresis: 1e-3,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.dt > 0.0) {
            return bad("controller.dt must be > 0".into());
        }
        if self.outer_every == 0 {
            return bad("controller.outer_every must be >= 1".into());
        }
        if !(self.mu > 0.0) {
            return bad("wbc.mu must be > 0".into());
        }
        if !(self.normal_force_max > 0.0) {
            return bad("wbc.normal_force_max must be > 0".into());
        }
        for (name, g) in [
            ("gains.height", self.height_gains),
            ("gains.pitch", self.pitch_gains),
            ("gains.centroid", self.centroid_gains),
        ] {
            if !(g.kp >= 0.0 && g.kd >= 0.0) {
                return bad(format!("{name}: kp and kd must be >= 0"));
            }
        }
        if !(self.observer_gain > 0.0) {
            return bad("estimation.observer_gain must be > 0".into());
        }
        let gains_ok = self.friction_kp.iter().chain(&self.friction_klambda).all(|k| *k >= 0.0);
        if !(gains_ok && self.friction_max > 0.0) {
            return bad("friction_comp gains must be >= 0 and f_max > 0".into());
        }
        if !(self.icc_hysteresis >= 0.0) {
            return bad("icc.hysteresis must be >= 0".into());
        }
        self.icc.validate()?;
        self.impedance.validate()?;
        if self.impedance.m.len() != 1 {
            return bad("impedance acts on the height direction only".into());
        }
        Ok(())
    }
}

/// One controller tick's command and telemetry.
#[derive(Clone, Debug)]
pub struct ControlOutput {
    pub tau: DVector<f64>,
    /// Accelerations the solver planned for this tick.
    pub qdd: DVector<f64>,
    pub damping: [Vector3<f64>; 2],
    pub fc_est: [Vector3<f64>; 2],
    pub frames: [TerrainFrame; 2],
    pub solver_iters: usize,
    pub solver_residual: f64,
    pub cone_slack: f64,
    pub tau_margin: f64,
    pub height: f64,
    pub height_ref: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub energy: f64,
    pub solve_seconds: f64,
}

/// Forward position reference and its derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardCommand {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

pub struct Controller {
    tree: KinematicTree,
    layout: WheelLeggedLayout,
    config: ControllerConfig,
    attach_offset: Vector3<f64>,
    rows: Vec<TaskRow>,
    names: [&'static str; 3],
    gains: [TaskGains; 3],
    observer: MomentumObserver,
    terrain: TerrainEstimator,
    cones: Vec<FrictionCone>,
    friction: FrictionCompState,
    impedance: ImpedanceFilter,
    damping: DampingController,
    current_damping: [Vector3<f64>; 2],
    prev_tau: DVector<f64>,
    prev_force: DVector<f64>,
    wheel_z: VecDeque<f64>,
    energy: f64,
    tick: usize,
}

fn height_row() -> TaskRow {
    TaskRow {
        terms: vec![
            TaskTerm { frame: "base".into(), axis: Axis::Z, weight: 1.0 },
            TaskTerm { frame: "wheel_front".into(), axis: Axis::Z, weight: -0.5 },
            TaskTerm { frame: "wheel_rear".into(), axis: Axis::Z, weight: -0.5 },
        ],
    }
}

fn centroid_row() -> TaskRow {
    TaskRow {
        terms: vec![
            TaskTerm { frame: "wheel_front".into(), axis: Axis::X, weight: 0.5 },
            TaskTerm { frame: "wheel_rear".into(), axis: Axis::X, weight: 0.5 },
        ],
    }
}

impl Controller {
    pub fn new(tree: KinematicTree, config: ControllerConfig) -> Result<Self, SimError> {
        config.validate()?;
        let layout = WheelLeggedLayout::from_tree(&tree)?;
        let attach_offset = arms_offset(&tree);
        let nv = tree.nv();
        let na = tree.n_actuated();
        let observer = MomentumObserver::uniform(nv, config.observer_gain)?;
        let names = ["height", "pitch", "centroid"];
        let contacts = &tree.contacts();
        let cones = [layout.contact_front, layout.contact_rear]
            .iter()
            .map(|&c| FrictionCone::new(&contacts[c].name, Vector3::z(), config.mu))
            .collect();
        let friction = FrictionCompState::new(
            DVector::from_row_slice(&config.friction_kp),
            DVector::from_row_slice(&config.friction_klambda),
            config.friction_max,
        )?;
        let damping = match config.policy {
            DampingPolicy::BangBang => DampingController::BangBang(Box::new(BangBangDamping::new(
                config.icc.clone(),
                config.icc_hysteresis,
            )?)),
            ref p => DampingController::new(&config.icc, p)?,
        };
        let mid = [config.icc.d_left_mid(), config.icc.d_right_mid()];
        let current_damping = match &config.policy {
            DampingPolicy::Constant(d) => [Vector3::repeat(*d); 2],
            DampingPolicy::BangBang => mid,
        };
        Ok(Self {
            attach_offset,
            rows: vec![height_row(), TaskRow::single("base", Axis::RotY), centroid_row()],
            names,
            gains: [config.height_gains, config.pitch_gains, config.centroid_gains],
            observer,
            terrain: TerrainEstimator::new(2, DEFAULT_HISTORY_WINDOW),
            cones,
            friction,
            impedance: ImpedanceFilter::new(config.impedance.clone())?,
            damping,
            current_damping,
            prev_tau: DVector::zeros(na),
            prev_force: DVector::zeros(2 * tree.base().contact_axes().len()),
            wheel_z: VecDeque::new(),
            energy: 0.0,
            tick: 0,
            tree,
            layout,
            config,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn damping(&self) -> [Vector3<f64>; 2] {
        self.current_damping
    }

    pub fn step(&mut self, sensors: &SensorReading, cmd: ForwardCommand) -> Result<ControlOutput, SimError> {
        let tick = self.tick;
        self.tick += 1;
        let cfg = &self.config;
        let dt = cfg.dt;
        let state = GeneralizedState::new(sensors.q.clone(), sensors.qd.clone(), sensors.t);
        let tau_ext = self.observer.step(&self.tree, &state, &sensors.tau, dt)?.clone();
        let kin = Kinematics::new(&self.tree, &state)?;

        // Measured load coupling, applied at the arm attachment.
        let p = &cfg.icc;
        let d = self.current_damping;
        let f_cpl = crate::icc::coupling_force(
            p,
            &sensors.load_rel_pos[0],
            &sensors.load_rel_pos[1],
            &sensors.load_rel_vel[0],
            &sensors.load_rel_vel[1],
            &d[0],
            &d[1],
        );
        let attach = kin.point_position(self.layout.torso, &self.attach_offset);
        let j_attach = kin.point_jacobian(self.layout.torso, &attach);
        let known_external = j_attach.rows(3, 3).transpose() * f_cpl;

        // Contact forces from the observer residual, then terrain frames.
        let queries: Vec<ContactQuery> = self
            .cones
            .iter()
            .map(|c| ContactQuery { name: c.contact.clone(), normal: c.normal })
            .collect();
        let jac = compute_jacobians_with(&kin, &self.rows, &queries)?;
        let est = estimate_contact_force(&(&tau_ext - &known_external), &jac.contact)?;
        let axes = self.tree.base().contact_axes();
        let cd = axes.len();
        let mut fc_est = [Vector3::zeros(); 2];
        for (i, f) in fc_est.iter_mut().enumerate() {
            for (k, &a) in axes.iter().enumerate() {
                f[a] = est.force[i * cd + k];
            }
        }
        let contact_ids = [self.layout.contact_front, self.layout.contact_rear];
        let mut frames = [TerrainFrame::flat(sensors.t); 2];
        for i in 0..2 {
            let center = kin.contact_center(contact_ids[i]);
            frames[i] = *self.terrain.update(i, sensors.t, center, &fc_est[i]);
        }

        // Excitation rate: mean vertical velocity of the wheel centers, differenced
        // over one outer period.
        let wz = 0.5
            * (kin.contact_center(self.layout.contact_front).z + kin.contact_center(self.layout.contact_rear).z);
        self.wheel_z.push_back(wz);
        let outer_span = cfg.outer_every + 1;
        while self.wheel_z.len() > outer_span {
            self.wheel_z.pop_front();
        }
        let excitation_rate = if self.wheel_z.len() > 1 {
            (self.wheel_z[self.wheel_z.len() - 1] - self.wheel_z[0]) / ((self.wheel_z.len() - 1) as f64 * dt)
        } else {
            0.0
        };
        let dl_dot = Vector3::new(0.0, 0.0, excitation_rate);

        if tick % cfg.outer_every == 0 && cfg.estimate_terrain {
            let frame_opts: Vec<Option<TerrainFrame>> =
                (0..2).map(|i| (!self.terrain.degenerate[i]).then_some(frames[i])).collect();
            self.cones = update_cones(&frame_opts, &self.cones, cfg.mu);
        }
        if tick % cfg.outer_every == 0 {
            let (dl, dr) = self.damping.step(
                sensors.t,
                &sensors.load_rel_vel[0],
                &sensors.load_rel_vel[1],
                &dl_dot,
            )?;
            self.current_damping = [dl, dr];
        }

        // Height reference shaped by the measured external wrench (load
        // gravity removed so a static hang is neutral).
        let height = jac.task_position[0];
        let height_rate = jac.task_velocity[0];
        let raw = ReferenceTriple {
            position: DVector::from_element(1, cfg.height),
            velocity: DVector::zeros(1),
            acceleration: DVector::zeros(1),
        };
        let fe = f_cpl.z + (p.m_left + p.m_right) * p.gravity;
        let href = self
            .impedance
            .step(
                &raw,
                &DVector::from_element(1, height),
                &DVector::from_element(1, height_rate),
                &DVector::from_element(1, fe),
                dt,
            )?
            .clone();
        let refs = [
            TaskReference {
                position: href.position[0],
                velocity: href.velocity[0],
                acceleration: href.acceleration[0],
            },
            TaskReference { position: 0.0, velocity: 0.0, acceleration: 0.0 },
            TaskReference { position: cmd.position, velocity: cmd.velocity, acceleration: cmd.acceleration },
        ];
        let tasks: Vec<TaskSpec> = (0..3)
            .map(|i| TaskSpec {
                name: self.names[i].to_string(),
                row: self.rows[i].clone(),
                kp: self.gains[i].kp,
                kd: self.gains[i].kd,
                reference: refs[i],
                weight: 1.0,
            })
            .collect();

        // Task-space friction compensation.
        let nv = self.tree.nv();
        let friction = if cfg.friction_comp {
            let x = &jac.task_position;
            let xd = &jac.task_velocity;
            let u = DVector::from_fn(3, |i, _| task_acceleration(&tasks[i], x[i], xd[i]));
            let e = DVector::from_fn(3, |i, _| refs[i].position - x[i]);
            let ed = DVector::from_fn(3, |i, _| refs[i].velocity - xd[i]);
            self.friction.activate(xd, &u)?;
            self.friction.update(&e, &ed, dt)?;
            // Compensation is a joint torque; base rows would be fictitious.
            let mut tau_f = self.friction.to_joint_torques(&jac.task)?;
            tau_f.rows_mut(0, self.tree.base_dofs()).fill(0.0);
            -tau_f
        } else {
            DVector::zeros(nv)
        };

        let input = WbcInput {
            tree: &self.tree,
            state: &state,
            tasks: &tasks,
            cones: &self.cones,
            friction: &friction,
            known_external: &known_external,
            prev_tau: &self.prev_tau,
            prev_force: &self.prev_force,
            weights: cfg.weights,
            normal_force_max: cfg.normal_force_max,
            dt,
        };
        let started = Instant::now();
        let problem = assemble_with(&kin, &input).map_err(|source| SimError::Solver { tick, source })?;
        let sol = solve(&problem).map_err(|source| SimError::Solver { tick, source })?;
        let solve_seconds = started.elapsed().as_secs_f64();
        let tau_margin = (0..sol.tau.len())
            .map(|j| (problem.tau_max[j] - sol.tau[j]).min(sol.tau[j] - problem.tau_min[j]))
            .fold(f64::INFINITY, f64::min);
        self.prev_tau = sol.tau.clone();
        self.prev_force = sol.force.clone();

        // Cost rates of the outer objective on measured quantities.
        let mut icc_state = IccState::at_rest(p);
        icc_state.s_body = Vector3::new(0.0, 0.0, height - cfg.height);
        icc_state.sd_body = Vector3::new(0.0, 0.0, height_rate);
        icc_state.sd_left = sensors.load_rel_vel[0];
        icc_state.sd_right = sensors.load_rel_vel[1];
        let rho1 = locomotion_power(p, &icc_state, &dl_dot);
        let rho2 = stability_power(p, &icc_state);
        self.energy += (rho1 + rho2) * dt;

        Ok(ControlOutput {
            tau: sol.tau,
            qdd: sol.qdd,
            damping: self.current_damping,
            fc_est,
            frames,
            solver_iters: sol.iterations,
            solver_residual: sol.eq_residual,
            cone_slack: sol.cone_slack,
            tau_margin,
            height,
            height_ref: cfg.height,
            rho1,
            rho2,
            energy: self.energy,
            solve_seconds,
        })
    }
}

/// Offset of the `arms` frame on the torso.
pub fn arms_offset(tree: &KinematicTree) -> Vector3<f64> {
    tree.frames()
        .iter()
        .find(|f| f.name == "arms")
        .map(|f| f.offset)
        .unwrap_or_default()
}
