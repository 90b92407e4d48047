//! Plant side: full robot dynamics with terrain contact, carried loads,
//! joint friction and sensor noise.

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::terrain::TerrainProfile;
use super::SimError;
use crate::dynamics::{
    dynamics_with, generalized_force, solve_inertia, GeneralizedState, KinematicTree, Kinematics,
    PointForce, WheelLeggedLayout,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    SemiImplicitEuler,
    Rk4,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantConfig {
    /// Control period (s).
    pub dt: f64,
    /// Integration substeps per control period.
    pub substeps: usize,
    pub integrator: Integrator,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Viscous slope of the regularized Coulomb tangential force (N·s/m).
    pub tangential_damping: f64,
    /// Tire grip coefficient capping the tangential force.
    pub grip_mu: f64,
    /// Rolling resistance coefficient (resisting torque `c·N·r` at the wheel).
    pub rolling_resistance: f64,
    pub wheel_coulomb: f64,
    pub wheel_viscous: f64,
    pub leg_coulomb: f64,
    pub leg_viscous: f64,
    /// Velocity scale of the smooth Coulomb sign.
    pub friction_velocity: f64,
    pub noise_q: f64,
    pub noise_qd: f64,
    pub max_penetration: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            dt: 2e-3,
            substeps: 20,
            integrator: Integrator::SemiImplicitEuler,
            contact_stiffness: 1e6,
            contact_damping: 4e3,
            tangential_damping: 5e3,
            grip_mu: 0.8,
            rolling_resistance: 0.015,
            wheel_coulomb: 0.3,
            wheel_viscous: 0.02,
            leg_coulomb: 3.0,
            leg_viscous: 5.0,
            friction_velocity: 0.02,
            noise_q: 1e-5,
            noise_qd: 1e-4,
            max_penetration: 0.05,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("plant.dt must be > 0");
        }
        if self.substeps == 0 {
            return bad("plant.substeps must be >= 1");
        }
        for (name, v) in [
            ("plant.contact_stiffness", self.contact_stiffness),
            ("plant.grip_mu", self.grip_mu),
            ("plant.friction_velocity", self.friction_velocity),
            ("plant.max_penetration", self.max_penetration),
        ] {
            if !(v > 0.0) {
                return Err(SimError::Config(format!("{name} must be > 0")));
            }
        }
        for (name, v) in [
            ("plant.contact_damping", self.contact_damping),
            ("plant.tangential_damping", self.tangential_damping),
            ("plant.rolling_resistance", self.rolling_resistance),
            ("plant.wheel_coulomb", self.wheel_coulomb),
            ("plant.wheel_viscous", self.wheel_viscous),
            ("plant.leg_coulomb", self.leg_coulomb),
            ("plant.leg_viscous", self.leg_viscous),
            ("plant.noise_q", self.noise_q),
            ("plant.noise_qd", self.noise_qd),
        ] {
            if !(v >= 0.0) {
                return Err(SimError::Config(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// A carried mass hanging from the arm attachment on a spring and a
/// variable damper.
#[derive(Clone, Debug, PartialEq)]
pub struct Load {
    pub mass: f64,
    pub stiffness: Vector3<f64>,
    pub damping: Vector3<f64>,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// True contact state of one wheel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactState {
    pub force: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub point: Vector3<f64>,
    pub penetration: f64,
}

impl ContactState {
    fn none() -> Self {
        Self {
            force: Vector3::zeros(),
            normal: Vector3::z(),
            point: Vector3::zeros(),
            penetration: 0.0,
        }
    }
}

/// What the controller may read.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorReading {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    /// Torque applied over the last period (after effort saturation).
    pub tau: DVector<f64>,
    /// Load positions and velocities relative to the arm attachment.
    pub load_rel_pos: [Vector3<f64>; 2],
    pub load_rel_vel: [Vector3<f64>; 2],
}

#[derive(Clone, Debug)]
pub struct Plant {
    pub tree: KinematicTree,
    pub layout: WheelLeggedLayout,
    pub config: PlantConfig,
    pub terrain: TerrainProfile,
    pub state: GeneralizedState,
    pub loads: [Load; 2],
    /// Arm attachment offset in the torso frame.
    pub attach_offset: Vector3<f64>,
    pub contacts: [ContactState; 2],
    pub applied_tau: DVector<f64>,
    /// Load relative acceleration over the last period.
    pub load_rel_acc: [Vector3<f64>; 2],
    rng: ChaCha8Rng,
}

type Deriv = (DVector<f64>, DVector<f64>, [Vector3<f64>; 2], [Vector3<f64>; 2]);

impl Plant {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tree: KinematicTree,
        config: PlantConfig,
        terrain: TerrainProfile,
        state: GeneralizedState,
        loads: [Load; 2],
        attach_offset: Vector3<f64>,
        seed: u64,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let layout = WheelLeggedLayout::from_tree(&tree).map_err(SimError::Dynamics)?;
        state.check(&tree)?;
        let n = tree.n_actuated();
        let mut plant = Self {
            tree,
            layout,
            config,
            terrain,
            state,
            loads,
            attach_offset,
            contacts: [ContactState::none(); 2],
            applied_tau: DVector::zeros(n),
            load_rel_acc: [Vector3::zeros(); 2],
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (_, contacts) = plant.contact_forces(&plant.state.clone())?;
        plant.contacts = contacts;
        Ok(plant)
    }

    pub fn attach_point(&self, kin: &Kinematics<'_>) -> Vector3<f64> {
        kin.point_position(self.layout.torso, &self.attach_offset)
    }

    fn contact_forces(&self, state: &GeneralizedState) -> Result<(Vec<PointForce>, [ContactState; 2]), SimError> {
        let kin = Kinematics::new(&self.tree, state)?;
        let mut forces = Vec::with_capacity(2);
        let mut out = [ContactState::none(); 2];
        for (i, &contact) in self.layout.contacts().iter().enumerate() {
            let body = self.tree.contacts()[contact].body;
            let radius = self.tree.contacts()[contact].radius;
            let c = kin.contact_center(contact);
            let (px, pz) = self.terrain.closest_point(c.x, c.z, 1.5 * radius);
            let p = Vector3::new(px, c.y, pz);
            let (nx, nz) = self.terrain.normal(px);
            let normal = Vector3::new(nx, 0.0, nz);
            let d = c - p;
            // Signed distance from the surface; below it counts as negative.
            let dist = if d.dot(&normal) >= 0.0 { d.norm() } else { -d.norm() };
            let pen = radius - dist;
            out[i].normal = normal;
            out[i].point = p;
            out[i].penetration = pen.max(0.0);
            if pen <= 0.0 {
                continue;
            }
            let (_, v) = kin.point_velocity(body, &p);
            let vn = v.dot(&normal);
            let n_force = (self.config.contact_stiffness * pen - self.config.contact_damping * vn).max(0.0);
            let tangent = Vector3::new(normal.z, 0.0, -normal.x);
            let vt = v.dot(&tangent);
            let cap = self.config.grip_mu * n_force;
            let t_force = (-self.config.tangential_damping * vt).clamp(-cap, cap);
            let f = normal * n_force + tangent * t_force;
            out[i].force = f;
            forces.push(PointForce { body, point: p, force: f });
        }
        Ok((forces, out))
    }

    fn joint_friction(&self, state: &GeneralizedState, contacts: &[ContactState; 2]) -> DVector<f64> {
        let c = &self.config;
        let mut tau = DVector::zeros(self.tree.nv());
        let smooth = |v: f64| (v / c.friction_velocity).tanh();
        let l = &self.layout;
        let wheels = [(l.wheel_front, 0), (l.wheel_rear, 1)];
        for (j, k) in wheels {
            let vi = self.tree.joint_v_index(j);
            let w = state.qd[vi];
            let radius = self.tree.contacts()[[l.contact_front, l.contact_rear][k]].radius;
            let normal = contacts[k].force.dot(&contacts[k].normal).max(0.0);
            let coulomb = c.wheel_coulomb + c.rolling_resistance * normal * radius;
            tau[vi] = -coulomb * smooth(w) - c.wheel_viscous * w;
        }
        for j in [l.leg_front, l.leg_rear] {
            let vi = self.tree.joint_v_index(j);
            let v = state.qd[vi];
            tau[vi] = -c.leg_coulomb * smooth(v) - c.leg_viscous * v;
        }
        tau
    }

    fn derivative(
        &self,
        state: &GeneralizedState,
        loads: &[(Vector3<f64>, Vector3<f64>); 2],
        tau: &DVector<f64>,
    ) -> Result<(Deriv, [ContactState; 2]), SimError> {
        let (mut forces, contacts) = self.contact_forces(state)?;
        let kin = Kinematics::new(&self.tree, state)?;
        let attach = self.attach_point(&kin);
        let (_, attach_v) = kin.point_velocity(self.layout.torso, &attach);
        let g = self.tree.gravity();
        let mut load_acc = [Vector3::zeros(); 2];
        for (i, load) in self.loads.iter().enumerate() {
            let (p, v) = loads[i];
            let rel = p - attach;
            let rel_v = v - attach_v;
            let spring = load.stiffness.component_mul(&rel) + load.damping.component_mul(&rel_v);
            load_acc[i] = -spring / load.mass - Vector3::new(0.0, 0.0, g);
            forces.push(PointForce {
                body: self.layout.torso,
                point: attach,
                force: spring,
            });
        }
        let terms = dynamics_with(&kin);
        let mut rhs = generalized_force(&kin, &forces) - &terms.c + self.joint_friction(state, &contacts);
        let nb = self.tree.base_dofs();
        for j in 0..tau.len() {
            rhs[nb + j] += tau[j];
        }
        let qdd = solve_inertia(&terms.b, &rhs)?;
        let load_v = [loads[0].1, loads[1].1];
        Ok(((state.qd.clone(), qdd, load_v, load_acc), contacts))
    }

    fn load_rel(&self, state: &GeneralizedState) -> Result<([Vector3<f64>; 2], [Vector3<f64>; 2]), SimError> {
        let kin = Kinematics::new(&self.tree, state)?;
        let attach = self.attach_point(&kin);
        let (_, av) = kin.point_velocity(self.layout.torso, &attach);
        Ok((
            [self.loads[0].position - attach, self.loads[1].position - attach],
            [self.loads[0].velocity - av, self.loads[1].velocity - av],
        ))
    }

    /// Advances one control period under `tau` (saturated to joint effort
    /// limits) and load damping `damping`.
    pub fn step(&mut self, tau: &DVector<f64>, damping: [Vector3<f64>; 2]) -> Result<(), SimError> {
        let n = self.tree.n_actuated();
        if tau.len() != n {
            return Err(SimError::Dynamics(crate::dynamics::DynamicsError::DimensionMismatch {
                what: "tau",
                expected: n,
                got: tau.len(),
            }));
        }
        let nb = self.tree.base_dofs();
        let mut applied = tau.clone();
        for (k, joint) in self.tree.joints().iter().enumerate() {
            let vi = self.tree.joint_v_index(k);
            if vi >= nb {
                let a = vi - nb;
                applied[a] = applied[a].clamp(-joint.limits.effort, joint.limits.effort);
            }
        }
        if applied.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Fault("non-finite torque command".into()));
        }
        self.loads[0].damping = damping[0];
        self.loads[1].damping = damping[1];
        let (_, rel_v0) = self.load_rel(&self.state)?;
        let h = self.config.dt / self.config.substeps as f64;
        for _ in 0..self.config.substeps {
            self.substep(&applied, h)?;
        }
        let (_, rel_v1) = self.load_rel(&self.state)?;
        for i in 0..2 {
            self.load_rel_acc[i] = (rel_v1[i] - rel_v0[i]) / self.config.dt;
        }
        let (_, contacts) = self.contact_forces(&self.state.clone())?;
        self.contacts = contacts;
        for (i, c) in contacts.iter().enumerate() {
            if c.penetration > self.config.max_penetration {
                return Err(SimError::Fault(format!(
                    "wheel {i} penetrates the terrain by {:.3e} m",
                    c.penetration
                )));
            }
        }
        if self.state.q.iter().chain(self.state.qd.iter()).any(|v| !v.is_finite()) {
            return Err(SimError::Fault("plant state diverged".into()));
        }
        self.applied_tau = applied;
        Ok(())
    }

    fn substep(&mut self, tau: &DVector<f64>, h: f64) -> Result<(), SimError> {
        let loads = [
            (self.loads[0].position, self.loads[0].velocity),
            (self.loads[1].position, self.loads[1].velocity),
        ];
        match self.config.integrator {
            Integrator::SemiImplicitEuler => {
                let ((_, qdd, _, la), _) = self.derivative(&self.state, &loads, tau)?;
                let qd = &self.state.qd + qdd * h;
                let q = self.tree.integrate(&self.state.q, &qd, h);
                self.state = GeneralizedState::new(q, qd, self.state.t + h);
                for (i, load) in self.loads.iter_mut().enumerate() {
                    load.velocity += la[i] * h;
                    load.position += load.velocity * h;
                }
            }
            Integrator::Rk4 => {
                let s0 = self.state.clone();
                let advance = |d: &Deriv, a: f64| {
                    let state = GeneralizedState::new(
                        self.tree.integrate(&s0.q, &d.0, a),
                        &s0.qd + &d.1 * a,
                        s0.t + a,
                    );
                    let l = [0, 1].map(|i| (loads[i].0 + d.2[i] * a, loads[i].1 + d.3[i] * a));
                    (state, l)
                };
                let (k1, _) = self.derivative(&s0, &loads, tau)?;
                let (s2, l2) = advance(&k1, 0.5 * h);
                let (k2, _) = self.derivative(&s2, &l2, tau)?;
                let (s3, l3) = advance(&k2, 0.5 * h);
                let (k3, _) = self.derivative(&s3, &l3, tau)?;
                let (s4, l4) = advance(&k3, h);
                let (k4, _) = self.derivative(&s4, &l4, tau)?;
                let v = (&k1.0 + &k2.0 * 2.0 + &k3.0 * 2.0 + &k4.0) / 6.0;
                let a = (&k1.1 + &k2.1 * 2.0 + &k3.1 * 2.0 + &k4.1) / 6.0;
                let q = self.tree.integrate(&s0.q, &v, h);
                self.state = GeneralizedState::new(q, &s0.qd + a * h, s0.t + h);
                for (i, load) in self.loads.iter_mut().enumerate() {
                    let dv = (k1.3[i] + k2.3[i] * 2.0 + k3.3[i] * 2.0 + k4.3[i]) / 6.0;
                    let dp = (k1.2[i] + k2.2[i] * 2.0 + k3.2[i] * 2.0 + k4.2[i]) / 6.0;
                    load.position += dp * h;
                    load.velocity += dv * h;
                }
            }
        }
        Ok(())
    }

    /// Noisy measurement of the current state.
    pub fn sense(&mut self) -> Result<SensorReading, SimError> {
        let (rel_p, rel_v) = self.load_rel(&self.state)?;
        let nq = Normal::new(0.0, self.config.noise_q).map_err(|e| SimError::Config(e.to_string()))?;
        let nqd = Normal::new(0.0, self.config.noise_qd).map_err(|e| SimError::Config(e.to_string()))?;
        let rng = &mut self.rng;
        let mut q = self.state.q.clone();
        for v in q.iter_mut() {
            *v += nq.sample(rng);
        }
        if self.tree.base() == crate::dynamics::BaseMode::Spatial {
            let norm = q.rows(3, 4).norm();
            q.rows_mut(3, 4).unscale_mut(norm);
        }
        let mut qd = self.state.qd.clone();
        for v in qd.iter_mut() {
            *v += nqd.sample(rng);
        }
        let mut noisy = |v: Vector3<f64>, d: &Normal<f64>| {
            Vector3::new(v.x + d.sample(rng), v.y, v.z + d.sample(rng))
        };
        let load_rel_pos = [noisy(rel_p[0], &nq), noisy(rel_p[1], &nq)];
        let load_rel_vel = [noisy(rel_v[0], &nqd), noisy(rel_v[1], &nqd)];
        Ok(SensorReading {
            t: self.state.t,
            q,
            qd,
            tau: self.applied_tau.clone(),
            load_rel_pos,
            load_rel_vel,
        })
    }

    /// True generalized external torque from contacts and loads (for tests).
    pub fn true_external_torque(&self) -> Result<DVector<f64>, SimError> {
        let kin = Kinematics::new(&self.tree, &self.state)?;
        let mut forces: Vec<PointForce> = (0..2)
            .map(|i| PointForce {
                body: self.tree.contacts()[self.layout.contacts()[i]].body,
                point: self.contacts[i].point,
                force: self.contacts[i].force,
            })
            .collect();
        let attach = self.attach_point(&kin);
        for f in self.load_forces()? {
            forces.push(PointForce { body: self.layout.torso, point: attach, force: f });
        }
        Ok(generalized_force(&kin, &forces))
    }

    /// Force each load applies to the body, `K Δp + D Δṗ`.
    pub fn load_forces(&self) -> Result<[Vector3<f64>; 2], SimError> {
        let (p, v) = self.load_rel(&self.state)?;
        Ok([0, 1].map(|i| {
            self.loads[i].stiffness.component_mul(&p[i]) + self.loads[i].damping.component_mul(&v[i])
        }))
    }
}
