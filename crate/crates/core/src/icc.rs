//! Impedance coordinative control: a body and two carried loads coupled by
//! springs and variable dampers, with bang-bang damping selection.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

pub type IccVector = SVector<f64, 18>;
pub type IccMatrix = SMatrix<f64, 18, 18>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IccError {
    #[error("invalid ICC parameters: {0}")]
    InvalidParams(String),
    #[error("time went backwards: {prev} then {now}")]
    NonMonotonicTime { prev: f64, now: f64 },
    #[error("non-finite ICC input")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IccParams {
    /// Body mass.
    pub m_body: f64,
    pub m_left: f64,
    pub m_right: f64,
    pub k_body: Vector3<f64>,
    pub d_body: Vector3<f64>,
    pub k_left: Vector3<f64>,
    pub k_right: Vector3<f64>,
    pub d_left_min: Vector3<f64>,
    pub d_left_max: Vector3<f64>,
    pub d_right_min: Vector3<f64>,
    pub d_right_max: Vector3<f64>,
    pub w_left: Matrix3<f64>,
    pub w_right: Matrix3<f64>,
    pub gravity: f64,
}

impl Default for IccParams {
    fn default() -> Self {
        Self {
            m_body: 80.0,
            m_left: 0.9,
            m_right: 0.9,
            k_body: Vector3::repeat(1e5),
            d_body: Vector3::repeat(600.0),
            k_left: Vector3::repeat(350.0),
            k_right: Vector3::repeat(350.0),
            d_left_min: Vector3::repeat(20.0),
            d_left_max: Vector3::repeat(200.0),
            d_right_min: Vector3::repeat(20.0),
            d_right_max: Vector3::repeat(200.0),
            w_left: Matrix3::identity(),
            w_right: Matrix3::identity(),
            gravity: 9.81,
        }
    }
}

impl IccParams {
    pub fn validate(&self) -> Result<(), IccError> {
        let bad = |m: String| Err(IccError::InvalidParams(m));
        for (name, m) in [("m_body", self.m_body), ("m_left", self.m_left), ("m_right", self.m_right)] {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("{name} must be > 0"));
            }
        }
        for (name, k) in [("k_body", self.k_body), ("k_left", self.k_left), ("k_right", self.k_right)] {
            if k.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return bad(format!("{name} entries must be > 0"));
            }
        }
        if self.d_body.iter().any(|v| !(*v >= 0.0)) {
            return bad("d_body entries must be >= 0".into());
        }
        for (side, lo, hi) in [
            ("left", self.d_left_min, self.d_left_max),
            ("right", self.d_right_min, self.d_right_max),
        ] {
            for i in 0..3 {
                if !(lo[i] >= 0.0 && lo[i] < hi[i] && hi[i].is_finite()) {
                    return bad(format!(
                        "d_{side}_min[{i}] = {} must satisfy 0 <= min < max = {}",
                        lo[i], hi[i]
                    ));
                }
            }
        }
        for (name, w) in [("w_left", self.w_left), ("w_right", self.w_right)] {
            if (w - w.transpose()).amax() > 1e-12 || w.symmetric_eigenvalues().min() <= 0.0 {
                return bad(format!("{name} must be symmetric positive definite"));
            }
        }
        if !(self.gravity >= 0.0) {
            return bad("gravity must be >= 0".into());
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.m_body + self.m_left + self.m_right
    }

    pub fn d_left_mid(&self) -> Vector3<f64> {
        (self.d_left_min + self.d_left_max) * 0.5
    }

    pub fn d_right_mid(&self) -> Vector3<f64> {
        (self.d_right_min + self.d_right_max) * 0.5
    }
}

/// Relative displacements: body relative to the leg excitation, loads
/// relative to the body.
#[derive(Clone, Debug, PartialEq)]
pub struct IccState {
    pub s_body: Vector3<f64>,
    pub sd_body: Vector3<f64>,
    pub s_left: Vector3<f64>,
    pub sd_left: Vector3<f64>,
    pub s_right: Vector3<f64>,
    pub sd_right: Vector3<f64>,
    pub d_left: Vector3<f64>,
    pub d_right: Vector3<f64>,
}

impl IccState {
    pub fn at_rest(params: &IccParams) -> Self {
        Self {
            s_body: Vector3::zeros(),
            sd_body: Vector3::zeros(),
            s_left: Vector3::zeros(),
            sd_left: Vector3::zeros(),
            s_right: Vector3::zeros(),
            sd_right: Vector3::zeros(),
            d_left: params.d_left_mid(),
            d_right: params.d_right_mid(),
        }
    }

    /// `x_s = [s_b, ṡ_b, s_L, ṡ_L, s_R, ṡ_R]`.
    pub fn vector(&self) -> IccVector {
        let mut x = IccVector::zeros();
        for (k, v) in [
            self.s_body,
            self.sd_body,
            self.s_left,
            self.sd_left,
            self.s_right,
            self.sd_right,
        ]
        .iter()
        .enumerate()
        {
            x.fixed_rows_mut::<3>(3 * k).copy_from(v);
        }
        x
    }

    pub fn set_vector(&mut self, x: &IccVector) {
        let b = |k: usize| -> Vector3<f64> { x.fixed_rows::<3>(3 * k).into_owned() };
        self.s_body = b(0);
        self.sd_body = b(1);
        self.s_left = b(2);
        self.sd_left = b(3);
        self.s_right = b(4);
        self.sd_right = b(5);
    }
}

/// Leg-length variation and its derivatives at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LegExcitation {
    pub dl: Vector3<f64>,
    pub dl_dot: Vector3<f64>,
    pub dl_ddot: Vector3<f64>,
}

impl LegExcitation {
    /// `ΔL(t) = a sin(2πt/T)` along `axis`.
    pub fn sinusoid(amplitude: f64, period: f64, axis: Vector3<f64>, t: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI / period;
        Self {
            dl: axis * (amplitude * (w * t).sin()),
            dl_dot: axis * (amplitude * w * (w * t).cos()),
            dl_ddot: axis * (-amplitude * w * w * (w * t).sin()),
        }
    }

    /// Derivatives of uniformly sampled `ΔL` by central differences
    /// (one-sided at the ends).
    pub fn from_samples(dt: f64, dl: &[Vector3<f64>]) -> Vec<Self> {
        let n = dl.len();
        let d1 = |v: &[Vector3<f64>]| -> Vec<Vector3<f64>> {
            (0..n)
                .map(|i| match (i, n) {
                    (_, 0 | 1) => Vector3::zeros(),
                    (0, _) => (v[1] - v[0]) / dt,
                    (i, n) if i == n - 1 => (v[n - 1] - v[n - 2]) / dt,
                    (i, _) => (v[i + 1] - v[i - 1]) / (2.0 * dt),
                })
                .collect()
        };
        let vel = d1(dl);
        let acc = d1(&vel);
        (0..n)
            .map(|i| Self {
                dl: dl[i],
                dl_dot: vel[i],
                dl_ddot: acc[i],
            })
            .collect()
    }
}

/// `A(t)` for the current damping, assembled from the coupled force balance
/// in relative coordinates (per axis, blocks are diagonal).
pub fn system_matrix(p: &IccParams, d_left: &Vector3<f64>, d_right: &Vector3<f64>) -> IccMatrix {
    let mut a = IccMatrix::zeros();
    let (m, ml, mr) = (p.m_body, p.m_left, p.m_right);
    for i in 0..3 {
        let (sb, vb, sl, vl, sr, vr) = (i, 3 + i, 6 + i, 9 + i, 12 + i, 15 + i);
        // Body force F_b = −K_b s_b − D_b ṡ_b + K_L s_L + D_L ṡ_L + K_R s_R + D_R ṡ_R.
        let fb = [
            (sb, -p.k_body[i]),
            (vb, -p.d_body[i]),
            (sl, p.k_left[i]),
            (vl, d_left[i]),
            (sr, p.k_right[i]),
            (vr, d_right[i]),
        ];
        a[(sb, vb)] = 1.0;
        a[(sl, vl)] = 1.0;
        a[(sr, vr)] = 1.0;
        for &(c, v) in &fb {
            a[(vb, c)] += v / m;
            // s̈_X = −(K_X s_X + D_X ṡ_X)/m_X − F_b/M.
            a[(vl, c)] -= v / m;
            a[(vr, c)] -= v / m;
        }
        a[(vl, sl)] -= p.k_left[i] / ml;
        a[(vl, vl)] -= d_left[i] / ml;
        a[(vr, sr)] -= p.k_right[i] / mr;
        a[(vr, vr)] -= d_right[i] / mr;
    }
    a
}

/// `ẋ_s = A(t) x_s + b(t)` with `b = [0, −ΔL̈, 0, 0, 0, 0]`.
pub fn icc_dynamics(p: &IccParams, state: &IccState, exc: &LegExcitation) -> IccVector {
    let mut xd = system_matrix(p, &state.d_left, &state.d_right) * state.vector();
    for i in 0..3 {
        xd[3 + i] -= exc.dl_ddot[i];
    }
    xd
}

/// `ρ₁ = (−K_b s_b − D_b ṡ_b + (0, 0, (M + m_L + m_R) g))ᵀ ΔL̇`.
pub fn locomotion_power(p: &IccParams, state: &IccState, dl_dot: &Vector3<f64>) -> f64 {
    let f = -p.k_body.component_mul(&state.s_body) - p.d_body.component_mul(&state.sd_body)
        + Vector3::new(0.0, 0.0, p.total_mass() * p.gravity);
    f.dot(dl_dot)
}

/// `ρ₂ = ½(ṡ_Lᵀ W_L ṡ_L + ṡ_Rᵀ W_R ṡ_R)`.
pub fn stability_power(p: &IccParams, state: &IccState) -> f64 {
    0.5 * (state.sd_left.dot(&(p.w_left * state.sd_left))
        + state.sd_right.dot(&(p.w_right * state.sd_right)))
}

/// Force the arms exert on the body:
/// `F_cpl = D_L Δṗ_L + D_R Δṗ_R + K_L Δp_L + K_R Δp_R`.
pub fn coupling_force(
    p: &IccParams,
    dp_left: &Vector3<f64>,
    dp_right: &Vector3<f64>,
    dpd_left: &Vector3<f64>,
    dpd_right: &Vector3<f64>,
    d_left: &Vector3<f64>,
    d_right: &Vector3<f64>,
) -> Vector3<f64> {
    d_left.component_mul(dpd_left)
        + d_right.component_mul(dpd_right)
        + p.k_left.component_mul(dp_left)
        + p.k_right.component_mul(dp_right)
}

/// Zero-crossing detector with hysteresis: a crossing is confirmed once the
/// signal passes `hysteresis` on the new side; its time is the linearly
/// interpolated sign change.
#[derive(Clone, Debug)]
pub struct ZeroCrossing {
    hysteresis: f64,
    side: f64,
    last_nonzero: Option<(f64, f64)>,
    pending: Option<f64>,
}

impl ZeroCrossing {
    pub fn new(hysteresis: f64) -> Self {
        Self {
            hysteresis,
            side: 0.0,
            last_nonzero: None,
            pending: None,
        }
    }

    /// Feeds one sample; returns `(crossing time, new sign)` when confirmed.
    pub fn update(&mut self, t: f64, v: f64) -> Option<(f64, f64)> {
        if v != 0.0 {
            if let Some((t0, v0)) = self.last_nonzero {
                if v0.signum() != v.signum() {
                    self.pending = Some(t0 + (t - t0) * v0 / (v0 - v));
                }
            }
            self.last_nonzero = Some((t, v));
        }
        if v.abs() <= self.hysteresis {
            return None;
        }
        let s = v.signum();
        if self.side == 0.0 {
            self.side = s;
            self.pending = None;
            return None;
        }
        if s == self.side {
            self.pending = None;
            return None;
        }
        self.side = s;
        let tc = self.pending.take().unwrap_or(t);
        Some((tc, s))
    }
}

/// Per-axis switching logic for one load.
#[derive(Clone, Debug)]
struct AxisSwitch {
    rel_vel: ZeroCrossing,
    t1: Option<(f64, f64)>,
    schedule: Vec<(f64, f64)>,
    costate_sign: Option<f64>,
}

impl AxisSwitch {
    fn new(h: f64) -> Self {
        Self {
            rel_vel: ZeroCrossing::new(h),
            t1: None,
            schedule: Vec::new(),
            costate_sign: None,
        }
    }
}

/// Bang-bang damping for both loads.
///
/// The co-state rate is not integrated. Its zero crossings are placed at
/// `2t₂ − t₁`, the reflection of the latest load relative-velocity crossing
/// `t₁` about the leg-excitation rate crossing `t₂`, and after each one its
/// sign is the opposite of the load velocity's sign change at `t₁`. Damping is
/// `D_max` when `ṡ_X · λ̇ > 0`, `D_min` otherwise, and the midpoint before the
/// first predicted crossing.
#[derive(Clone, Debug)]
pub struct BangBangDamping {
    params: IccParams,
    excitation: [ZeroCrossing; 3],
    left: [AxisSwitch; 3],
    right: [AxisSwitch; 3],
    last_t: Option<f64>,
}

pub const DEFAULT_HYSTERESIS: f64 = 1e-4;

impl BangBangDamping {
    pub fn new(params: IccParams, hysteresis: f64) -> Result<Self, IccError> {
        params.validate()?;
        let sw = || [AxisSwitch::new(hysteresis), AxisSwitch::new(hysteresis), AxisSwitch::new(hysteresis)];
        Ok(Self {
            params,
            excitation: [
                ZeroCrossing::new(hysteresis),
                ZeroCrossing::new(hysteresis),
                ZeroCrossing::new(hysteresis),
            ],
            left: sw(),
            right: sw(),
            last_t: None,
        })
    }

    /// Feeds the latest relative load velocities and excitation rate and
    /// returns `(D_L, D_R)`.
    pub fn step(
        &mut self,
        t: f64,
        sd_left: &Vector3<f64>,
        sd_right: &Vector3<f64>,
        dl_dot: &Vector3<f64>,
    ) -> Result<(Vector3<f64>, Vector3<f64>), IccError> {
        if !t.is_finite()
            || !sd_left.iter().chain(sd_right.iter()).chain(dl_dot.iter()).all(|v| v.is_finite())
        {
            return Err(IccError::NonFinite);
        }
        if let Some(prev) = self.last_t {
            if t < prev {
                return Err(IccError::NonMonotonicTime { prev, now: t });
            }
        }
        self.last_t = Some(t);
        let p = &self.params;
        let mut d_left = Vector3::zeros();
        let mut d_right = Vector3::zeros();
        for i in 0..3 {
            let t2 = self.excitation[i].update(t, dl_dot[i]).map(|(tc, _)| tc);
            for (sw, sd, lo, hi, out) in [
                (&mut self.left[i], sd_left[i], p.d_left_min[i], p.d_left_max[i], &mut d_left[i]),
                (&mut self.right[i], sd_right[i], p.d_right_min[i], p.d_right_max[i], &mut d_right[i]),
            ] {
                if let Some(c) = sw.rel_vel.update(t, sd) {
                    sw.t1 = Some(c);
                }
                if let (Some(t2), Some((t1, dir))) = (t2, sw.t1) {
                    let at = 2.0 * t2 - t1;
                    let pos = sw.schedule.partition_point(|(s, _)| *s <= at);
                    sw.schedule.insert(pos, (at, -dir));
                }
                while let Some(&(at, sign)) = sw.schedule.first() {
                    if at > t {
                        break;
                    }
                    sw.costate_sign = Some(sign);
                    sw.schedule.remove(0);
                }
                *out = match sw.costate_sign {
                    None => 0.5 * (lo + hi),
                    Some(l) if sd.signum() * l > 0.0 && sd != 0.0 => hi,
                    Some(_) => lo,
                };
            }
        }
        Ok((d_left, d_right))
    }
}

/// Damping selection for a rollout or the closed loop.
#[derive(Clone, Debug, PartialEq)]
pub enum DampingPolicy {
    BangBang,
    Constant(f64),
}

/// Damping controller applying a [`DampingPolicy`].
#[derive(Clone, Debug)]
pub enum DampingController {
    BangBang(Box<BangBangDamping>),
    Constant(Vector3<f64>, Vector3<f64>),
}

impl DampingController {
    pub fn new(params: &IccParams, policy: &DampingPolicy) -> Result<Self, IccError> {
        params.validate()?;
        Ok(match policy {
            DampingPolicy::BangBang => DampingController::BangBang(Box::new(BangBangDamping::new(
                params.clone(),
                DEFAULT_HYSTERESIS,
            )?)),
            DampingPolicy::Constant(d) => {
                if !(*d >= 0.0) {
                    return Err(IccError::InvalidParams(format!("constant damping {d} < 0")));
                }
                DampingController::Constant(Vector3::repeat(*d), Vector3::repeat(*d))
            }
        })
    }

    pub fn step(
        &mut self,
        t: f64,
        sd_left: &Vector3<f64>,
        sd_right: &Vector3<f64>,
        dl_dot: &Vector3<f64>,
    ) -> Result<(Vector3<f64>, Vector3<f64>), IccError> {
        match self {
            DampingController::BangBang(b) => b.step(t, sd_left, sd_right, dl_dot),
            DampingController::Constant(l, r) => Ok((*l, *r)),
        }
    }
}

/// Result of an open-loop ICC rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub t: Vec<f64>,
    pub states: Vec<IccState>,
    /// `∫ρ₁ dt` and `∫ρ₂ dt` per completed period.
    pub e1_per_period: Vec<f64>,
    pub e2_per_period: Vec<f64>,
}

impl Rollout {
    /// Total cost `E = E₁ + E₂` of the last completed period.
    pub fn last_period_cost(&self) -> f64 {
        self.e1_per_period.last().copied().unwrap_or(0.0)
            + self.e2_per_period.last().copied().unwrap_or(0.0)
    }
}

/// Simulates the coupled model under a periodic excitation with RK4 at
/// `dt`, updating damping every `control_dt` (zero-order hold) and
/// accumulating the cost by the trapezoid rule.
pub fn rollout<F: Fn(f64) -> LegExcitation>(
    params: &IccParams,
    policy: &DampingPolicy,
    excitation: F,
    period: f64,
    periods: usize,
    dt: f64,
    control_dt: f64,
) -> Result<Rollout, IccError> {
    let mut ctrl = DampingController::new(params, policy)?;
    let mut state = IccState::at_rest(params);
    let steps_per_period = (period / dt).round() as usize;
    let ctrl_every = ((control_dt / dt).round() as usize).max(1);
    let n = steps_per_period * periods;
    let mut out = Rollout {
        t: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        e1_per_period: Vec::new(),
        e2_per_period: Vec::new(),
    };
    let rho = |s: &IccState, e: &LegExcitation| (locomotion_power(params, s, &e.dl_dot), stability_power(params, s));
    let (mut e1, mut e2) = (0.0, 0.0);
    out.t.push(0.0);
    out.states.push(state.clone());
    for k in 0..n {
        let t = k as f64 * dt;
        let ex0 = excitation(t);
        if k % ctrl_every == 0 {
            let (dl, dr) = ctrl.step(t, &state.sd_left, &state.sd_right, &ex0.dl_dot)?;
            state.d_left = dl;
            state.d_right = dr;
        }
        let f = |tt: f64, x: &IccVector| {
            let mut s = state.clone();
            s.set_vector(x);
            icc_dynamics(params, &s, &excitation(tt))
        };
        let x = state.vector();
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * dt, &(x + k1 * (0.5 * dt)));
        let k3 = f(t + 0.5 * dt, &(x + k2 * (0.5 * dt)));
        let k4 = f(t + dt, &(x + k3 * dt));
        let xn = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let (a1, a2) = rho(&state, &ex0);
        state.set_vector(&xn);
        let (b1, b2) = rho(&state, &excitation(t + dt));
        e1 += 0.5 * dt * (a1 + b1);
        e2 += 0.5 * dt * (a2 + b2);
        out.t.push(t + dt);
        out.states.push(state.clone());
        if (k + 1) % steps_per_period == 0 {
            out.e1_per_period.push(e1);
            out.e2_per_period.push(e2);
            e1 = 0.0;
            e2 = 0.0;
        }
    }
    Ok(out)
}
