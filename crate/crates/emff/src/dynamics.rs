//! Truth-model propagation: relative translational dynamics on a circular
//! reference orbit, RW-equipped rigid-body attitude dynamics, gravity-gradient
//! torque, the tilted geomagnetic dipole, and the coupled RK4 propagator.
//!
//! Frames: positions/velocities are components in the invariant orientation
//! frame (I), a non-rotating frame at the formation center whose x-axis is the
//! orbit-radial direction at t = 0 and whose z-axis is the orbit normal.
//! Angular velocities and wheel momenta are body-frame components.

use crate::error::{Error, Result};
use crate::magnetics::{AcDipoleSet, FarFieldModel, Wrench};
use crate::mathkit::{rk4_step, Mat3, Mrp, Vec3, VecN};
use serde::{Deserialize, Serialize};

/// Earth gravitational parameter, m³/s².
pub const MU_EARTH: f64 = 3.986e14;
/// Mean Earth radius used for the reference orbit, m.
pub const EARTH_RADIUS: f64 = 6.378e6;
/// Earth magnetic dipole moment, A·m².
pub const MU_EARTH_DIPOLE: f64 = 8.1e22;
/// Tilt of the geomagnetic dipole axis from the geographic pole, rad.
pub const DIPOLE_TILT_RAD: f64 = 11.0 * std::f64::consts::PI / 180.0;

/// Circular reference orbit carrying the formation center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitReference {
    /// Gravitational parameter, m³/s².
    pub mu_g: f64,
    /// Geocentric radius of the formation center, m.
    pub r_mag: f64,
    /// Mean motion sqrt(mu_g/r³), rad/s.
    pub mean_motion: f64,
    /// True-anomaly phase at t = 0, rad.
    pub phase: f64,
}

impl OrbitReference {
    pub fn circular(altitude_m: f64) -> Self {
        let r_mag = EARTH_RADIUS + altitude_m;
        OrbitReference {
            mu_g: MU_EARTH,
            r_mag,
            mean_motion: (MU_EARTH / r_mag.powi(3)).sqrt(),
            phase: 0.0,
        }
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.mean_motion
    }

    /// Orbit-radial unit vector ô_x(t), I-frame components.
    pub fn o_x(&self, t: f64) -> Vec3 {
        let a = self.mean_motion * t + self.phase;
        Vec3::new(a.cos(), a.sin(), 0.0)
    }

    /// Geocentric position of the formation center, I-frame components.
    pub fn center_position(&self, t: f64) -> Vec3 {
        self.r_mag * self.o_x(t)
    }
}

/// Per-satellite physical constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteConfig {
    pub mass: f64,
    /// Body-frame inertia tensor, kg·m², symmetric positive definite.
    pub inertia: Mat3,
    pub has_rw: bool,
    /// Coil radius, m; the far-field floor is twice the largest radius.
    pub coil_radius: f64,
    /// Dipole amplitude limit, A·m².
    pub mu_max: f64,
    /// Wheel momentum capacity, N·m·s.
    pub rw_h_max: f64,
}

impl SatelliteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mass <= 0.0 {
            return Err(Error::Invalid(format!("satellite mass must be positive, got {}", self.mass)));
        }
        let sym = (self.inertia - self.inertia.transpose()).norm();
        if sym > 1e-9 * self.inertia.norm() {
            return Err(Error::Invalid("inertia tensor must be symmetric".into()));
        }
        if self.inertia.symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::Invalid("inertia tensor must be positive definite".into()));
        }
        if self.coil_radius <= 0.0 {
            return Err(Error::Invalid("coil radius must be positive".into()));
        }
        Ok(())
    }
}

/// State of one satellite: position/velocity relative to the formation
/// center (I frame), attitude MRP, body rates, and wheel momentum (body
/// frame, meaningful only when the satellite carries wheels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteState {
    pub r: Vec3,
    pub v: Vec3,
    pub sigma: Mrp,
    pub omega: Vec3,
    pub h: Vec3,
}

impl SatelliteState {
    pub fn at_rest(r: Vec3, sigma: Mrp) -> Self {
        SatelliteState {
            r,
            v: Vec3::zeros(),
            sigma,
            omega: Vec3::zeros(),
            h: Vec3::zeros(),
        }
    }
}

/// Stacked state of the whole formation plus simulation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub t: f64,
    pub sats: Vec<SatelliteState>,
}

impl SystemState {
    pub fn n(&self) -> usize {
        self.sats.len()
    }

    /// Σ m_j v_j, I frame.
    pub fn linear_momentum(&self, configs: &[SatelliteConfig]) -> Vec3 {
        self.sats
            .iter()
            .zip(configs)
            .map(|(s, c)| c.mass * s.v)
            .sum()
    }

    /// System angular momentum about satellite 1,
    /// L = Σ m_j (r_j-r_1)×v_j + Σ C^{I/Bj} J_j ω_j + Σ_{RW} C^{I/Bj} h_j,
    /// I-frame components.
    pub fn angular_momentum(&self, configs: &[SatelliteConfig]) -> Vec3 {
        let r1 = self.sats[0].r;
        let mut l = Vec3::zeros();
        for (s, c) in self.sats.iter().zip(configs) {
            l += c.mass * (s.r - r1).cross(&s.v);
            let c_ib = s.sigma.to_dcm();
            l += c_ib.body_to_inertial(&(c.inertia * s.omega));
            if c.has_rw {
                l += c_ib.body_to_inertial(&s.h);
            }
        }
        l
    }
}

/// Indices of RW-equipped satellites in config order; the last one carries
/// the uncontrolled wheel state.
pub fn rw_indices(configs: &[SatelliteConfig]) -> Vec<usize> {
    configs
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.has_rw.then_some(i))
        .collect()
}

/// Far-field validity floor for a set of satellites: twice the largest coil radius.
pub fn far_field_floor(configs: &[SatelliteConfig]) -> f64 {
    2.0 * configs.iter().map(|c| c.coil_radius).fold(0.0, f64::max)
}

/// Relative translational acceleration of one satellite:
/// r̈ = f/m + (μ_g/‖R‖³)(3 ô_x ô_x·r − r), I frame.
pub fn relative_accel(
    orbit: &OrbitReference,
    t: f64,
    r: &Vec3,
    mass: f64,
    applied_force: &Vec3,
) -> Result<Vec3> {
    let ratio = r.norm() / orbit.r_mag;
    if ratio >= 1e-2 {
        return Err(Error::ModelValidity(format!(
            "relative position {:.1} m is not small against the orbit radius (ratio {ratio:.2e})",
            r.norm()
        )));
    }
    Ok(applied_force / mass + tidal_accel(orbit, t, r))
}

/// Tidal acceleration (μ_g/R³)(3 ô_x ô_x·r − r).
pub fn tidal_accel(orbit: &OrbitReference, t: f64, r: &Vec3) -> Vec3 {
    let ox = orbit.o_x(t);
    (orbit.mu_g / orbit.r_mag.powi(3)) * (3.0 * ox * ox.dot(r) - r)
}

/// Rigid-body attitude dynamics with reaction wheels:
/// J ω̇ + ω×(Jω + h) = τ_ext − τ_RW, ḣ = τ_RW (all body frame).
pub fn attitude_derivative(
    cfg: &SatelliteConfig,
    omega: &Vec3,
    h: &Vec3,
    tau_external_body: &Vec3,
    rw_torque: &Vec3,
) -> Result<(Vec3, Vec3)> {
    if !cfg.has_rw && rw_torque.norm() > 0.0 {
        return Err(Error::Invalid(
            "reaction wheel torque commanded on a satellite without wheels".into(),
        ));
    }
    let gyro = omega.cross(&(cfg.inertia * omega + h));
    let omega_dot = cfg
        .inertia
        .try_inverse()
        .ok_or_else(|| Error::Invalid("singular inertia tensor".into()))?
        * (tau_external_body - rw_torque - gyro);
    Ok((omega_dot, *rw_torque))
}

/// Gravity-gradient torque τ_g = 3 μ_g/‖R‖⁵ (R × J·R) for a geocentric
/// position R given in body-frame components. Returns body-frame torque.
pub fn gravity_gradient_torque(cfg: &SatelliteConfig, r_body: &Vec3) -> Result<Vec3> {
    let dist = r_body.norm();
    if dist == 0.0 {
        return Err(Error::Invalid("gravity-gradient torque undefined at zero radius".into()));
    }
    Ok(3.0 * MU_EARTH / dist.powi(5) * r_body.cross(&(cfg.inertia * r_body)))
}

/// Tilted-dipole geomagnetic field at a geocentric position (I-frame
/// components). The dipole axis is fixed in the I frame, tilted 11° from the
/// orbit-normal z-axis toward x.
pub fn geomagnetic_field(r_eci: &Vec3) -> Result<Vec3> {
    let dist = r_eci.norm();
    if dist < EARTH_RADIUS {
        return Err(Error::ModelValidity(format!(
            "geomagnetic field requested below the Earth surface (r = {dist:.3e} m)"
        )));
    }
    let mu_e = MU_EARTH_DIPOLE * Vec3::new(DIPOLE_TILT_RAD.sin(), 0.0, DIPOLE_TILT_RAD.cos());
    let d3 = dist.powi(3);
    let d5 = d3 * dist * dist;
    Ok(crate::magnetics::MU0 / (4.0 * std::f64::consts::PI)
        * (3.0 * r_eci * mu_e.dot(r_eci) / d5 - mu_e / d3))
}

/// Dipole drive applied during a propagation step.
#[derive(Debug, Clone, PartialEq)]
pub enum DipoleDrive {
    /// Constant dipole moments, I frame.
    Dc(Vec<Vec3>),
    /// Same-frequency sine/cosine amplitudes, I frame.
    Ac(AcDipoleSet),
    /// AC amplitudes plus per-satellite DC offsets (e.g. an MTQ on the chief).
    AcDc { ac: AcDipoleSet, dc: Vec<Vec3> },
}

impl DipoleDrive {
    pub fn len(&self) -> usize {
        match self {
            DipoleDrive::Dc(v) => v.len(),
            DipoleDrive::Ac(set) => set.len(),
            DipoleDrive::AcDc { ac, .. } => ac.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Instantaneous dipole moments at time t.
    pub fn instantaneous(&self, t: f64) -> Result<Vec<Vec3>> {
        match self {
            DipoleDrive::Dc(v) => Ok(v.clone()),
            DipoleDrive::Ac(set) => (0..set.len()).map(|j| set.dipole_at(j, t)).collect(),
            DipoleDrive::AcDc { ac, dc } => (0..ac.len())
                .map(|j| Ok(ac.dipole_at(j, t)? + dc[j]))
                .collect(),
        }
    }

    fn ac_period(&self) -> Option<f64> {
        match self {
            DipoleDrive::Dc(_) => None,
            DipoleDrive::Ac(set) | DipoleDrive::AcDc { ac: set, .. } => {
                Some(2.0 * std::f64::consts::PI / set.omega_f)
            }
        }
    }

    fn dc_components(&self) -> Option<&[Vec3]> {
        match self {
            DipoleDrive::Dc(v) => Some(v),
            DipoleDrive::Ac(_) => None,
            DipoleDrive::AcDc { dc, .. } => Some(dc),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropagationMode {
    /// First-order-averaged EM wrenches; AC-DC cross terms and AC coupling to
    /// the geomagnetic field average to zero and are dropped.
    Averaged,
    /// Instantaneous dipoles μ_j(t); requires at least 20 steps per AC period.
    Instantaneous,
}

/// Disturbance toggles for the truth model. `gravity` covers both the tidal
/// acceleration and the gravity-gradient torque.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disturbances {
    pub gravity: bool,
    pub geomagnetic: bool,
}

impl Disturbances {
    pub fn none() -> Self {
        Disturbances { gravity: false, geomagnetic: false }
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    pub orbit: OrbitReference,
    pub disturbances: Disturbances,
}

/// One RK4 step of the full coupled system.
///
/// `rw_torques` are the commanded wheel torque rates ḣ (body frame), one per
/// RW-equipped satellite in config order, held constant over the step. Shadow
/// switching is applied to every attitude after the step.
pub fn propagate(
    state: &SystemState,
    configs: &[SatelliteConfig],
    env: &Environment,
    drive: &DipoleDrive,
    rw_torques: &[Vec3],
    dt: f64,
    mode: PropagationMode,
) -> Result<SystemState> {
    let n = state.n();
    if configs.len() != n || drive.len() != n {
        return Err(Error::Invalid(format!(
            "inconsistent sizes: {n} states, {} configs, {} dipole entries",
            configs.len(),
            drive.len()
        )));
    }
    let rw = rw_indices(configs);
    if rw_torques.len() != rw.len() {
        return Err(Error::Invalid(format!(
            "{} wheel torque commands for {} RW satellites",
            rw_torques.len(),
            rw.len()
        )));
    }
    if dt <= 0.0 {
        return Err(Error::Invalid(format!("propagation requires dt > 0, got {dt}")));
    }
    if mode == PropagationMode::Instantaneous {
        if let Some(period) = drive.ac_period() {
            if dt > period / 20.0 {
                return Err(Error::Invalid(format!(
                    "instantaneous mode needs dt ≤ {:.4} s (1/20 AC period), got {dt}",
                    period / 20.0
                )));
            }
        }
    }
    for s in &state.sats {
        // Validity check once per step; positions move negligibly inside it.
        let ratio = s.r.norm() / env.orbit.r_mag;
        if ratio >= 1e-2 {
            return Err(Error::ModelValidity(format!(
                "formation size exceeds the relative-dynamics validity bound (ratio {ratio:.2e})"
            )));
        }
    }

    let ff = FarFieldModel::new(far_field_floor(configs));
    let packed = pack(state, &rw);

    // The derivative closure returns zeros on interior model errors and
    // records them; rk4 cannot carry a Result through nalgebra closures.
    let err_cell = std::cell::RefCell::new(None);
    let deriv = |t: f64, x: &VecN| -> VecN {
        match system_derivative(t, x, configs, &rw, env, drive, rw_torques, &ff, mode) {
            Ok(d) => d,
            Err(e) => {
                err_cell.borrow_mut().get_or_insert(e);
                VecN::zeros(x.len())
            }
        }
    };
    let next = rk4_step(state.t, &packed, dt, deriv)?;
    if let Some(e) = err_cell.into_inner() {
        return Err(e);
    }
    if !next.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("propagated state"));
    }
    let mut out = unpack(state.t + dt, &next, n, &rw);
    for s in &mut out.sats {
        s.sigma = s.sigma.shadow_switch();
    }
    Ok(out)
}

/// EM + geomagnetic wrench on every satellite for the given drive and mode,
/// I-frame torque components.
pub fn em_wrench(
    state_positions: &[Vec3],
    t: f64,
    env: &Environment,
    drive: &DipoleDrive,
    ff: &FarFieldModel,
    mode: PropagationMode,
) -> Result<Vec<Wrench>> {
    let n = state_positions.len();
    let mut wrenches = match (mode, drive) {
        (PropagationMode::Averaged, DipoleDrive::Dc(mus)) => {
            ff.system_wrench_dc(mus, state_positions)?
        }
        (PropagationMode::Averaged, DipoleDrive::Ac(set)) => {
            ff.averaged_system_wrench(set, state_positions)?
        }
        (PropagationMode::Averaged, DipoleDrive::AcDc { ac, dc }) => {
            let mut w = ff.averaged_system_wrench(ac, state_positions)?;
            let w_dc = ff.system_wrench_dc(dc, state_positions)?;
            for (a, b) in w.iter_mut().zip(&w_dc) {
                a.force += b.force;
                a.torque += b.torque;
            }
            w
        }
        (PropagationMode::Instantaneous, _) => {
            let mus = drive.instantaneous(t)?;
            ff.system_wrench_dc(&mus, state_positions)?
        }
    };
    if env.disturbances.geomagnetic {
        // Coupling to the (locally uniform) geomagnetic field: zero-mean for
        // pure AC drives under averaging, so only DC components contribute
        // there; instantaneous mode couples the full μ_j(t).
        let center = env.orbit.center_position(t);
        match mode {
            PropagationMode::Averaged => {
                if let Some(dc) = drive.dc_components() {
                    for j in 0..n {
                        let b_e = geomagnetic_field(&(center + state_positions[j]))?;
                        wrenches[j].torque += dc[j].cross(&b_e);
                    }
                }
            }
            PropagationMode::Instantaneous => {
                let mus = drive.instantaneous(t)?;
                for j in 0..n {
                    let b_e = geomagnetic_field(&(center + state_positions[j]))?;
                    wrenches[j].torque += mus[j].cross(&b_e);
                }
            }
        }
    }
    Ok(wrenches)
}

#[allow(clippy::too_many_arguments)]
fn system_derivative(
    t: f64,
    x: &VecN,
    configs: &[SatelliteConfig],
    rw: &[usize],
    env: &Environment,
    drive: &DipoleDrive,
    rw_torques: &[Vec3],
    ff: &FarFieldModel,
    mode: PropagationMode,
) -> Result<VecN> {
    let n = configs.len();
    let st = unpack(t, x, n, rw);
    let positions: Vec<Vec3> = st.sats.iter().map(|s| s.r).collect();
    let wrenches = em_wrench(&positions, t, env, drive, ff, mode)?;

    let mut dx = VecN::zeros(x.len());
    let center = env.orbit.center_position(t);
    for (j, (s, cfg)) in st.sats.iter().zip(configs).enumerate() {
        let base = 12 * j;
        // translational
        let mut accel = wrenches[j].force / cfg.mass;
        if env.disturbances.gravity {
            accel += tidal_accel(&env.orbit, t, &s.r);
        }
        dx.fixed_rows_mut::<3>(base).copy_from(&s.v);
        dx.fixed_rows_mut::<3>(base + 3).copy_from(&accel);
        // attitude
        let c_ib = s.sigma.to_dcm();
        let mut tau_body = c_ib.inertial_to_body(&wrenches[j].torque);
        if env.disturbances.gravity {
            let r_body = c_ib.inertial_to_body(&(center + s.r));
            tau_body += gravity_gradient_torque(cfg, &r_body)?;
        }
        let rw_torque = rw
            .iter()
            .position(|&i| i == j)
            .map(|k| rw_torques[k])
            .unwrap_or_else(Vec3::zeros);
        let (omega_dot, h_dot) = attitude_derivative(cfg, &s.omega, &s.h, &tau_body, &rw_torque)?;
        dx.fixed_rows_mut::<3>(base + 6).copy_from(&s.sigma.kinematics(&s.omega));
        dx.fixed_rows_mut::<3>(base + 9).copy_from(&omega_dot);
        if let Some(k) = rw.iter().position(|&i| i == j) {
            dx.fixed_rows_mut::<3>(12 * n + 3 * k).copy_from(&h_dot);
        }
    }
    Ok(dx)
}

fn pack(state: &SystemState, rw: &[usize]) -> VecN {
    let n = state.n();
    let mut x = VecN::zeros(12 * n + 3 * rw.len());
    for (j, s) in state.sats.iter().enumerate() {
        let base = 12 * j;
        x.fixed_rows_mut::<3>(base).copy_from(&s.r);
        x.fixed_rows_mut::<3>(base + 3).copy_from(&s.v);
        x.fixed_rows_mut::<3>(base + 6).copy_from(&s.sigma.as_vec());
        x.fixed_rows_mut::<3>(base + 9).copy_from(&s.omega);
    }
    for (k, &j) in rw.iter().enumerate() {
        x.fixed_rows_mut::<3>(12 * n + 3 * k).copy_from(&state.sats[j].h);
    }
    x
}

fn unpack(t: f64, x: &VecN, n: usize, rw: &[usize]) -> SystemState {
    let mut sats = Vec::with_capacity(n);
    for j in 0..n {
        let base = 12 * j;
        sats.push(SatelliteState {
            r: x.fixed_rows::<3>(base).into(),
            v: x.fixed_rows::<3>(base + 3).into(),
            sigma: Mrp(x.fixed_rows::<3>(base + 6).into()),
            omega: x.fixed_rows::<3>(base + 9).into(),
            h: Vec3::zeros(),
        });
    }
    for (k, &j) in rw.iter().enumerate() {
        sats[j].h = x.fixed_rows::<3>(12 * n + 3 * k).into();
    }
    SystemState { t, sats }
}
