//! Control laws: the angular-momentum-neutral kinematics controller, its
//! disturbance feedforward, the conventional sliding-mode baseline, and
//! magnetorquer unloading for the chief satellite.

use crate::dynamics::{
    gravity_gradient_torque, rw_indices, tidal_accel, Environment, SatelliteConfig, SystemState,
};
use crate::error::{Error, Result};
use crate::kinematics::{KinematicsWorkspace, ReducedStates};
use crate::mathkit::{tilde, MatMN, Mrp, Vec3, VecN};
use serde::{Deserialize, Serialize};

/// Positive definite gain matrices K₁ ∈ ℝ^{(6n-3)²} and K₂ ∈ ℝ^{(6n+3m-6)²}.
#[derive(Debug, Clone)]
pub struct ControlGains {
    pub k1: MatMN,
    pub k2: MatMN,
}

impl ControlGains {
    /// Scalar-diagonal gains: K₁ = k1·E, K₂ = diag(k2_qs·E_{6n-3}, k2_xi·E_{3m-3}).
    pub fn diagonal(n: usize, m: usize, k1: f64, k2_qs: f64, k2_xi: f64) -> Self {
        let mut k2 = MatMN::identity(6 * n + 3 * m - 6, 6 * n + 3 * m - 6) * k2_qs;
        for i in (6 * n - 3)..(6 * n + 3 * m - 6) {
            k2[(i, i)] = k2_xi;
        }
        ControlGains {
            k1: MatMN::identity(6 * n - 3, 6 * n - 3) * k1,
            k2,
        }
    }

    /// The gain set used by the five-satellite studies:
    /// K₁ = 250·E, K₂ = diag(1250·E_{6n-3}, 0.005·E_{3m-3}).
    pub fn formation_defaults(n: usize, m: usize) -> Self {
        Self::diagonal(n, m, 250.0, 1250.0, 0.005)
    }
}

/// Stationary control targets: positions for satellites 2..n, attitudes for
/// all n, reduced target velocity (default zero) and target momentum L_d.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub r_d: Vec<Vec3>,
    pub sigma_d: Vec<Mrp>,
    pub v_d: VecN,
    pub l_d: Vec3,
}

impl TargetSet {
    /// Builds a stationary target (v_d = 0, L_d = 0) from all-n positions;
    /// satellite 1's entry is dropped (it is implied by the others through
    /// the fixed formation center).
    pub fn stationary(positions: &[Vec3], attitudes: &[Mrp], m: usize) -> Result<Self> {
        let n = positions.len();
        if attitudes.len() != n || n < 2 {
            return Err(Error::Invalid("need positions and attitudes for n ≥ 2 satellites".into()));
        }
        Ok(TargetSet {
            r_d: positions[1..].to_vec(),
            sigma_d: attitudes.to_vec(),
            v_d: VecN::zeros(6 * n + 3 * m - 6),
            l_d: Vec3::zeros(),
        })
    }

    pub fn n(&self) -> usize {
        self.r_d.len() + 1
    }

    /// q_sd = [r_d; σ_d].
    pub fn q_sd(&self) -> VecN {
        let n = self.n();
        let mut q = VecN::zeros(6 * n - 3);
        for (j, r) in self.r_d.iter().enumerate() {
            q.fixed_rows_mut::<3>(3 * j).copy_from(r);
        }
        for (j, s) in self.sigma_d.iter().enumerate() {
            q.fixed_rows_mut::<3>(3 * (n - 1) + 3 * j).copy_from(&s.as_vec());
        }
        q
    }
}

/// Shadow-consistent MRP difference: `sigma` is replaced by whichever of its
/// two representations lies closer to `sigma_d` before subtracting, so a
/// wrapped attitude never produces a spurious 360° error.
pub fn mrp_error(sigma: &Mrp, sigma_d: &Mrp) -> Vec3 {
    let direct = sigma.as_vec() - sigma_d.as_vec();
    if sigma.norm_squared() < 1e-12 {
        return direct;
    }
    let shadow = sigma.shadow().as_vec() - sigma_d.as_vec();
    if shadow.norm_squared() < direct.norm_squared() {
        shadow
    } else {
        direct
    }
}

/// q_s − q_sd with shadow-consistent attitude differences.
pub fn q_s_error(state: &SystemState, targets: &TargetSet) -> VecN {
    let n = state.n();
    let mut e = VecN::zeros(6 * n - 3);
    for j in 1..n {
        e.fixed_rows_mut::<3>(3 * (j - 1))
            .copy_from(&(state.sats[j].r - targets.r_d[j - 1]));
    }
    for j in 0..n {
        e.fixed_rows_mut::<3>(3 * (n - 1) + 3 * j)
            .copy_from(&mrp_error(&state.sats[j].sigma, &targets.sigma_d[j]));
    }
    e
}

/// Stacked commanded forces (satellites 2..n, I frame), body torques (all n)
/// and wheel torque rates (RW satellites in config order).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlCommand {
    pub forces: Vec<Vec3>,
    pub torques_body: Vec<Vec3>,
    pub rw_torques: Vec<Vec3>,
    /// True when any component was clipped at the configured limits.
    pub saturated: bool,
}

impl ControlCommand {
    /// The reaction force carried by satellite 1: −Σ f_cj.
    pub fn implied_first_force(&self) -> Vec3 {
        -self.forces.iter().sum::<Vec3>()
    }
}

/// Norm limits applied to the command. A violating command is scaled down
/// uniformly (one factor for the whole stacked vector) and flagged: uniform
/// scaling keeps the output inside the momentum-neutral set R·u_c = 0, which
/// per-component clipping would destroy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandLimits {
    pub f_max: f64,
    pub tau_max: f64,
    pub h_dot_max: f64,
}

impl Default for CommandLimits {
    fn default() -> Self {
        // Above anything the study scenarios command, including their initial
        // transients: the control laws reproduced here carry no saturation
        // shaping, so a tight default would silently cripple the disturbance
        // feedforward (the whole command scales down together to stay
        // momentum-neutral). Tighten per scenario to study saturation.
        CommandLimits { f_max: 1e4, tau_max: 1e4, h_dot_max: 1e4 }
    }
}

impl CommandLimits {
    pub fn unlimited() -> Self {
        CommandLimits { f_max: f64::INFINITY, tau_max: f64::INFINITY, h_dot_max: f64::INFINITY }
    }
}

/// Extra per-step outputs for telemetry and verification.
#[derive(Debug, Clone)]
pub struct ControlDiagnostics {
    /// Raw stacked command before unpacking/clipping.
    pub u_c: VecN,
    /// Lyapunov value V = ½e_vᵀM̄e_v + ½e_qᵀK₁e_q.
    pub lyapunov: f64,
    /// Predicted V̇ = −e_vᵀK₂e_v along the averaged dynamics.
    pub v_dot_predicted: f64,
    /// ‖R·u_c‖ / (‖R‖·‖u_c‖): momentum-neutrality defect of the raw command.
    pub momentum_neutrality: f64,
}

/// External-disturbance feedforward
/// u_d = [f_g (sats 2..n, I frame); τ (body); −(1/m)·ᵇL̇].
///
/// Gravity contributions (tidal forces and gravity-gradient torques) are
/// assembled internally when the environment enables them; `extra_*` carries
/// any additional known externals such as the MTQ unloading torque. The wheel
/// block uses ᵇL̇_j = C^{Bj/I}(ⁱL̇ − ⁱω̃_j·ⁱL) with ⁱL̇ = R·u_d, which reduces
/// to the external force moments about satellite 1 plus the rotated torques.
pub fn assemble_disturbance(
    state: &SystemState,
    configs: &[SatelliteConfig],
    env: &Environment,
    extra_torques_body: &[Vec3],
    extra_forces_inertial: &[Vec3],
) -> Result<VecN> {
    let n = state.n();
    if extra_torques_body.len() != n || extra_forces_inertial.len() != n {
        return Err(Error::Invalid("per-satellite external inputs must have length n".into()));
    }
    let rw = rw_indices(configs);
    let m = rw.len();
    let mut u_d = VecN::zeros(6 * n + 3 * m - 3);

    let mut forces = vec![Vec3::zeros(); n];
    let mut torques = vec![Vec3::zeros(); n];
    let center = env.orbit.center_position(state.t);
    for j in 0..n {
        forces[j] = extra_forces_inertial[j];
        torques[j] = extra_torques_body[j];
        if env.disturbances.gravity {
            forces[j] += configs[j].mass * tidal_accel(&env.orbit, state.t, &state.sats[j].r);
            let r_body = state.sats[j].sigma.to_dcm().inertial_to_body(&(center + state.sats[j].r));
            torques[j] += gravity_gradient_torque(&configs[j], &r_body)?;
        }
    }

    for j in 1..n {
        u_d.fixed_rows_mut::<3>(3 * (j - 1)).copy_from(&forces[j]);
    }
    for j in 0..n {
        u_d.fixed_rows_mut::<3>(3 * (n - 1) + 3 * j).copy_from(&torques[j]);
    }

    // ⁱL̇ = R·u_d: moments of the external forces about satellite 1 plus the
    // external torques rotated into the I frame.
    let r1 = state.sats[0].r;
    let mut l_dot = Vec3::zeros();
    for j in 1..n {
        l_dot += (state.sats[j].r - r1).cross(&forces[j]);
    }
    for j in 0..n {
        l_dot += state.sats[j].sigma.to_dcm().body_to_inertial(&torques[j]);
    }
    let l = state.angular_momentum(configs);
    let inv_m = 1.0 / m as f64;
    for (k, &j) in rw.iter().enumerate() {
        let c = state.sats[j].sigma.to_dcm();
        let omega_i = c.body_to_inertial(&state.sats[j].omega);
        let l_dot_body = c.inertial_to_body(&(l_dot - tilde(&omega_i) * l));
        u_d.fixed_rows_mut::<3>(6 * n - 3 + 3 * k).copy_from(&(-inv_m * l_dot_body));
    }
    Ok(u_d)
}

/// The kinematics control law
/// u_c = B̄ᵣ⁻¹(−T₁ᵀK₁(q_s−q_sd) − K₂(v−v_d) − Sᵀu_d).
///
/// Every output lies in the momentum-neutral set [B]⁻¹[M]S·X, so the EMFF
/// system can realize it without changing the total angular momentum.
pub fn kinematics_control(
    ws: &KinematicsWorkspace,
    state: &SystemState,
    red: &ReducedStates,
    targets: &TargetSet,
    gains: &ControlGains,
    u_d: &VecN,
    limits: &CommandLimits,
) -> Result<(ControlCommand, ControlDiagnostics)> {
    let n = ws.n;
    let m = ws.m;
    let dim_v = 6 * n + 3 * m - 6;
    if gains.k1.nrows() != 6 * n - 3 || gains.k2.nrows() != dim_v {
        return Err(Error::Invalid("gain dimensions do not match the formation".into()));
    }
    if u_d.len() != 6 * n + 3 * m - 3 {
        return Err(Error::Invalid("u_d dimension mismatch".into()));
    }

    let e_q = q_s_error(state, targets);
    let e_v = &red.v - &targets.v_d;
    let u_d_bar = ws.s.transpose() * u_d;
    let w = -(ws.t1.transpose() * (&gains.k1 * &e_q)) - &gains.k2 * &e_v - u_d_bar;
    let mut u_c = &ws.b_bar_rinv * &w;

    let lyapunov = 0.5 * (e_v.transpose() * &ws.m_bar * &e_v)[(0, 0)]
        + 0.5 * (e_q.transpose() * &gains.k1 * &e_q)[(0, 0)];
    let v_dot_predicted = -(e_v.transpose() * &gains.k2 * &e_v)[(0, 0)];

    // common saturation factor over all blocks
    let mut scale: f64 = 1.0;
    for j in 0..n - 1 {
        scale = scale.min(limits.f_max / u_c.fixed_rows::<3>(3 * j).norm().max(1e-300));
    }
    for j in 0..n {
        scale = scale.min(limits.tau_max / u_c.fixed_rows::<3>(3 * (n - 1) + 3 * j).norm().max(1e-300));
    }
    for k in 0..m {
        scale = scale.min(limits.h_dot_max / u_c.fixed_rows::<3>(6 * n - 3 + 3 * k).norm().max(1e-300));
    }
    let saturated = scale < 1.0;
    if saturated {
        u_c *= scale;
    }

    let neutrality_scale = ws.r_mat.norm() * u_c.norm();
    let momentum_neutrality = if neutrality_scale > 0.0 {
        (&ws.r_mat * &u_c).norm() / neutrality_scale
    } else {
        0.0
    };

    let forces = (0..n - 1).map(|j| u_c.fixed_rows::<3>(3 * j).into()).collect();
    let torques_body = (0..n).map(|j| u_c.fixed_rows::<3>(3 * (n - 1) + 3 * j).into()).collect();
    let rw_torques = (0..m).map(|k| u_c.fixed_rows::<3>(6 * n - 3 + 3 * k).into()).collect();

    Ok((
        ControlCommand { forces, torques_body, rw_torques, saturated },
        ControlDiagnostics { u_c, lyapunov, v_dot_predicted, momentum_neutrality },
    ))
}

/// Gains of the conventional comparison law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConventionalGains {
    pub lambda_p1: f64,
    pub lambda_p2: f64,
    pub lambda_a1: f64,
    pub lambda_a2: f64,
}

impl Default for ConventionalGains {
    fn default() -> Self {
        ConventionalGains { lambda_p1: 0.0125, lambda_p2: 0.0125, lambda_a1: 10.0, lambda_a2: 15.0 }
    }
}

/// Conventional baseline: per-satellite sliding-mode position forces plus a
/// per-satellite wheel attitude law that absorbs the (uncompensated) EM
/// torque estimate `tau_em_body`.
///
/// Force law (I-frame, stationary targets):
/// f_j = −f_gj + m_j(λ_p1·ė_j + λ_p2·U_j), U_j = ė_j + λ_p1·e_j.
/// Wheel law: ḣ_j = τ_EM,j − ω×(Jω+h) + λ_a1·σ_err + λ_a2·ω, which closes
/// the loop as Jω̇ = −λ_a1σ − λ_a2ω + τ_d.
pub fn conventional_control(
    state: &SystemState,
    configs: &[SatelliteConfig],
    env: &Environment,
    target_positions: &[Vec3],
    target_attitudes: &[Mrp],
    gains: &ConventionalGains,
    tau_em_body: &[Vec3],
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let n = state.n();
    if target_positions.len() != n || target_attitudes.len() != n || tau_em_body.len() != n {
        return Err(Error::Invalid("conventional control needs n targets and torque estimates".into()));
    }
    let mut forces = Vec::with_capacity(n);
    let mut rw_rates = Vec::with_capacity(n);
    for j in 0..n {
        let s = &state.sats[j];
        let cfg = &configs[j];
        if !cfg.has_rw {
            return Err(Error::Invalid(
                "the conventional baseline assumes reaction wheels on every satellite".into(),
            ));
        }
        let e = target_positions[j] - s.r;
        let e_dot = -s.v;
        let u_sliding = e_dot + gains.lambda_p1 * e;
        let mut f = cfg.mass * (gains.lambda_p1 * e_dot + gains.lambda_p2 * u_sliding);
        if env.disturbances.gravity {
            f -= cfg.mass * tidal_accel(&env.orbit, state.t, &s.r);
        }
        forces.push(f);

        let sigma_err = mrp_error(&s.sigma, &target_attitudes[j]);
        let h_dot = tau_em_body[j] - s.omega.cross(&(cfg.inertia * s.omega + s.h))
            + gains.lambda_a1 * sigma_err
            + gains.lambda_a2 * s.omega;
        rw_rates.push(h_dot);
    }
    Ok((forces, rw_rates))
}

/// MTQ unloading dipole for the chief satellite:
/// μ_DC = (k_DC/(B_e·B_e))·(h × B_e), body frame.
///
/// The resulting torque μ_DC × B_e = k_DC(B̂(B̂·h) − h) bleeds off the wheel
/// momentum component perpendicular to the local field.
pub fn mtq_unloading_dipole(h_chief_body: &Vec3, b_e_body: &Vec3, k_dc: f64) -> Result<Vec3> {
    let b2 = b_e_body.norm_squared();
    if b2 == 0.0 {
        return Err(Error::Invalid("MTQ unloading undefined in zero magnetic field".into()));
    }
    Ok(k_dc / b2 * h_chief_body.cross(b_e_body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        propagate, DipoleDrive, Disturbances, OrbitReference, PropagationMode, SatelliteState,
    };
    use crate::kinematics::reduced_states;
    use crate::mathkit::Mat3;
    use approx::assert_abs_diff_eq;

    fn config(has_rw: bool) -> SatelliteConfig {
        SatelliteConfig {
            mass: 200.0,
            inertia: Mat3::from_diagonal(&Vec3::new(107.0, 107.0, 134.0)),
            has_rw,
            coil_radius: 1.0,
            mu_max: 1e5,
            rw_h_max: 50.0,
        }
    }

    fn ring_positions(n: usize, radius: f64) -> Vec<Vec3> {
        (0..n)
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                Vec3::new(radius * a.cos(), radius * a.sin(), 0.0)
            })
            .collect()
    }

    fn env_no_disturbance() -> Environment {
        Environment {
            orbit: OrbitReference::circular(700e3),
            disturbances: Disturbances::none(),
        }
    }

    #[test]
    fn equilibrium_command_is_zero() {
        let configs = vec![config(true); 3];
        let positions = ring_positions(3, 8.0);
        let state = SystemState {
            t: 0.0,
            sats: positions.iter().map(|&r| SatelliteState::at_rest(r, Mrp::zero())).collect(),
        };
        let targets = TargetSet::stationary(&positions, &[Mrp::zero(); 3], 3).unwrap();
        let ws = KinematicsWorkspace::build(&state, &configs).unwrap();
        let red = reduced_states(&state, &configs, &targets.l_d).unwrap();
        let gains = ControlGains::formation_defaults(3, 3);
        let u_d = VecN::zeros(6 * 3 + 3 * 3 - 3);
        let (cmd, diag) =
            kinematics_control(&ws, &state, &red, &targets, &gains, &u_d, &CommandLimits::default())
                .unwrap();
        assert!(diag.u_c.norm() < 1e-12);
        assert!(diag.lyapunov < 1e-20);
        assert!(!cmd.saturated);
        assert!(cmd.forces.iter().all(|f| f.norm() < 1e-12));
    }

    #[test]
    fn command_is_momentum_neutral_for_random_errors() {
        let configs = vec![config(true), config(true), config(false), config(true)];
        let positions = ring_positions(4, 9.0);
        let mut state = SystemState {
            t: 0.0,
            sats: positions.iter().map(|&r| SatelliteState::at_rest(r, Mrp::zero())).collect(),
        };
        // random-ish perturbations
        state.sats[0].sigma = Mrp::new(0.2, -0.1, 0.05);
        state.sats[1].r += Vec3::new(0.8, -0.4, 0.3);
        state.sats[1].v = Vec3::new(0.01, 0.02, -0.01);
        state.sats[2].omega = Vec3::new(0.02, 0.0, -0.01);
        state.sats[3].h = Vec3::new(0.4, -0.2, 0.1);
        let targets = TargetSet::stationary(&positions, &[Mrp::zero(); 4], 3).unwrap();
        let ws = KinematicsWorkspace::build(&state, &configs).unwrap();
        let red = reduced_states(&state, &configs, &targets.l_d).unwrap();
        let gains = ControlGains::formation_defaults(4, 3);
        let env = env_no_disturbance();
        let u_d = assemble_disturbance(&state, &configs, &env, &[Vec3::zeros(); 4], &[Vec3::zeros(); 4]).unwrap();
        let (_, diag) =
            kinematics_control(&ws, &state, &red, &targets, &gains, &u_d, &CommandLimits::default())
                .unwrap();
        assert!(diag.momentum_neutrality < 1e-10, "defect {:.3e}", diag.momentum_neutrality);
    }

    #[test]
    fn disturbance_assembly_zero_and_single_torque() {
        let configs = vec![config(true), config(true)];
        let positions = vec![Vec3::new(5.0, 0.0, 0.0), Vec3::new(-5.0, 0.0, 0.0)];
        let state = SystemState {
            t: 0.0,
            sats: vec![
                SatelliteState::at_rest(positions[0], Mrp::new(0.1, 0.2, -0.1)),
                SatelliteState::at_rest(positions[1], Mrp::zero()),
            ],
        };
        let env = env_no_disturbance();
        let zeros = [Vec3::zeros(); 2];
        let u_d = assemble_disturbance(&state, &configs, &env, &zeros, &zeros).unwrap();
        assert_eq!(u_d.norm(), 0.0);

        // single body torque on satellite 2: ⁱL̇ = C^{I/B2}·τ shows up in the
        // wheel feedforward block as −(1/m)C^{Bj/I}ⁱL̇ (state at rest, ω=0).
        let tau = Vec3::new(0.3, -0.1, 0.2);
        let torques = [Vec3::zeros(), tau];
        let u_d = assemble_disturbance(&state, &configs, &env, &torques, &zeros).unwrap();
        let l_dot_i = state.sats[1].sigma.to_dcm().body_to_inertial(&tau);
        for (k, &j) in [0usize, 1].iter().enumerate() {
            let expect = -0.5 * state.sats[j].sigma.to_dcm().inertial_to_body(&l_dot_i);
            let got: Vec3 = u_d.fixed_rows::<3>(6 * 2 - 3 + 3 * k).into();
            assert_abs_diff_eq!(got, expect, epsilon = 1e-15);
        }
    }

    /// With gravity enabled and a formation strung along ô_x (zero quadrupole
    /// moment about the center), the tidal force moments cancel and
    /// ⁱL̇ = Σ C^{I/Bj} τ_gj exactly; in general R·u_d matches the
    /// finite-differenced truth L along a propagated trajectory.
    #[test]
    fn disturbance_l_dot_matches_truth_rate() {
        let configs = vec![config(true), config(true), config(true)];
        let ox = OrbitReference::circular(700e3).o_x(0.0);
        let positions = vec![6.0 * ox, Vec3::zeros(), -6.0 * ox];
        let state = SystemState {
            t: 0.0,
            sats: vec![
                SatelliteState::at_rest(positions[0], Mrp::new(0.1, -0.2, 0.3)),
                SatelliteState::at_rest(positions[1], Mrp::new(-0.2, 0.1, 0.0)),
                SatelliteState::at_rest(positions[2], Mrp::new(0.0, 0.3, -0.1)),
            ],
        };
        let env = Environment {
            orbit: OrbitReference::circular(700e3),
            disturbances: Disturbances { gravity: true, geomagnetic: false },
        };
        let zeros = [Vec3::zeros(); 3];
        let model_l_dot = |st: &SystemState| -> Vec3 {
            let u_d = assemble_disturbance(st, &configs, &env, &zeros, &zeros).unwrap();
            let r_mat = crate::kinematics::r_matrix(st, &configs);
            let v = &r_mat * &u_d;
            Vec3::new(v[0], v[1], v[2])
        };

        // zero-quadrupole check at t = 0: the formation is strung along ô_x,
        // so tidal force moments vanish and only the rotated torques remain.
        let mut tau_sum = Vec3::zeros();
        let center = env.orbit.center_position(0.0);
        for j in 0..3 {
            let c = state.sats[j].sigma.to_dcm();
            let r_body = c.inertial_to_body(&(center + state.sats[j].r));
            tau_sum += c.body_to_inertial(&gravity_gradient_torque(&configs[j], &r_body).unwrap());
        }
        assert_abs_diff_eq!(model_l_dot(&state), tau_sum, epsilon = 1e-9 * tau_sum.norm().max(1e-12));

        // truth oracle: the forward difference of L over [0, h] equals the
        // model rate at the midpoint state (which now carries rotating-frame
        // tidal force moments as well).
        let drive = DipoleDrive::Dc(vec![Vec3::zeros(); 3]);
        let h = 0.5;
        let mid = propagate(&state, &configs, &env, &drive, &zeros, h / 2.0, PropagationMode::Averaged).unwrap();
        let fwd = propagate(&state, &configs, &env, &drive, &zeros, h, PropagationMode::Averaged).unwrap();
        let l0 = state.angular_momentum(&configs);
        let l1 = fwd.angular_momentum(&configs);
        let fd = (l1 - l0) / h;
        let model_mid = model_l_dot(&mid);
        assert!(
            (fd - model_mid).norm() <= 1e-3 * model_mid.norm().max(1e-9),
            "fd {fd:?} vs model {model_mid:?}"
        );
    }

    #[test]
    fn conventional_gains_and_gravity_feedforward() {
        let gains = ConventionalGains::default();
        assert_eq!(gains.lambda_p1, 0.0125);
        assert_eq!(gains.lambda_a1, 10.0);

        let configs = vec![config(true), config(true)];
        let positions = vec![Vec3::new(5.0, 0.0, 0.0), Vec3::new(-5.0, 0.0, 0.0)];
        let state = SystemState {
            t: 0.0,
            sats: positions.iter().map(|&r| SatelliteState::at_rest(r, Mrp::zero())).collect(),
        };
        let env = Environment {
            orbit: OrbitReference::circular(700e3),
            disturbances: Disturbances { gravity: true, geomagnetic: false },
        };
        let (forces, _) = conventional_control(
            &state,
            &configs,
            &env,
            &positions,
            &[Mrp::zero(); 2],
            &gains,
            &[Vec3::zeros(); 2],
        )
        .unwrap();
        // at target with zero rates only the tidal feedforward remains
        for (j, f) in forces.iter().enumerate() {
            let expected = -configs[j].mass * tidal_accel(&env.orbit, 0.0, &state.sats[j].r);
            assert_abs_diff_eq!(*f, expected, epsilon = 1e-15);
        }
    }

    /// The conventional wheel law regulates a single free satellite within 500 s.
    #[test]
    fn conventional_rw_law_regulates_attitude() {
        let configs = vec![config(true)];
        let env = env_no_disturbance();
        let mut state = SystemState {
            t: 0.0,
            sats: vec![SatelliteState {
                r: Vec3::zeros(),
                v: Vec3::zeros(),
                sigma: Mrp::new(0.3, -0.2, 0.1),
                omega: Vec3::new(0.02, 0.01, -0.03),
                h: Vec3::zeros(),
            }],
        };
        let gains = ConventionalGains::default();
        let drive = DipoleDrive::Dc(vec![Vec3::zeros()]);
        let dt = 0.1;
        for _ in 0..5000 {
            let (_, rates) = conventional_control(
                &state,
                &configs,
                &env,
                &[Vec3::zeros()],
                &[Mrp::zero()],
                &gains,
                &[Vec3::zeros()],
            )
            .unwrap();
            state = propagate(&state, &configs, &env, &drive, &rates, dt, PropagationMode::Averaged).unwrap();
        }
        assert!(state.sats[0].sigma.as_vec().norm() < 1e-4, "σ = {:?}", state.sats[0].sigma);
        assert!(state.sats[0].omega.norm() < 1e-5);
    }

    /// Tight limits scale the whole command down together, keeping it in the
    /// momentum-neutral set and raising the flag.
    #[test]
    fn saturation_scales_uniformly_and_stays_neutral() {
        let configs = vec![config(true); 3];
        let positions = ring_positions(3, 8.0);
        let mut state = SystemState {
            t: 0.0,
            sats: positions.iter().map(|&r| SatelliteState::at_rest(r, Mrp::zero())).collect(),
        };
        state.sats[1].r += Vec3::new(1.5, -0.8, 0.4); // big error → big command
        let targets = TargetSet::stationary(&positions, &[Mrp::zero(); 3], 3).unwrap();
        let ws = KinematicsWorkspace::build(&state, &configs).unwrap();
        let red = reduced_states(&state, &configs, &targets.l_d).unwrap();
        let gains = ControlGains::formation_defaults(3, 3);
        let u_d = VecN::zeros(6 * 3 + 3 * 3 - 3);
        let tight = CommandLimits { f_max: 0.05, tau_max: 0.05, h_dot_max: 0.05 };
        let (cmd, diag) =
            kinematics_control(&ws, &state, &red, &targets, &gains, &u_d, &tight).unwrap();
        assert!(cmd.saturated);
        let max_f = cmd.forces.iter().map(|f| f.norm()).fold(0.0, f64::max);
        assert!(max_f <= 0.05 * (1.0 + 1e-12) && max_f > 0.049);
        assert!(diag.momentum_neutrality < 1e-10, "defect {:.3e}", diag.momentum_neutrality);

        let (cmd_free, diag_free) = kinematics_control(
            &ws, &state, &red, &targets, &gains, &u_d, &CommandLimits::unlimited(),
        )
        .unwrap();
        assert!(!cmd_free.saturated);
        // scaled command is parallel to the free one
        let ratio = diag.u_c.norm() / diag_free.u_c.norm();
        assert!((diag.u_c.clone() - ratio * &diag_free.u_c).norm() <= 1e-12 * diag.u_c.norm());
    }

    #[test]
    fn mtq_unloading_examples() {
        // parallel momentum produces nothing
        let b = Vec3::new(0.0, 0.0, 5e-5);
        assert_eq!(mtq_unloading_dipole(&(2.0 * b), &b, 0.02).unwrap(), Vec3::zeros());

        let mu = mtq_unloading_dipole(&Vec3::new(1.0, 0.0, 0.0), &b, 0.02).unwrap();
        assert_abs_diff_eq!(mu, Vec3::new(0.0, -400.0, 0.0), epsilon = 1e-9);

        assert!(mtq_unloading_dipole(&Vec3::x(), &Vec3::zeros(), 0.02).is_err());

        // the unloading torque never pumps the wheel momentum
        let mut seed = 3u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..50 {
            let h = Vec3::new(next(), next(), next());
            let be = Vec3::new(next(), next(), next()) * 5e-5;
            if be.norm() < 1e-9 {
                continue;
            }
            let mu = mtq_unloading_dipole(&h, &be, 0.02).unwrap();
            let tau = mu.cross(&be);
            assert!(tau.dot(&h) <= 1e-15);
        }
    }
}
