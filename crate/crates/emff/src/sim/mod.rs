//! Scenario configuration, presets, the closed-loop executive
//! (controller → allocation → propagation), telemetry and summary metrics.

pub mod telemetry;

use crate::allocation::{
    solve_ac_allocation, solve_dc_allocation, AllocationProblem, AllocationSettings,
};
use crate::control::{
    assemble_disturbance, conventional_control, kinematics_control, mtq_unloading_dipole,
    CommandLimits, ControlGains, ConventionalGains, TargetSet,
};
use crate::dynamics::{
    far_field_floor, geomagnetic_field, propagate, rw_indices, DipoleDrive, Disturbances,
    Environment, OrbitReference, PropagationMode, SatelliteConfig, SatelliteState, SystemState,
};
use crate::error::{Error, Result};
use crate::kinematics::{reduced_states, KinematicsWorkspace};
use crate::magnetics::AcDipoleSet;
use crate::mathkit::{Mat3, Mrp, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
pub use telemetry::{SatelliteFrame, Summary, TelemetryFrame};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatelliteSpec {
    pub mass_kg: f64,
    pub inertia_diag_kgm2: [f64; 3],
    pub has_rw: bool,
    #[serde(default = "default_coil_radius")]
    pub coil_radius_m: f64,
    #[serde(default = "default_mu_max")]
    pub mu_max_am2: f64,
    #[serde(default = "default_rw_h_max")]
    pub rw_h_max_nms: f64,
}

fn default_coil_radius() -> f64 {
    1.0
}
fn default_mu_max() -> f64 {
    1e5
}
fn default_rw_h_max() -> f64 {
    50.0
}

impl SatelliteSpec {
    pub fn to_config(&self) -> SatelliteConfig {
        SatelliteConfig {
            mass: self.mass_kg,
            inertia: Mat3::from_diagonal(&Vec3::new(
                self.inertia_diag_kgm2[0],
                self.inertia_diag_kgm2[1],
                self.inertia_diag_kgm2[2],
            )),
            has_rw: self.has_rw,
            coil_radius: self.coil_radius_m,
            mu_max: self.mu_max_am2,
            rw_h_max: self.rw_h_max_nms,
        }
    }

    /// The 200 kg, diag(107, 107, 134) kg·m² satellite of the five-sat studies.
    pub fn formation_default(has_rw: bool) -> Self {
        SatelliteSpec {
            mass_kg: 200.0,
            inertia_diag_kgm2: [107.0, 107.0, 134.0],
            has_rw,
            coil_radius_m: default_coil_radius(),
            mu_max_am2: default_mu_max(),
            rw_h_max_nms: default_rw_h_max(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Proposed,
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationKind {
    AcPowerOptimal,
    /// J = 0: any feasible dipole set.
    AcFeasibility,
    /// Torque-minimizing DC inversion (force constraints only).
    DcBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainConfig {
    pub k1: f64,
    pub k2_qs: f64,
    pub k2_xi: f64,
}

impl Default for GainConfig {
    fn default() -> Self {
        GainConfig { k1: 250.0, k2_qs: 1250.0, k2_xi: 0.005 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub gravity_gradient: bool,
    pub geomagnetic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnloadingConfig {
    pub enabled: bool,
    #[serde(default = "default_k_dc")]
    pub k_dc: f64,
    /// Chief satellite index (0-based); defaults to the last satellite.
    #[serde(default)]
    pub chief: Option<usize>,
}

fn default_k_dc() -> f64 {
    0.02
}

impl Default for UnloadingConfig {
    fn default() -> Self {
        UnloadingConfig { enabled: false, k_dc: default_k_dc(), chief: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Averaged,
    Instantaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialConditions {
    /// Start exactly on the targets, at rest.
    AtTargets,
    /// Positions jittered uniformly within ±pos_jitter_m of the targets
    /// (re-centered so the formation center stays put), random attitudes with
    /// ‖σ‖ ≤ mrp_max, and optional velocity/body-rate jitter (velocities are
    /// re-centered to keep the linear momentum zero).
    SeededRandom {
        pos_jitter_m: f64,
        mrp_max: f64,
        #[serde(default)]
        vel_jitter_mps: f64,
        #[serde(default)]
        rate_jitter_radps: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub constraint_tol: f64,
    pub gradient_tol: f64,
    pub restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { constraint_tol: 1e-8, gradient_tol: 1e-6, restarts: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub satellites: Vec<SatelliteSpec>,
    #[serde(default = "default_altitude")]
    pub altitude_m: f64,
    pub target_positions_m: Vec<[f64; 3]>,
    #[serde(default)]
    pub target_attitudes_mrp: Vec<[f64; 3]>,
    pub controller: ControllerKind,
    pub allocation: AllocationKind,
    #[serde(default)]
    pub gains: GainConfig,
    #[serde(default)]
    pub conventional_gains: ConventionalGains,
    pub omega_f_rad_s: f64,
    pub disturbances: DisturbanceConfig,
    #[serde(default)]
    pub unloading: UnloadingConfig,
    pub dt_s: f64,
    pub duration_s: f64,
    pub mode: ModeKind,
    #[serde(default)]
    pub seed: u64,
    pub initial_conditions: InitialConditions,
    #[serde(default)]
    pub limits: CommandLimits,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_altitude() -> f64 {
    700e3
}

impl ScenarioConfig {
    pub fn n(&self) -> usize {
        self.satellites.len()
    }

    pub fn m(&self) -> usize {
        self.satellites.iter().filter(|s| s.has_rw).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.m();
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if n < 2 {
            return Err(Error::Config(format!("at least 2 satellites required, got {n}")));
        }
        if m == 0 || m > n {
            return Err(Error::Config(format!("RW count must satisfy 1 ≤ m ≤ n, got {m}")));
        }
        if self.target_positions_m.len() != n {
            return Err(Error::Config(format!(
                "target_positions_m must list all {n} satellites, got {}",
                self.target_positions_m.len()
            )));
        }
        if !self.target_attitudes_mrp.is_empty() && self.target_attitudes_mrp.len() != n {
            return Err(Error::Config("target_attitudes_mrp must be empty or length n".into()));
        }
        for s in &self.satellites {
            s.to_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        // targets must keep the (uncontrollable) formation center fixed
        let total_mass: f64 = self.satellites.iter().map(|s| s.mass_kg).sum();
        let mut center = Vec3::zeros();
        for (s, p) in self.satellites.iter().zip(&self.target_positions_m) {
            center += s.mass_kg * Vec3::new(p[0], p[1], p[2]);
        }
        center /= total_mass;
        let scale = self
            .target_positions_m
            .iter()
            .map(|p| Vec3::new(p[0], p[1], p[2]).norm())
            .fold(1.0, f64::max);
        if center.norm() > 1e-9 * scale {
            return Err(Error::Config(format!(
                "target positions move the formation mass center by {:.3e} m; EMFF cannot do that",
                center.norm()
            )));
        }
        if !(self.dt_s > 0.0) || !(self.duration_s >= self.dt_s) {
            return Err(Error::Config(format!(
                "need 0 < dt_s ({}) ≤ duration_s ({})",
                self.dt_s, self.duration_s
            )));
        }
        if !(self.omega_f_rad_s > 0.0) {
            return Err(Error::Config("omega_f_rad_s must be positive".into()));
        }
        if self.mode == ModeKind::Instantaneous {
            let bound = (2.0 * std::f64::consts::PI / self.omega_f_rad_s) / 20.0;
            if self.dt_s > bound {
                return Err(Error::Config(format!(
                    "instantaneous mode needs dt_s ≤ {bound:.4} (1/20 AC period)"
                )));
            }
        }
        match self.controller {
            ControllerKind::Proposed => {
                if self.allocation == AllocationKind::DcBaseline {
                    return Err(Error::Config(
                        "the proposed controller commands torques; DC allocation cannot realize them".into(),
                    ));
                }
            }
            ControllerKind::Conventional => {
                if self.allocation != AllocationKind::DcBaseline {
                    return Err(Error::Config(
                        "the conventional baseline pairs with the DC torque-minimizing allocation".into(),
                    ));
                }
                if m != n {
                    return Err(Error::Config(
                        "the conventional baseline assumes wheels on every satellite".into(),
                    ));
                }
            }
        }
        if self.unloading.enabled {
            if self.controller != ControllerKind::Proposed {
                return Err(Error::Config("MTQ unloading requires the proposed controller".into()));
            }
            if !self.disturbances.geomagnetic {
                return Err(Error::Config(
                    "MTQ unloading torques come from the geomagnetic field; enable disturbances.geomagnetic".into(),
                ));
            }
            let chief = self.unloading.chief.unwrap_or(n - 1);
            if chief >= n || !self.satellites[chief].has_rw {
                return Err(Error::Config(format!(
                    "unloading chief {chief} must be a valid RW-equipped satellite"
                )));
            }
        }
        Ok(())
    }

    pub fn target_positions(&self) -> Vec<Vec3> {
        self.target_positions_m
            .iter()
            .map(|p| Vec3::new(p[0], p[1], p[2]))
            .collect()
    }

    pub fn target_attitudes(&self) -> Vec<Mrp> {
        if self.target_attitudes_mrp.is_empty() {
            vec![Mrp::zero(); self.n()]
        } else {
            self.target_attitudes_mrp
                .iter()
                .map(|s| Mrp::new(s[0], s[1], s[2]))
                .collect()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario configs are serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The five-satellite ring of the formation studies: four satellites on a
/// 10 m circle at 105°, 165°, 285°, −15° with alternating z = ∓2 m, plus a
/// chief at the center.
fn five_sat_ring(z_swap_23: bool) -> Vec<[f64; 3]> {
    let deg = |d: f64| d.to_radians();
    let ring = |angle_deg: f64, z: f64| -> [f64; 3] {
        [10.0 * deg(angle_deg).cos(), 10.0 * deg(angle_deg).sin(), z]
    };
    if z_swap_23 {
        vec![
            ring(105.0, -2.0),
            ring(165.0, -2.0),
            ring(285.0, 2.0),
            ring(-15.0, 2.0),
            [0.0, 0.0, 0.0],
        ]
    } else {
        vec![
            ring(105.0, -2.0),
            ring(165.0, 2.0),
            ring(285.0, -2.0),
            ring(-15.0, 2.0),
            [0.0, 0.0, 0.0],
        ]
    }
}

/// Names of the built-in scenario presets.
pub fn preset_names() -> Vec<&'static str> {
    vec!["maintenance_5sat", "reconfig_5sat_3rw", "unloading_5sat_mtq"]
}

/// Builds a built-in preset by name.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let orbit_period = OrbitReference::circular(default_altitude()).period();
    let base = ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        satellites: (0..5).map(|_| SatelliteSpec::formation_default(true)).collect(),
        altitude_m: default_altitude(),
        target_positions_m: five_sat_ring(false),
        target_attitudes_mrp: Vec::new(),
        controller: ControllerKind::Proposed,
        allocation: AllocationKind::AcPowerOptimal,
        gains: GainConfig::default(),
        conventional_gains: ConventionalGains::default(),
        omega_f_rad_s: 4.0 * std::f64::consts::PI,
        disturbances: DisturbanceConfig { gravity_gradient: true, geomagnetic: false },
        unloading: UnloadingConfig::default(),
        dt_s: 0.05,
        duration_s: orbit_period.ceil(),
        mode: ModeKind::Averaged,
        seed: 0,
        initial_conditions: InitialConditions::AtTargets,
        limits: CommandLimits::default(),
        solver: SolverConfig::default(),
    };
    let cfg = match name {
        "maintenance_5sat" => base,
        "reconfig_5sat_3rw" => {
            let mut cfg = base;
            for (j, sat) in cfg.satellites.iter_mut().enumerate() {
                sat.has_rw = j < 3;
            }
            cfg.omega_f_rad_s = 16.0 * std::f64::consts::PI;
            cfg.disturbances.geomagnetic = true;
            cfg.initial_conditions = InitialConditions::SeededRandom {
                pos_jitter_m: 2.0,
                mrp_max: 0.5,
                vel_jitter_mps: 0.0,
                rate_jitter_radps: 0.0,
            };
            cfg.seed = 7;
            cfg
        }
        "unloading_5sat_mtq" => {
            let mut cfg = base;
            cfg.target_positions_m = five_sat_ring(true);
            cfg.omega_f_rad_s = 16.0 * std::f64::consts::PI;
            cfg.disturbances.geomagnetic = true;
            cfg.unloading = UnloadingConfig { enabled: true, k_dc: 0.02, chief: Some(4) };
            cfg
        }
        other => return Err(Error::Config(format!("unknown preset '{other}'"))),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub frames: Vec<TelemetryFrame>,
    pub summary: Summary,
}

/// Runs the closed loop and keeps every frame. On mid-run failure the frames
/// collected so far are returned alongside the error so callers can persist
/// partial telemetry.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    let (frames, result) = run_scenario_collect(cfg);
    match result {
        Ok(summary) => Ok(ScenarioOutput { frames, summary }),
        Err(e) => Err(e),
    }
}

pub fn run_scenario_collect(cfg: &ScenarioConfig) -> (Vec<TelemetryFrame>, Result<Summary>) {
    let mut frames = Vec::new();
    let result = run_loop(cfg, &mut frames);
    (frames, result)
}

struct LoopState {
    warm_ac: Option<AcDipoleSet>,
    warm_dc: Option<Vec<Vec3>>,
}

fn initial_state(cfg: &ScenarioConfig, configs: &[SatelliteConfig]) -> SystemState {
    let targets = cfg.target_positions();
    let attitudes = cfg.target_attitudes();
    let mut sats: Vec<SatelliteState> = targets
        .iter()
        .zip(&attitudes)
        .map(|(&r, &s)| SatelliteState::at_rest(r, s))
        .collect();
    if let InitialConditions::SeededRandom { pos_jitter_m, mrp_max, vel_jitter_mps, rate_jitter_radps } =
        cfg.initial_conditions
    {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let jitter3 = |rng: &mut ChaCha8Rng, half: f64| {
            if half > 0.0 {
                Vec3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                )
            } else {
                Vec3::zeros()
            }
        };
        for sat in sats.iter_mut() {
            sat.r += jitter3(&mut rng, pos_jitter_m);
            let sigma = loop {
                let s = jitter3(&mut rng, mrp_max);
                if s.norm() <= mrp_max {
                    break s;
                }
            };
            sat.sigma = Mrp(sigma);
            sat.v = jitter3(&mut rng, vel_jitter_mps);
            sat.omega = jitter3(&mut rng, rate_jitter_radps);
        }
        // EMFF cannot move the mass center or change the linear momentum:
        // restore both to the target values.
        let total_mass: f64 = configs.iter().map(|c| c.mass).sum();
        let mut r_offset = Vec3::zeros();
        let mut v_offset = Vec3::zeros();
        for ((sat, cfg_j), &target) in sats.iter().zip(configs).zip(&targets) {
            r_offset += cfg_j.mass * (sat.r - target);
            v_offset += cfg_j.mass * sat.v;
        }
        r_offset /= total_mass;
        v_offset /= total_mass;
        for sat in sats.iter_mut() {
            sat.r -= r_offset;
            sat.v -= v_offset;
        }
    }
    SystemState { t: 0.0, sats }
}

fn run_loop(cfg: &ScenarioConfig, frames: &mut Vec<TelemetryFrame>) -> Result<Summary> {
    cfg.validate()?;
    let configs: Vec<SatelliteConfig> = cfg.satellites.iter().map(|s| s.to_config()).collect();
    let n = cfg.n();
    let m = cfg.m();
    let rw = rw_indices(&configs);
    let env = Environment {
        orbit: OrbitReference::circular(cfg.altitude_m),
        disturbances: Disturbances {
            gravity: cfg.disturbances.gravity_gradient,
            geomagnetic: cfg.disturbances.geomagnetic,
        },
    };
    let mode = match cfg.mode {
        ModeKind::Averaged => PropagationMode::Averaged,
        ModeKind::Instantaneous => PropagationMode::Instantaneous,
    };
    let target_positions = cfg.target_positions();
    let target_attitudes = cfg.target_attitudes();
    let targets = TargetSet::stationary(&target_positions, &target_attitudes, m)?;
    let gains = ControlGains::diagonal(n, m, cfg.gains.k1, cfg.gains.k2_qs, cfg.gains.k2_xi);
    let d_min = far_field_floor(&configs);
    let chief = cfg.unloading.chief.unwrap_or(n - 1);

    let mut state = initial_state(cfg, &configs);
    let mut loop_state = LoopState { warm_ac: None, warm_dc: None };
    let steps = (cfg.duration_s / cfg.dt_s).round() as usize;

    frames.reserve(steps + 1);
    for step in 0..steps {
        let (drive, rw_torques, frame) =
            control_step(cfg, &configs, &env, &targets, &gains, d_min, chief, &state, step as u64, &mut loop_state)?;
        frames.push(frame);

        state = match mode {
            PropagationMode::Averaged => {
                propagate(&state, &configs, &env, &drive, &rw_torques, cfg.dt_s, mode)?
            }
            PropagationMode::Instantaneous => {
                let period = 2.0 * std::f64::consts::PI / cfg.omega_f_rad_s;
                let n_sub = (cfg.dt_s / (period / 24.0)).ceil().max(1.0) as usize;
                let sub_dt = cfg.dt_s / n_sub as f64;
                let mut s = state.clone();
                for _ in 0..n_sub {
                    s = propagate(&s, &configs, &env, &drive, &rw_torques, sub_dt, mode)?;
                }
                s
            }
        };
    }
    // terminal frame: final state, no commands
    frames.push(telemetry::terminal_frame(&state, &configs, &rw));

    Ok(telemetry::summarize(cfg, &configs, frames, &target_positions, &target_attitudes))
}

#[allow(clippy::too_many_arguments)]
fn control_step(
    cfg: &ScenarioConfig,
    configs: &[SatelliteConfig],
    env: &Environment,
    targets: &TargetSet,
    gains: &ControlGains,
    d_min: f64,
    chief: usize,
    state: &SystemState,
    step_index: u64,
    loop_state: &mut LoopState,
) -> Result<(DipoleDrive, Vec<Vec3>, TelemetryFrame)> {
    let n = cfg.n();
    let rw = rw_indices(configs);
    let positions: Vec<Vec3> = state.sats.iter().map(|s| s.r).collect();
    match cfg.controller {
        ControllerKind::Proposed => {
            let red = reduced_states(state, configs, &targets.l_d)?;
            let ws = KinematicsWorkspace::build(state, configs)?;

            // MTQ unloading: a DC dipole on the chief, its geomagnetic torque
            // fed forward as a known external.
            let mut extra_torques = vec![Vec3::zeros(); n];
            let mut dc = vec![Vec3::zeros(); n];
            let mut has_dc = false;
            if cfg.unloading.enabled {
                let c = state.sats[chief].sigma.to_dcm();
                let b_e_i = geomagnetic_field(&(env.orbit.center_position(state.t) + state.sats[chief].r))?;
                let b_e_body = c.inertial_to_body(&b_e_i);
                let mu_dc_body = mtq_unloading_dipole(&state.sats[chief].h, &b_e_body, cfg.unloading.k_dc)?;
                extra_torques[chief] = mu_dc_body.cross(&b_e_body);
                dc[chief] = c.body_to_inertial(&mu_dc_body);
                has_dc = true;
            }
            let u_d = assemble_disturbance(state, configs, env, &extra_torques, &vec![Vec3::zeros(); n])?;
            let (cmd, diag) = kinematics_control(&ws, state, &red, targets, gains, &u_d, &cfg.limits)?;

            let target_torques: Vec<Vec3> = (0..n)
                .map(|j| state.sats[j].sigma.to_dcm().body_to_inertial(&cmd.torques_body[j]))
                .collect();
            let problem = AllocationProblem {
                positions: positions.clone(),
                target_forces: cmd.forces.clone(),
                target_torques,
                d_min,
                mu_max: configs.iter().map(|c| c.mu_max).fold(f64::INFINITY, f64::min),
            };
            let settings = AllocationSettings {
                constraint_tol: cfg.solver.constraint_tol,
                gradient_tol: cfg.solver.gradient_tol,
                restarts: cfg.solver.restarts,
                seed: cfg.seed,
                step_index,
                power_optimal: cfg.allocation == AllocationKind::AcPowerOptimal,
                ..Default::default()
            };
            let sol = solve_ac_allocation(&problem, &settings, cfg.omega_f_rad_s, loop_state.warm_ac.as_ref())?;
            loop_state.warm_ac = Some(sol.dipoles.clone());

            let frame = telemetry::frame_from_step(
                state,
                configs,
                &rw,
                Some(&sol),
                None,
                &cmd,
                Some(&diag),
                if has_dc { Some(&dc) } else { None },
            );
            let drive = if has_dc {
                DipoleDrive::AcDc { ac: sol.dipoles, dc }
            } else {
                DipoleDrive::Ac(sol.dipoles)
            };
            Ok((drive, cmd.rw_torques, frame))
        }
        ControllerKind::Conventional => {
            let target_positions = cfg.target_positions();
            let target_attitudes = cfg.target_attitudes();
            // pass 1: position forces (EM torque estimate not needed for them)
            let (forces, _) = conventional_control(
                state,
                configs,
                env,
                &target_positions,
                &target_attitudes,
                &cfg.conventional_gains,
                &vec![Vec3::zeros(); n],
            )?;
            // EMFF can only realize zero-sum force sets: remove the mass-center mode.
            let total_mass: f64 = configs.iter().map(|c| c.mass).sum();
            let net: Vec3 = forces.iter().sum();
            let balanced: Vec<Vec3> = forces
                .iter()
                .zip(configs)
                .map(|(f, c)| f - net * (c.mass / total_mass))
                .collect();
            let settings = AllocationSettings {
                constraint_tol: cfg.solver.constraint_tol,
                gradient_tol: cfg.solver.gradient_tol,
                restarts: cfg.solver.restarts,
                seed: cfg.seed,
                step_index,
                power_optimal: true,
                ..Default::default()
            };
            let sol = solve_dc_allocation(
                &positions,
                &balanced[1..],
                d_min,
                &settings,
                loop_state.warm_dc.as_deref(),
            )?;
            loop_state.warm_dc = Some(sol.dipoles.clone());

            // pass 2: wheel law absorbing the torques the dipoles actually make
            let tau_em_body: Vec<Vec3> = (0..n)
                .map(|j| state.sats[j].sigma.to_dcm().inertial_to_body(&sol.achieved_torques[j]))
                .collect();
            let (_, rw_rates) = conventional_control(
                state,
                configs,
                env,
                &target_positions,
                &target_attitudes,
                &cfg.conventional_gains,
                &tau_em_body,
            )?;

            let cmd = crate::control::ControlCommand {
                forces: balanced[1..].to_vec(),
                torques_body: tau_em_body,
                rw_torques: rw_rates.clone(),
                saturated: false,
            };
            let frame = telemetry::frame_from_step(
                state,
                configs,
                &rw,
                None,
                Some(&sol),
                &cmd,
                None,
                Some(&sol.dipoles),
            );
            Ok((DipoleDrive::Dc(sol.dipoles.clone()), rw_rates, frame))
        }
    }
}

/// Invariant checks over seeded random states, used by the `check` CLI
/// subcommand. Returns (name, passed, detail) triples.
pub fn invariant_checks(seed: u64) -> Vec<(String, bool, String)> {
    use crate::magnetics::FarFieldModel;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, pass: bool, detail: String| out.push((name.to_string(), pass, detail));

    // pairwise action-reaction
    let ff = FarFieldModel::new(0.5);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let v = |rng: &mut ChaCha8Rng, s: f64| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * s
        };
        let a = v(&mut rng, 100.0);
        let b = v(&mut rng, 100.0);
        let r = v(&mut rng, 8.0) + Vec3::new(10.0, 0.0, 0.0);
        let f1 = ff.force(&a, &b, &r).unwrap();
        let f2 = ff.force(&b, &a, &(-r)).unwrap();
        worst = worst.max((f1 + f2).norm() / f1.norm().max(1e-300));
    }
    push("pair_action_reaction", worst <= 1e-13, format!("max rel defect {worst:.3e}"));

    // system wrench closure
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let nn = rng.random_range(2..=6usize);
        let mut pos = Vec::new();
        let mut mus = Vec::new();
        for j in 0..nn {
            pos.push(Vec3::new(10.0 * j as f64, rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
            mus.push(Vec3::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
            ));
        }
        let w = ff.system_wrench_dc(&mus, &pos).unwrap();
        let ftot: Vec3 = w.iter().map(|x| x.force).sum();
        let mtot: Vec3 = w.iter().zip(&pos).map(|(x, p)| p.cross(&x.force) + x.torque).sum();
        let scale = w
            .iter()
            .zip(&pos)
            .map(|(x, p)| x.torque.norm() + p.norm() * x.force.norm())
            .fold(1e-300, f64::max);
        worst = worst.max(ftot.norm() / scale).max(mtot.norm() / scale);
    }
    push("system_wrench_closure", worst <= 1e-12, format!("max rel defect {worst:.3e}"));

    // null-space identities on random formations
    let mut worst_as: f64 = 0.0;
    let mut worst_sts: f64 = 0.0;
    let mut worst_rinv: f64 = 0.0;
    for trial in 0..20 {
        let nn = 2 + (trial % 4);
        let mm = 1 + trial % nn;
        let configs: Vec<SatelliteConfig> = (0..nn)
            .map(|j| SatelliteConfig {
                mass: rng.random_range(1.0..4.0),
                inertia: Mat3::from_diagonal(&Vec3::new(
                    rng.random_range(1.0..3.0),
                    rng.random_range(1.0..3.0),
                    rng.random_range(1.0..3.0),
                )),
                has_rw: j < mm,
                coil_radius: 0.5,
                mu_max: 1e5,
                rw_h_max: 50.0,
            })
            .collect();
        let state = SystemState {
            t: 0.0,
            sats: (0..nn)
                .map(|j| SatelliteState {
                    r: Vec3::new(4.0 * j as f64, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                    v: Vec3::new(
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                    ),
                    sigma: Mrp::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    ),
                    omega: Vec3::new(
                        rng.random_range(-0.02..0.02),
                        rng.random_range(-0.02..0.02),
                        rng.random_range(-0.02..0.02),
                    ),
                    h: Vec3::zeros(),
                })
                .collect(),
        };
        if let Ok(ws) = KinematicsWorkspace::build(&state, &configs) {
            worst_as = worst_as.max((&ws.a * &ws.s).norm() / (ws.a.norm() * ws.s.norm()));
            let sts = ws.s.transpose() * &ws.s;
            let expected =
                crate::mathkit::MatMN::identity(ws.s.ncols(), ws.s.ncols()) + ws.a_s.transpose() * &ws.a_s;
            worst_sts = worst_sts.max((sts - expected).norm() / ws.s.norm().powi(2));
            let k = ws.b_bar.nrows();
            worst_rinv = worst_rinv
                .max((&ws.b_bar * &ws.b_bar_rinv - crate::mathkit::MatMN::identity(k, k)).norm());
        }
    }
    push("null_space_as_zero", worst_as <= 1e-12, format!("max scaled ‖AS‖ {worst_as:.3e}"));
    push("sts_identity", worst_sts <= 1e-12, format!("max rel defect {worst_sts:.3e}"));
    push("right_inverse_identity", worst_rinv <= 1e-10, format!("max defect {worst_rinv:.3e}"));

    // shadow-set idempotence
    let mut ok = true;
    for _ in 0..100 {
        let s = Mrp::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let once = s.shadow_switch();
        if (once.shadow_switch().as_vec() - once.as_vec()).norm() > 1e-14 {
            ok = false;
        }
    }
    push("mrp_shadow_idempotent", ok, "100 random attitudes".into());

    out
}
