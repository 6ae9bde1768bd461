//! Telemetry frames, CSV/JSONL persistence and post-hoc summary metrics.
//!
//! Output is bit-stable for a given (config, seed): floats are written with
//! Rust's shortest-round-trip formatting and field order is fixed.

use crate::allocation::{AllocationSolution, DcSolution};
use crate::control::{mrp_error, ControlCommand, ControlDiagnostics};
use crate::dynamics::{SatelliteConfig, SystemState};
use crate::error::{Error, Result};
use crate::mathkit::{Mrp, Vec3};
use crate::sim::ScenarioConfig;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteFrame {
    pub r_m: [f64; 3],
    pub v_mps: [f64; 3],
    pub sigma: [f64; 3],
    pub omega_radps: [f64; 3],
    pub h_nms: [f64; 3],
    pub mu_sin_am2: [f64; 3],
    pub mu_cos_am2: [f64; 3],
    pub mu_dc_am2: [f64; 3],
}

/// One record per control step (plus a terminal record): the pre-step state
/// and the commands applied across the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t_s: f64,
    pub sats: Vec<SatelliteFrame>,
    /// System angular momentum, I frame, N·m·s.
    pub l_nms: [f64; 3],
    pub f_cmd_max_n: f64,
    pub tau_cmd_max_nm: f64,
    pub hdot_cmd_max_nms: f64,
    pub alloc_residual: f64,
    pub alloc_objective: f64,
    pub alloc_iterations: u32,
    pub alloc_restarts: u32,
    pub lyapunov: f64,
    pub v_dot_predicted: f64,
    pub momentum_neutrality: f64,
    pub saturated: bool,
    pub mu_limit_exceeded: bool,
    pub rw_over_capacity: bool,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn frame_from_step(
    state: &SystemState,
    configs: &[SatelliteConfig],
    rw: &[usize],
    ac: Option<&AllocationSolution>,
    dc_sol: Option<&DcSolution>,
    cmd: &ControlCommand,
    diag: Option<&ControlDiagnostics>,
    dc_dipoles: Option<&Vec<Vec3>>,
) -> TelemetryFrame {
    let n = state.n();
    let l = state.angular_momentum(configs);
    let mut sats = Vec::with_capacity(n);
    let mut rw_over = false;
    for j in 0..n {
        let s = &state.sats[j];
        if configs[j].has_rw && s.h.norm() > configs[j].rw_h_max {
            rw_over = true;
        }
        sats.push(SatelliteFrame {
            r_m: arr(&s.r),
            v_mps: arr(&s.v),
            sigma: arr(&s.sigma.as_vec()),
            omega_radps: arr(&s.omega),
            h_nms: arr(&s.h),
            mu_sin_am2: ac.map(|a| arr(&a.dipoles.mu_sin[j])).unwrap_or([0.0; 3]),
            mu_cos_am2: ac.map(|a| arr(&a.dipoles.mu_cos[j])).unwrap_or([0.0; 3]),
            mu_dc_am2: dc_dipoles.map(|d| arr(&d[j])).unwrap_or([0.0; 3]),
        });
    }
    let _ = rw;
    TelemetryFrame {
        t_s: state.t,
        sats,
        l_nms: arr(&l),
        f_cmd_max_n: cmd.forces.iter().map(|f| f.norm()).fold(0.0, f64::max),
        tau_cmd_max_nm: cmd.torques_body.iter().map(|t| t.norm()).fold(0.0, f64::max),
        hdot_cmd_max_nms: cmd.rw_torques.iter().map(|h| h.norm()).fold(0.0, f64::max),
        alloc_residual: ac.map(|a| a.residual).or(dc_sol.map(|d| d.residual)).unwrap_or(0.0),
        alloc_objective: ac.map(|a| a.objective).or(dc_sol.map(|d| d.objective)).unwrap_or(0.0),
        alloc_iterations: ac
            .map(|a| a.iterations as u32)
            .or(dc_sol.map(|d| d.iterations as u32))
            .unwrap_or(0),
        alloc_restarts: ac
            .map(|a| a.restarts_used as u32)
            .or(dc_sol.map(|d| d.restarts_used as u32))
            .unwrap_or(0),
        lyapunov: diag.map(|d| d.lyapunov).unwrap_or(0.0),
        v_dot_predicted: diag.map(|d| d.v_dot_predicted).unwrap_or(0.0),
        momentum_neutrality: diag.map(|d| d.momentum_neutrality).unwrap_or(0.0),
        saturated: cmd.saturated,
        mu_limit_exceeded: ac.map(|a| a.mu_limit_exceeded).unwrap_or(false),
        rw_over_capacity: rw_over,
    }
}

pub(crate) fn terminal_frame(
    state: &SystemState,
    configs: &[SatelliteConfig],
    rw: &[usize],
) -> TelemetryFrame {
    let empty_cmd = ControlCommand {
        forces: Vec::new(),
        torques_body: Vec::new(),
        rw_torques: Vec::new(),
        saturated: false,
    };
    frame_from_step(state, configs, rw, None, None, &empty_cmd, None, None)
}

/// Fixed-name summary metrics computed post hoc from the telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub schema_version: u32,
    pub seed: u64,
    pub steps: usize,
    pub duration_s: f64,
    pub pos_rms_m: f64,
    pub att_rms_mrp: f64,
    #[serde(rename = "rw_nonuniformity_Nms")]
    pub rw_nonuniformity_nms: f64,
    #[serde(rename = "L_norm_max_Nms")]
    pub l_norm_max_nms: f64,
    pub dipole_energy_proxy: f64,
    pub alloc_max_residual: f64,
    #[serde(rename = "L_norm_final_Nms")]
    pub l_norm_final_nms: f64,
    pub lyapunov_final: f64,
    pub momentum_neutrality_max: f64,
    pub saturated_steps: usize,
}

pub(crate) fn summarize(
    cfg: &ScenarioConfig,
    configs: &[SatelliteConfig],
    frames: &[TelemetryFrame],
    target_positions: &[Vec3],
    target_attitudes: &[Mrp],
) -> Summary {
    let n = configs.len();
    let m = configs.iter().filter(|c| c.has_rw).count();
    let last = frames.last().expect("at least the terminal frame exists");

    let mut pos_sq = 0.0;
    let mut att_sq = 0.0;
    for j in 0..n {
        let r = Vec3::from(last.sats[j].r_m);
        pos_sq += (r - target_positions[j]).norm_squared();
        let sigma = Mrp::new(last.sats[j].sigma[0], last.sats[j].sigma[1], last.sats[j].sigma[2]);
        att_sq += mrp_error(&sigma, &target_attitudes[j]).norm_squared();
    }

    // max_j ‖h_j − C^{Bj/I}·L/m‖ at the end of the run
    let l = Vec3::from(last.l_nms);
    let mut nonuniformity: f64 = 0.0;
    for j in 0..n {
        if !configs[j].has_rw {
            continue;
        }
        let sigma = Mrp::new(last.sats[j].sigma[0], last.sats[j].sigma[1], last.sats[j].sigma[2]);
        let share = sigma.to_dcm().inertial_to_body(&l) / m as f64;
        let h = Vec3::from(last.sats[j].h_nms);
        nonuniformity = nonuniformity.max((h - share).norm());
    }

    let mut energy = 0.0;
    for f in &frames[..frames.len() - 1] {
        let step_power: f64 = f
            .sats
            .iter()
            .map(|s| {
                Vec3::from(s.mu_sin_am2).norm_squared()
                    + Vec3::from(s.mu_cos_am2).norm_squared()
                    + Vec3::from(s.mu_dc_am2).norm_squared()
            })
            .sum();
        energy += step_power * cfg.dt_s;
    }

    Summary {
        name: cfg.name.clone(),
        schema_version: cfg.schema_version,
        seed: cfg.seed,
        steps: frames.len() - 1,
        duration_s: cfg.duration_s,
        pos_rms_m: (pos_sq / n as f64).sqrt(),
        att_rms_mrp: (att_sq / n as f64).sqrt(),
        rw_nonuniformity_nms: nonuniformity,
        l_norm_max_nms: frames
            .iter()
            .map(|f| Vec3::from(f.l_nms).norm())
            .fold(0.0, f64::max),
        dipole_energy_proxy: energy,
        alloc_max_residual: frames.iter().map(|f| f.alloc_residual).fold(0.0, f64::max),
        l_norm_final_nms: l.norm(),
        lyapunov_final: frames[frames.len().saturating_sub(2)].lyapunov,
        momentum_neutrality_max: frames.iter().map(|f| f.momentum_neutrality).fold(0.0, f64::max),
        saturated_steps: frames.iter().filter(|f| f.saturated).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TelemetryFormat {
    Csv,
    Jsonl,
}

/// Writes frames to `path`. CSV carries `#`-prefixed metadata lines, then a
/// header row naming every field with its unit suffix, then RFC-4180 rows.
/// JSONL is one frame per line.
pub fn emit_telemetry(
    frames: &[TelemetryFrame],
    cfg: &ScenarioConfig,
    path: &std::path::Path,
    format: TelemetryFormat,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    match format {
        TelemetryFormat::Csv => write_csv(frames, cfg, &mut w),
        TelemetryFormat::Jsonl => write_jsonl(frames, &mut w),
    }
}

fn write_csv(frames: &[TelemetryFrame], cfg: &ScenarioConfig, w: &mut impl Write) -> Result<()> {
    let n = cfg.n();
    writeln!(w, "# emff telemetry v{}", cfg.schema_version)?;
    writeln!(w, "# scenario: {}", cfg.name)?;
    writeln!(w, "# seed: {}", cfg.seed)?;
    writeln!(w, "# dt_s: {}", cfg.dt_s)?;
    writeln!(w, "# controller: {:?}", cfg.controller)?;
    writeln!(w, "# frames: state at step start; commands applied over the step")?;
    writeln!(w, "# frames: positions I-frame relative to formation center; omega/h body-frame")?;

    let mut header: Vec<String> = vec!["t_s".into()];
    let vec_fields = [
        ("r", "m"),
        ("v", "mps"),
        ("sigma", ""),
        ("omega", "radps"),
        ("h", "Nms"),
        ("mu_sin", "Am2"),
        ("mu_cos", "Am2"),
        ("mu_dc", "Am2"),
    ];
    for j in 1..=n {
        for (name, unit) in vec_fields {
            for axis in ["x", "y", "z"] {
                if unit.is_empty() {
                    header.push(format!("{name}{j}_{axis}"));
                } else {
                    header.push(format!("{name}{j}_{axis}_{unit}"));
                }
            }
        }
    }
    for axis in ["x", "y", "z"] {
        header.push(format!("L_{axis}_Nms"));
    }
    header.extend(
        [
            "f_cmd_max_N",
            "tau_cmd_max_Nm",
            "hdot_cmd_max_Nms",
            "alloc_residual",
            "alloc_objective_Am2sq",
            "alloc_iterations",
            "alloc_restarts",
            "lyapunov_V",
            "v_dot_predicted_W",
            "momentum_neutrality",
            "saturated",
            "mu_limit_exceeded",
            "rw_over_capacity",
        ]
        .map(String::from),
    );
    writeln!(w, "{}", header.join(","))?;

    for f in frames {
        let mut row: Vec<String> = vec![format!("{}", f.t_s)];
        for s in &f.sats {
            for field in [
                &s.r_m, &s.v_mps, &s.sigma, &s.omega_radps, &s.h_nms, &s.mu_sin_am2, &s.mu_cos_am2,
                &s.mu_dc_am2,
            ] {
                for v in field {
                    row.push(format!("{v}"));
                }
            }
        }
        for v in &f.l_nms {
            row.push(format!("{v}"));
        }
        row.push(format!("{}", f.f_cmd_max_n));
        row.push(format!("{}", f.tau_cmd_max_nm));
        row.push(format!("{}", f.hdot_cmd_max_nms));
        row.push(format!("{}", f.alloc_residual));
        row.push(format!("{}", f.alloc_objective));
        row.push(format!("{}", f.alloc_iterations));
        row.push(format!("{}", f.alloc_restarts));
        row.push(format!("{}", f.lyapunov));
        row.push(format!("{}", f.v_dot_predicted));
        row.push(format!("{}", f.momentum_neutrality));
        row.push(format!("{}", u8::from(f.saturated)));
        row.push(format!("{}", u8::from(f.mu_limit_exceeded)));
        row.push(format!("{}", u8::from(f.rw_over_capacity)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn write_jsonl(frames: &[TelemetryFrame], w: &mut impl Write) -> Result<()> {
    for f in frames {
        let line = serde_json::to_string(f)
            .map_err(|e| Error::Invalid(format!("telemetry serialization: {e}")))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads back a JSONL telemetry file.
pub fn read_jsonl(path: &std::path::Path) -> Result<Vec<TelemetryFrame>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: TelemetryFrame = serde_json::from_str(&line)
            .map_err(|e| Error::Invalid(format!("telemetry line {}: {e}", i + 1)))?;
        out.push(frame);
    }
    Ok(out)
}

pub fn write_summary(summary: &Summary, path: &std::path::Path) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Invalid(format!("summary serialization: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
