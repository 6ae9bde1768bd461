//! Batch-simulation CLI for electromagnetic formation flight scenarios.
//!
//! Exit codes: 0 success, 1 scenario failure, 2 configuration error.

use clap::{Parser, Subcommand, ValueEnum};
use emff::sim::telemetry::{emit_telemetry, write_summary, TelemetryFormat};
use emff::sim::{invariant_checks, preset, preset_names, run_scenario_collect, ModeKind, ScenarioConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "emff", about = "Electromagnetic formation flight batch simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Averaged,
    Instantaneous,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a preset name or a TOML config file.
    Run {
        /// Preset name (see `presets`) or path to a scenario TOML file.
        config: String,
        /// Output directory for telemetry and the summary JSON.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the propagation mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Telemetry format(s) to write.
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Parse and validate a scenario config file.
    Validate {
        config: PathBuf,
    },
    /// List the built-in scenario presets.
    Presets,
    /// Run the invariant suite on random states and print pass/fail lines.
    Check {
        #[arg(long, default_value = "1")]
        seed: u64,
    },
}

fn load_config(spec: &str) -> Result<ScenarioConfig, emff::Error> {
    if preset_names().contains(&spec) {
        return preset(spec);
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| emff::Error::Config(format!("cannot read '{spec}': {e}")))?;
    ScenarioConfig::from_toml(&text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, mode, format } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::Averaged => ModeKind::Averaged,
                    ModeArg::Instantaneous => ModeKind::Instantaneous,
                };
            }
            if let Err(e) = cfg.validate() {
                eprintln!("config error: {e}");
                return ExitCode::from(2);
            }
            if let Err(e) = std::fs::create_dir_all(&out) {
                eprintln!("cannot create output directory {}: {e}", out.display());
                return ExitCode::from(1);
            }

            let (frames, result) = run_scenario_collect(&cfg);
            let mut wrote = Vec::new();
            let want_csv = matches!(format, FormatArg::Csv | FormatArg::Both);
            let want_jsonl = matches!(format, FormatArg::Jsonl | FormatArg::Both);
            if !frames.is_empty() {
                if want_csv {
                    let path = out.join(format!("{}.csv", cfg.name));
                    if let Err(e) = emit_telemetry(&frames, &cfg, &path, TelemetryFormat::Csv) {
                        eprintln!("telemetry write failed: {e}");
                        return ExitCode::from(1);
                    }
                    wrote.push(path);
                }
                if want_jsonl {
                    let path = out.join(format!("{}.jsonl", cfg.name));
                    if let Err(e) = emit_telemetry(&frames, &cfg, &path, TelemetryFormat::Jsonl) {
                        eprintln!("telemetry write failed: {e}");
                        return ExitCode::from(1);
                    }
                    wrote.push(path);
                }
            }
            match result {
                Ok(summary) => {
                    let path = out.join(format!("{}_summary.json", cfg.name));
                    if let Err(e) = write_summary(&summary, &path) {
                        eprintln!("summary write failed: {e}");
                        return ExitCode::from(1);
                    }
                    wrote.push(path);
                    println!(
                        "{}: {} steps, pos_rms {:.4e} m, att_rms {:.4e}, rw_nonuniformity {:.4e} N·m·s, max ‖L‖ {:.4e} N·m·s, alloc residual ≤ {:.2e}",
                        cfg.name,
                        summary.steps,
                        summary.pos_rms_m,
                        summary.att_rms_mrp,
                        summary.rw_nonuniformity_nms,
                        summary.l_norm_max_nms,
                        summary.alloc_max_residual
                    );
                    for p in wrote {
                        println!("wrote {}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("scenario failed after {} frames: {e}", frames.len());
                    for p in wrote {
                        eprintln!("partial telemetry: {}", p.display());
                    }
                    ExitCode::from(1)
                }
            }
        }
        Command::Validate { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("cannot read {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            match ScenarioConfig::from_toml(&text) {
                Ok(cfg) => {
                    println!(
                        "ok: scenario '{}' (n = {}, m = {}, {:.0} s at dt = {} s)",
                        cfg.name,
                        cfg.n(),
                        cfg.m(),
                        cfg.duration_s,
                        cfg.dt_s
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("invalid: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Presets => {
            for name in preset_names() {
                let cfg = preset(name).expect("built-in presets validate");
                println!(
                    "{name}: n = {}, m = {}, {:?} controller, ω_f = {:.3} rad/s, {:.0} s",
                    cfg.n(),
                    cfg.m(),
                    cfg.controller,
                    cfg.omega_f_rad_s,
                    cfg.duration_s
                );
            }
            ExitCode::SUCCESS
        }
        Command::Check { seed } => {
            let checks = invariant_checks(seed);
            let mut all_ok = true;
            for (name, pass, detail) in &checks {
                println!("{}: {} ({detail})", name, if *pass { "pass" } else { "FAIL" });
                all_ok &= pass;
            }
            if all_ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
