//! Python bindings for the emff electromagnetic formation flight library.
//!
//! Exposes the far-field dipole model, the power-optimal AC dipole
//! allocation, attitude helpers and the scenario runner. Vectors cross the
//! boundary as plain 3-element lists/tuples; scenario summaries come back as
//! JSON strings so callers can `json.loads` them.

use emff::allocation::{solve_ac_allocation, AllocationProblem, AllocationSettings};
use emff::dynamics::OrbitReference;
use emff::magnetics::{AcDipoleSet, FarFieldModel};
use emff::mathkit::{Mrp, Vec3};
use emff::sim;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn err(e: emff::Error) -> PyErr {
    match e {
        emff::Error::Config(_) | emff::Error::Invalid(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Magnetic field of a dipole `mu` (A·m²) at offset `r` (m), tesla.
#[pyfunction]
#[pyo3(signature = (mu, r, d_min = 0.0))]
fn dipole_field(mu: [f64; 3], r: [f64; 3], d_min: f64) -> PyResult<[f64; 3]> {
    FarFieldModel::new(d_min)
        .field(&v3(mu), &v3(r))
        .map(|b| arr(&b))
        .map_err(err)
}

/// Force on dipole `mu_j` exerted by `mu_k` across `r_jk = r_j - r_k`, newton.
#[pyfunction]
#[pyo3(signature = (mu_k, mu_j, r_jk, d_min = 0.0))]
fn dipole_force(mu_k: [f64; 3], mu_j: [f64; 3], r_jk: [f64; 3], d_min: f64) -> PyResult<[f64; 3]> {
    FarFieldModel::new(d_min)
        .force(&v3(mu_k), &v3(mu_j), &v3(r_jk))
        .map(|f| arr(&f))
        .map_err(err)
}

/// Torque on dipole `mu_j` in the field of `mu_k`, N·m.
#[pyfunction]
#[pyo3(signature = (mu_k, mu_j, r_jk, d_min = 0.0))]
fn dipole_torque(mu_k: [f64; 3], mu_j: [f64; 3], r_jk: [f64; 3], d_min: f64) -> PyResult<[f64; 3]> {
    FarFieldModel::new(d_min)
        .torque(&v3(mu_k), &v3(mu_j), &v3(r_jk))
        .map(|t| arr(&t))
        .map_err(err)
}

/// First-order-averaged per-satellite (force, torque) lists for a
/// same-frequency sine/cosine dipole set.
#[pyfunction]
#[pyo3(signature = (mu_sin, mu_cos, positions, d_min = 0.0))]
fn averaged_wrench(
    mu_sin: Vec<[f64; 3]>,
    mu_cos: Vec<[f64; 3]>,
    positions: Vec<[f64; 3]>,
    d_min: f64,
) -> PyResult<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    let set = AcDipoleSet::new(
        mu_sin.into_iter().map(v3).collect(),
        mu_cos.into_iter().map(v3).collect(),
        1.0,
    )
    .map_err(err)?;
    let pos: Vec<Vec3> = positions.into_iter().map(v3).collect();
    let w = FarFieldModel::new(d_min)
        .averaged_system_wrench(&set, &pos)
        .map_err(err)?;
    Ok((
        w.iter().map(|x| arr(&x.force)).collect(),
        w.iter().map(|x| arr(&x.torque)).collect(),
    ))
}

/// Coil dipole moment N_t·c·A·n, A·m².
#[pyfunction]
fn coil_dipole(turns: u32, current: f64, area: f64, normal: [f64; 3]) -> PyResult<[f64; 3]> {
    emff::magnetics::coil_dipole(turns, current, area, &v3(normal))
        .map(|m| arr(&m))
        .map_err(err)
}

/// Direction-cosine matrix C^{I/B} (row-major) for an MRP attitude.
#[pyfunction]
fn mrp_to_dcm(sigma: [f64; 3]) -> [[f64; 3]; 3] {
    let c = Mrp(v3(sigma)).to_dcm();
    let m = c.matrix();
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// Shadow-set switch: returns -σ/(σᵀσ) when ‖σ‖ > 1, else σ unchanged.
#[pyfunction]
fn mrp_shadow_switch(sigma: [f64; 3]) -> [f64; 3] {
    arr(&Mrp(v3(sigma)).shadow_switch().as_vec())
}

/// Circular orbital period at the given altitude above Earth, seconds.
#[pyfunction]
fn orbital_period(altitude_m: f64) -> f64 {
    OrbitReference::circular(altitude_m).period()
}

/// Tilted-dipole geomagnetic field at a geocentric position, tesla.
#[pyfunction]
fn geomagnetic_field(r_eci: [f64; 3]) -> PyResult<[f64; 3]> {
    emff::dynamics::geomagnetic_field(&v3(r_eci))
        .map(|b| arr(&b))
        .map_err(err)
}

/// Power-optimal AC dipole allocation. `target_forces` addresses satellites
/// 2..n (satellite 1 reacts); `target_torques` addresses all n (I frame).
/// Returns (mu_sin, mu_cos, residual, objective, restarts_used).
#[pyfunction]
#[pyo3(signature = (positions, target_forces, target_torques, d_min, omega_f, seed = 0))]
#[allow(clippy::type_complexity)]
fn solve_allocation(
    positions: Vec<[f64; 3]>,
    target_forces: Vec<[f64; 3]>,
    target_torques: Vec<[f64; 3]>,
    d_min: f64,
    omega_f: f64,
    seed: u64,
) -> PyResult<(Vec<[f64; 3]>, Vec<[f64; 3]>, f64, f64, usize)> {
    let problem = AllocationProblem {
        positions: positions.into_iter().map(v3).collect(),
        target_forces: target_forces.into_iter().map(v3).collect(),
        target_torques: target_torques.into_iter().map(v3).collect(),
        d_min,
        mu_max: f64::INFINITY,
    };
    let settings = AllocationSettings { seed, ..Default::default() };
    let sol = solve_ac_allocation(&problem, &settings, omega_f, None).map_err(err)?;
    Ok((
        sol.dipoles.mu_sin.iter().map(arr).collect(),
        sol.dipoles.mu_cos.iter().map(arr).collect(),
        sol.residual,
        sol.objective,
        sol.restarts_used,
    ))
}

/// Names of the built-in scenario presets.
#[pyfunction]
fn preset_names() -> Vec<String> {
    sim::preset_names().into_iter().map(String::from).collect()
}

/// TOML text of a built-in preset (edit and feed back to run_scenario_toml).
#[pyfunction]
fn preset_toml(name: &str) -> PyResult<String> {
    sim::preset(name).map(|cfg| cfg.to_toml()).map_err(err)
}

/// Runs a scenario from TOML text and returns the summary as a JSON string.
#[pyfunction]
fn run_scenario_toml(toml_text: &str) -> PyResult<String> {
    let cfg = sim::ScenarioConfig::from_toml(toml_text).map_err(err)?;
    let out = sim::run_scenario(&cfg).map_err(err)?;
    serde_json::to_string(&out.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs a built-in preset (optionally truncated / re-seeded); returns the
/// summary as a JSON string.
#[pyfunction]
#[pyo3(signature = (name, duration_s = None, seed = None))]
fn run_preset(name: &str, duration_s: Option<f64>, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = sim::preset(name).map_err(err)?;
    if let Some(d) = duration_s {
        cfg.duration_s = d;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = sim::run_scenario(&cfg).map_err(err)?;
    serde_json::to_string(&out.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn emff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dipole_field, m)?)?;
    m.add_function(wrap_pyfunction!(dipole_force, m)?)?;
    m.add_function(wrap_pyfunction!(dipole_torque, m)?)?;
    m.add_function(wrap_pyfunction!(averaged_wrench, m)?)?;
    m.add_function(wrap_pyfunction!(coil_dipole, m)?)?;
    m.add_function(wrap_pyfunction!(mrp_to_dcm, m)?)?;
    m.add_function(wrap_pyfunction!(mrp_shadow_switch, m)?)?;
    m.add_function(wrap_pyfunction!(orbital_period, m)?)?;
    m.add_function(wrap_pyfunction!(geomagnetic_field, m)?)?;
    m.add_function(wrap_pyfunction!(solve_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(preset_toml, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario_toml, m)?)?;
    m.add("MU0", emff::magnetics::MU0)?;
    Ok(())
}
