//! Far-field magnetic dipole interaction and AC dipole averaging.
//!
//! All dipole moments, positions, forces and torques in this module are
//! expressed in the invariant orientation frame (I). Body-frame dipoles are
//! converted at the module boundary by callers.
//!
//! The field of a dipole `μ_k` at offset `r_jk = r_j - r_k` is
//!
//! ```text
//! B = (μ₀/4π) (3 r (μ_k·r)/‖r‖⁵ - μ_k/‖r‖³)
//! ```
//!
//! the force it exerts on a dipole `μ_j` placed there is `(μ_j·∇)B` and the
//! torque is `μ_j × B`. The far-field form is only valid beyond about two
//! coil radii of separation; [`FarFieldModel`] enforces that with a hard
//! distance floor.

use crate::error::{Error, Result};
use crate::mathkit::{tilde, Mat3, Vec3};
use serde::{Deserialize, Serialize};

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Coil dipole moment μ = N_t·c·A·n for a circular coil.
pub fn coil_dipole(turns: u32, current: f64, area: f64, normal: &Vec3) -> Result<Vec3> {
    if (normal.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "coil normal must be a unit vector (norm {})",
            normal.norm()
        )));
    }
    if area <= 0.0 {
        return Err(Error::Invalid(format!("coil area must be positive, got {area}")));
    }
    Ok(turns as f64 * current * area * normal)
}

/// Frame in which a wrench's torque component is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TorqueFrame {
    Inertial,
    Body(usize),
}

/// Force and torque acting on one satellite. Forces are always I-frame;
/// the torque frame is tagged explicitly and checked when wrenches combine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
    pub frame: TorqueFrame,
}

impl Wrench {
    pub fn zero_inertial() -> Self {
        Wrench {
            force: Vec3::zeros(),
            torque: Vec3::zeros(),
            frame: TorqueFrame::Inertial,
        }
    }

    pub fn add(&self, other: &Wrench) -> Result<Wrench> {
        if self.frame != other.frame {
            return Err(Error::Invalid(format!(
                "cannot combine wrenches in different torque frames ({:?} vs {:?})",
                self.frame, other.frame
            )));
        }
        Ok(Wrench {
            force: self.force + other.force,
            torque: self.torque + other.torque,
            frame: self.frame,
        })
    }
}

/// Sine/cosine dipole amplitudes for all satellites: μ_j(t) = μ_sin,j·sin(ω_f t) + μ_cos,j·cos(ω_f t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcDipoleSet {
    pub mu_sin: Vec<Vec3>,
    pub mu_cos: Vec<Vec3>,
    pub omega_f: f64,
}

impl AcDipoleSet {
    pub fn new(mu_sin: Vec<Vec3>, mu_cos: Vec<Vec3>, omega_f: f64) -> Result<Self> {
        if mu_sin.len() != mu_cos.len() {
            return Err(Error::Invalid(format!(
                "sine and cosine amplitude counts differ ({} vs {})",
                mu_sin.len(),
                mu_cos.len()
            )));
        }
        if !(omega_f > 0.0) {
            return Err(Error::Invalid(format!("omega_f must be positive, got {omega_f}")));
        }
        if mu_sin.iter().chain(mu_cos.iter()).any(|m| !m.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("AC dipole amplitudes"));
        }
        Ok(AcDipoleSet { mu_sin, mu_cos, omega_f })
    }

    pub fn zeros(n: usize, omega_f: f64) -> Self {
        AcDipoleSet {
            mu_sin: vec![Vec3::zeros(); n],
            mu_cos: vec![Vec3::zeros(); n],
            omega_f,
        }
    }

    pub fn len(&self) -> usize {
        self.mu_sin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_sin.is_empty()
    }

    /// Instantaneous dipole moment of satellite `j` at time `t`.
    pub fn dipole_at(&self, j: usize, t: f64) -> Result<Vec3> {
        if j >= self.len() {
            return Err(Error::Invalid(format!(
                "satellite index {j} out of range (n = {})",
                self.len()
            )));
        }
        let phase = self.omega_f * t;
        Ok(self.mu_sin[j] * phase.sin() + self.mu_cos[j] * phase.cos())
    }
}

/// Far-field dipole interaction model with a validity floor `d_min`
/// (configured as twice the largest coil radius).
#[derive(Debug, Clone, Copy)]
pub struct FarFieldModel {
    pub d_min: f64,
}

impl FarFieldModel {
    pub fn new(d_min: f64) -> Self {
        FarFieldModel { d_min }
    }

    fn check_distance(&self, r: &Vec3, j: usize, k: usize) -> Result<f64> {
        let dist = r.norm();
        if dist < self.d_min {
            return Err(Error::FarFieldViolation { j, k, dist, d_min: self.d_min });
        }
        Ok(dist)
    }

    /// Magnetic field of dipole μ_k at offset r_jk, tesla.
    pub fn field(&self, mu_k: &Vec3, r_jk: &Vec3) -> Result<Vec3> {
        let d = self.check_distance(r_jk, 0, 0)?;
        Ok(dipole_field_raw(mu_k, r_jk, d))
    }

    /// Force on dipole μ_j exerted by dipole μ_k across r_jk, newton.
    pub fn force(&self, mu_k: &Vec3, mu_j: &Vec3, r_jk: &Vec3) -> Result<Vec3> {
        let d = self.check_distance(r_jk, 0, 0)?;
        Ok(dipole_force_raw(mu_k, mu_j, r_jk, d))
    }

    /// Torque on dipole μ_j from the field of μ_k: μ_j × B(μ_k, r_jk), N·m, I frame.
    pub fn torque(&self, mu_k: &Vec3, mu_j: &Vec3, r_jk: &Vec3) -> Result<Vec3> {
        let d = self.check_distance(r_jk, 0, 0)?;
        Ok(mu_j.cross(&dipole_field_raw(mu_k, r_jk, d)))
    }

    /// Per-satellite wrench sums over all pairs for constant (DC) dipoles.
    pub fn system_wrench_dc(&self, mus: &[Vec3], positions: &[Vec3]) -> Result<Vec<Wrench>> {
        if mus.len() != positions.len() {
            return Err(Error::Invalid(format!(
                "{} dipoles for {} positions",
                mus.len(),
                positions.len()
            )));
        }
        let n = mus.len();
        let mut out = vec![Wrench::zero_inertial(); n];
        for j in 0..n {
            for k in 0..n {
                if j == k {
                    continue;
                }
                let r_jk = positions[j] - positions[k];
                let d = self.check_distance(&r_jk, j, k)?;
                out[j].force += dipole_force_raw(&mus[k], &mus[j], &r_jk, d);
                out[j].torque += mus[j].cross(&dipole_field_raw(&mus[k], &r_jk, d));
            }
        }
        Ok(out)
    }

    /// First-order-averaged wrench of a same-frequency sine/cosine dipole set:
    /// per satellite, ½ Σ_{k≠j} [f(μ_sin,k, μ_sin,j) + f(μ_cos,k, μ_cos,j)]
    /// and likewise for torque.
    pub fn averaged_system_wrench(&self, set: &AcDipoleSet, positions: &[Vec3]) -> Result<Vec<Wrench>> {
        if set.len() != positions.len() {
            return Err(Error::Invalid(format!(
                "{} dipole amplitude pairs for {} positions",
                set.len(),
                positions.len()
            )));
        }
        let n = set.len();
        let mut out = vec![Wrench::zero_inertial(); n];
        for j in 0..n {
            for k in 0..n {
                if j == k {
                    continue;
                }
                let r_jk = positions[j] - positions[k];
                let d = self.check_distance(&r_jk, j, k)?;
                let f = dipole_force_raw(&set.mu_sin[k], &set.mu_sin[j], &r_jk, d)
                    + dipole_force_raw(&set.mu_cos[k], &set.mu_cos[j], &r_jk, d);
                let tau = set.mu_sin[j].cross(&dipole_field_raw(&set.mu_sin[k], &r_jk, d))
                    + set.mu_cos[j].cross(&dipole_field_raw(&set.mu_cos[k], &r_jk, d));
                out[j].force += 0.5 * f;
                out[j].torque += 0.5 * tau;
            }
        }
        Ok(out)
    }

    /// Time-averaged wrench between two single-tone dipoles
    /// μ_a(t) = μ_a·sin(ω_a t + θ) and μ_b(t) = μ_b·sin(ω_b t), acting on b
    /// across r_ba.
    ///
    /// The product of the two tones expands to
    /// ½cos((ω_a-ω_b)t + θ) − ½cos((ω_a+ω_b)t + θ); over a common period the
    /// second term always averages to zero, and the first survives only for
    /// equal frequencies. Incommensurable tones have no exact window, so the
    /// average is truncated at `horizon` and tagged approximate.
    pub fn two_tone_average(
        &self,
        mu_a_amp: &Vec3,
        mu_b_amp: &Vec3,
        omega_a: f64,
        omega_b: f64,
        theta: f64,
        r_ba: &Vec3,
        horizon: f64,
    ) -> Result<TwoToneAverage> {
        if !(omega_a > 0.0 && omega_b > 0.0) {
            return Err(Error::Invalid("two-tone frequencies must be positive".into()));
        }
        let d = self.check_distance(r_ba, 0, 0)?;
        let f_amp = dipole_force_raw(mu_a_amp, mu_b_amp, r_ba, d);
        let tau_amp = mu_b_amp.cross(&dipole_field_raw(mu_a_amp, r_ba, d));

        if (omega_a - omega_b).abs() < 1e-12 * omega_a.max(omega_b) {
            // κ₁ = ½cosθ constant; κ₂ averages out over T = π/ω.
            let window = std::f64::consts::PI / omega_a;
            let kappa = 0.5 * theta.cos();
            return Ok(TwoToneAverage {
                wrench: Wrench {
                    force: kappa * f_amp,
                    torque: kappa * tau_amp,
                    frame: TorqueFrame::Inertial,
                },
                window,
                exact: true,
            });
        }

        if let Some((p, q)) = rational_ratio(omega_a / omega_b, 1024) {
            // ω_a/ω_b = p/q: both mixing tones complete whole cycles over
            // T = 2πq/ω_b, so the exact average vanishes.
            let window = 2.0 * std::f64::consts::PI * q as f64 / omega_b;
            let _ = p;
            return Ok(TwoToneAverage {
                wrench: Wrench::zero_inertial(),
                window,
                exact: true,
            });
        }

        // No exact window: integrate the mixing coefficients analytically up
        // to the truncation horizon.
        let avg_cos = |w: f64| ((w * horizon + theta).sin() - theta.sin()) / (w * horizon);
        let kappa = 0.5 * avg_cos(omega_a - omega_b) - 0.5 * avg_cos(omega_a + omega_b);
        Ok(TwoToneAverage {
            wrench: Wrench {
                force: kappa * f_amp,
                torque: kappa * tau_amp,
                frame: TorqueFrame::Inertial,
            },
            window: horizon,
            exact: false,
        })
    }
}

/// Result of a two-tone average, reporting the window it was taken over.
#[derive(Debug, Clone, Copy)]
pub struct TwoToneAverage {
    pub wrench: Wrench,
    /// Averaging window in seconds (a common period when `exact`).
    pub window: f64,
    /// False when the frequencies are incommensurable and the average was
    /// truncated at the configured horizon.
    pub exact: bool,
}

fn dipole_field_raw(mu_k: &Vec3, r: &Vec3, dist: f64) -> Vec3 {
    let d3 = dist * dist * dist;
    let d5 = d3 * dist * dist;
    (MU0 / (4.0 * std::f64::consts::PI)) * (3.0 * r * (mu_k.dot(r)) / d5 - mu_k / d3)
}

fn dipole_force_raw(mu_k: &Vec3, mu_j: &Vec3, r: &Vec3, dist: f64) -> Vec3 {
    let d5 = dist.powi(5);
    let d7 = d5 * dist * dist;
    let mk_r = mu_k.dot(r);
    let mj_r = mu_j.dot(r);
    (3.0 * MU0 / (4.0 * std::f64::consts::PI))
        * (mu_k.dot(mu_j) / d5 * r + mk_r / d5 * mu_j + mj_r / d5 * mu_k
            - 5.0 * mk_r * mj_r / d7 * r)
}

/// ∂B(μ_k, r)/∂μ_k, used by the allocation Jacobian.
pub fn field_jacobian_wrt_mu(r: &Vec3) -> Mat3 {
    let dist = r.norm();
    let d3 = dist.powi(3);
    let u = r / dist;
    (MU0 / (4.0 * std::f64::consts::PI)) * (3.0 * u * u.transpose() - Mat3::identity()) / d3
}

/// ∂f(μ_k, μ_j, r)/∂μ_k with μ_j held fixed (the force is bilinear).
pub fn force_jacobian_wrt_mu_k(mu_j: &Vec3, r: &Vec3) -> Mat3 {
    let dist = r.norm();
    let d4 = dist.powi(4);
    let u = r / dist;
    let uj = u.dot(mu_j);
    (3.0 * MU0 / (4.0 * std::f64::consts::PI) / d4)
        * (u * mu_j.transpose() + uj * Mat3::identity() + mu_j * u.transpose()
            - 5.0 * uj * u * u.transpose())
}

/// ∂f(μ_k, μ_j, r)/∂μ_j with μ_k held fixed. The formula is symmetric in the
/// two dipoles, so this is the same map with the roles swapped.
pub fn force_jacobian_wrt_mu_j(mu_k: &Vec3, r: &Vec3) -> Mat3 {
    force_jacobian_wrt_mu_k(mu_k, r)
}

/// ∂τ(μ_k, μ_j, r)/∂μ_j = -tilde(B(μ_k, r)).
pub fn torque_jacobian_wrt_mu_j(mu_k: &Vec3, r: &Vec3) -> Mat3 {
    -tilde(&dipole_field_raw(mu_k, r, r.norm()))
}

/// ∂τ(μ_k, μ_j, r)/∂μ_k = tilde(μ_j)·∂B/∂μ_k.
pub fn torque_jacobian_wrt_mu_k(mu_j: &Vec3, r: &Vec3) -> Mat3 {
    tilde(mu_j) * field_jacobian_wrt_mu(r)
}


/// Best rational approximation p/q of `x` with q ≤ `max_den`, accepted only
/// when it reproduces `x` to 1e-9 relative (used to find common AC periods).
fn rational_ratio(x: f64, max_den: u64) -> Option<(u64, u64)> {
    if !(x.is_finite() && x > 0.0) {
        return None;
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut frac = x;
    for _ in 0..64 {
        let a = frac.floor() as u64;
        let (p2, q2) = (a.checked_mul(p1)?.checked_add(p0)?, a.checked_mul(q1)?.checked_add(q0)?);
        if q2 > max_den {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let rem = frac - a as f64;
        if rem.abs() < 1e-12 {
            break;
        }
        frac = 1.0 / rem;
    }
    if q1 == 0 {
        return None;
    }
    let approx = p1 as f64 / q1 as f64;
    if (approx - x).abs() <= 1e-9 * x {
        Some((p1, q1))
    } else {
        None
    }
}
