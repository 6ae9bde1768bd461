//! Small fixed-size linear algebra, rotation representations and a fixed-step
//! integrator used by every other module.
//!
//! Conventions used throughout the crate:
//! - `Dcm` always stores `C^{I/B}`, the matrix mapping body-frame components
//!   into inertial-frame components. The inverse map is its transpose.
//! - MRP attitudes stay on the set `‖σ‖ ≤ 1`; the shadow switch is applied
//!   after every integration step.

mod mrp;
mod spd;

pub use mrp::{dcm_derivative, Dcm, Mrp};
pub use spd::SpdSolver;

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type VecN = nalgebra::DVector<f64>;
pub type MatMN = nalgebra::DMatrix<f64>;

/// Cross-product (skew) matrix: `tilde(a) * b == a × b`.
pub fn tilde(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// One classical 4th-order Runge-Kutta step of `ẋ = f(t, x)`.
///
/// Deterministic fixed step; errors out if the derivative produces a
/// non-finite value anywhere.
pub fn rk4_step<F>(t: f64, state: &VecN, dt: f64, f: F) -> Result<VecN>
where
    F: Fn(f64, &VecN) -> VecN,
{
    if dt <= 0.0 {
        return Err(Error::Invalid(format!("rk4 step requires dt > 0, got {dt}")));
    }
    let check = |v: &VecN| -> Result<()> {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("rk4 derivative"))
        }
    };
    let k1 = f(t, state);
    check(&k1)?;
    let k2 = f(t + 0.5 * dt, &(state + &k1 * (0.5 * dt)));
    check(&k2)?;
    let k3 = f(t + 0.5 * dt, &(state + &k2 * (0.5 * dt)));
    check(&k3)?;
    let k4 = f(t + dt, &(state + &k3 * dt));
    check(&k4)?;
    Ok(state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}
