//! Modified Rodrigues parameters and direction-cosine matrices.

use super::{tilde, Mat3, Vec3};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Modified Rodrigues parameters σ = tan(Φ/4)·ê describing the attitude of a
/// body frame with respect to the inertial frame.
///
/// The representation is singular at Φ = ±360°; [`Mrp::shadow_switch`] moves
/// to the shadow set σˢ = -σ/(σᵀσ) whenever ‖σ‖ > 1, which keeps the state
/// bounded and the kinematics matrix regular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mrp(pub Vec3);

impl Mrp {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Mrp(Vec3::new(x, y, z))
    }

    pub fn zero() -> Self {
        Mrp(Vec3::zeros())
    }

    pub fn as_vec(&self) -> Vec3 {
        self.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }

    /// The shadow-set counterpart σˢ = -σ/(σᵀσ), representing the same attitude.
    pub fn shadow(&self) -> Mrp {
        Mrp(-self.0 / self.0.norm_squared())
    }

    /// Returns the shadow set when ‖σ‖ > 1 (strictly), otherwise `self`.
    pub fn shadow_switch(&self) -> Mrp {
        if self.norm_squared() > 1.0 {
            self.shadow()
        } else {
            *self
        }
    }

    /// Kinematics matrix Z(σ) = ¼[(1-σᵀσ)E₃ + 2σ̃ + 2σσᵀ], with σ̇ = Z(σ)·ω.
    pub fn z_matrix(&self) -> Mat3 {
        let s = self.0;
        let s2 = s.norm_squared();
        (Mat3::identity() * (1.0 - s2) + 2.0 * tilde(&s) + 2.0 * s * s.transpose()) * 0.25
    }

    /// σ̇ for a body angular velocity ω (body-frame components, rad/s).
    pub fn kinematics(&self, omega_body: &Vec3) -> Vec3 {
        self.z_matrix() * omega_body
    }

    /// Direction-cosine matrix C^{I/B} (body → inertial component map).
    pub fn to_dcm(&self) -> Dcm {
        let s = self.0;
        let s2 = s.norm_squared();
        let st = tilde(&s);
        let denom = (1.0 + s2) * (1.0 + s2);
        Dcm(Mat3::identity() + (8.0 * st * st + 4.0 * (1.0 - s2) * st) / denom)
    }
}

/// Direction-cosine matrix C^{I/B}: columns are the body axes expressed in the
/// inertial frame. Orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dcm(Mat3);

impl Dcm {
    pub fn identity() -> Self {
        Dcm(Mat3::identity())
    }

    /// Wraps a matrix after checking CᵀC = E and det C = +1 to 1e-12.
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let ortho = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if ortho > 1e-12 || (det - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "not a rotation matrix (orthonormality defect {ortho:.3e}, det {det})"
            )));
        }
        Ok(Dcm(m))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// Maps body-frame components to inertial-frame components.
    pub fn body_to_inertial(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Maps inertial-frame components to body-frame components.
    pub fn inertial_to_body(&self, v: &Vec3) -> Vec3 {
        self.0.transpose() * v
    }

    /// Inverse MRP extraction (principal set, ‖σ‖ ≤ 1) via Shepperd's
    /// quaternion method on C^{B/I}.
    pub fn to_mrp(&self) -> Mrp {
        let m = self.0.transpose(); // C^{B/I}, the frame standard formulas use
        let tr = m.trace();
        // Candidate squared quaternion components (up to sign conventions).
        let qs = [
            (1.0 + tr) / 4.0,
            (1.0 + 2.0 * m[(0, 0)] - tr) / 4.0,
            (1.0 + 2.0 * m[(1, 1)] - tr) / 4.0,
            (1.0 + 2.0 * m[(2, 2)] - tr) / 4.0,
        ];
        let imax = (0..4).max_by(|&a, &b| qs[a].total_cmp(&qs[b])).unwrap();
        let mut q = [0.0f64; 4]; // (q0, q1, q2, q3)
        match imax {
            0 => {
                q[0] = qs[0].sqrt();
                q[1] = (m[(1, 2)] - m[(2, 1)]) / (4.0 * q[0]);
                q[2] = (m[(2, 0)] - m[(0, 2)]) / (4.0 * q[0]);
                q[3] = (m[(0, 1)] - m[(1, 0)]) / (4.0 * q[0]);
            }
            1 => {
                q[1] = qs[1].sqrt();
                q[0] = (m[(1, 2)] - m[(2, 1)]) / (4.0 * q[1]);
                q[2] = (m[(0, 1)] + m[(1, 0)]) / (4.0 * q[1]);
                q[3] = (m[(2, 0)] + m[(0, 2)]) / (4.0 * q[1]);
            }
            2 => {
                q[2] = qs[2].sqrt();
                q[0] = (m[(2, 0)] - m[(0, 2)]) / (4.0 * q[2]);
                q[1] = (m[(0, 1)] + m[(1, 0)]) / (4.0 * q[2]);
                q[3] = (m[(1, 2)] + m[(2, 1)]) / (4.0 * q[2]);
            }
            _ => {
                q[3] = qs[3].sqrt();
                q[0] = (m[(0, 1)] - m[(1, 0)]) / (4.0 * q[3]);
                q[1] = (m[(2, 0)] + m[(0, 2)]) / (4.0 * q[3]);
                q[2] = (m[(1, 2)] + m[(2, 1)]) / (4.0 * q[3]);
            }
        }
        if q[0] < 0.0 {
            for c in q.iter_mut() {
                *c = -*c;
            }
        }
        Mrp(Vec3::new(q[1], q[2], q[3]) / (1.0 + q[0]))
    }
}

/// Ċ^{I/B} = C^{I/B}·tilde(ω) for body angular velocity ω.
pub fn dcm_derivative(c: &Dcm, omega_body: &Vec3) -> Mat3 {
    c.0 * tilde(omega_body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathkit::rk4_step;
    use crate::mathkit::VecN;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn rand_mrp(seed: u64, scale: f64) -> Mrp {
        // Cheap deterministic pseudo-random values for oracle tests.
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        Mrp(Vec3::new(next(), next(), next()) * scale)
    }

    #[test]
    fn z_of_zero_is_quarter_identity() {
        let sdot = Mrp::zero().kinematics(&Vec3::new(0.4, 0.0, 0.0));
        assert_abs_diff_eq!(sdot, Vec3::new(0.1, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(Mrp::zero().kinematics(&Vec3::zeros()), Vec3::zeros());
    }

    #[test]
    fn shadow_switch_matches_paper_example() {
        let s = Mrp::new(2.0, 0.0, 0.0).shadow_switch();
        assert_abs_diff_eq!(s.as_vec(), Vec3::new(-0.5, 0.0, 0.0), epsilon = 1e-15);
        let kept = Mrp::new(0.3, 0.4, 0.0).shadow_switch();
        assert_eq!(kept, Mrp::new(0.3, 0.4, 0.0));
    }

    #[test]
    fn shadow_and_original_share_the_same_dcm() {
        for seed in 0..20u64 {
            let s = rand_mrp(seed, 1.8); // mostly ‖σ‖ > 1
            if s.norm_squared() <= 1.0 {
                continue;
            }
            let d0 = s.to_dcm();
            let d1 = s.shadow_switch().to_dcm();
            assert_abs_diff_eq!(d0.matrix(), d1.matrix(), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_mrp_maps_to_identity_dcm() {
        assert_abs_diff_eq!(Mrp::zero().to_dcm().matrix(), &Mat3::identity());
    }

    #[test]
    fn dcm_mrp_round_trip() {
        for seed in 0..50u64 {
            let s = rand_mrp(seed, 0.95);
            let c = s.to_dcm();
            let back = c.to_mrp().to_dcm();
            assert_abs_diff_eq!(c.matrix(), back.matrix(), epsilon = 1e-10);
        }
    }

    /// Independent quaternion propagation oracle for the MRP kinematics.
    ///
    /// q̇ = ½ Ω(ω) q with q = (q0, q⃗), σ = q⃗/(1+q0).
    #[test]
    fn mrp_kinematics_matches_quaternion_oracle() {
        let sigma0 = Mrp(Vec3::new(0.3, -0.4, 0.0)); // ‖σ‖ = 0.5
        let omega = Vec3::new(0.2, -0.1, 0.3);
        let s2 = sigma0.norm_squared();
        let q0 = VecN::from_vec(vec![
            (1.0 - s2) / (1.0 + s2),
            2.0 * sigma0.0.x / (1.0 + s2),
            2.0 * sigma0.0.y / (1.0 + s2),
            2.0 * sigma0.0.z / (1.0 + s2),
        ]);
        let qdot = |_: f64, q: &VecN| {
            let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
            VecN::from_vec(vec![
                0.5 * (-x * omega.x - y * omega.y - z * omega.z),
                0.5 * (w * omega.x - z * omega.y + y * omega.z),
                0.5 * (z * omega.x + w * omega.y - x * omega.z),
                0.5 * (-y * omega.x + x * omega.y + w * omega.z),
            ])
        };
        let eps = 1e-5;
        let q1 = rk4_step(0.0, &q0, eps, qdot).unwrap();
        let to_sigma = |q: &VecN| Vec3::new(q[1], q[2], q[3]) / (1.0 + q[0]);
        let fd = (to_sigma(&q1) - to_sigma(&q0)) / eps;
        let analytic = sigma0.kinematics(&omega);
        assert_abs_diff_eq!(fd, analytic, epsilon = 1e-6);
    }

    /// Finite difference of C(σ(t)) along an ω-trajectory vs the analytic Ċ.
    #[test]
    fn dcm_derivative_matches_finite_difference() {
        let sigma = Mrp(Vec3::new(0.1, 0.2, -0.3));
        let omega = Vec3::new(0.3, -0.2, 0.5);
        let eps = 1e-6;
        let step = |h: f64| {
            let state = VecN::from_vec(vec![sigma.0.x, sigma.0.y, sigma.0.z]);
            let next = rk4_step(0.0, &state, h, |_, s| {
                let m = Mrp(Vec3::new(s[0], s[1], s[2]));
                let d = m.kinematics(&omega);
                VecN::from_vec(vec![d.x, d.y, d.z])
            })
            .unwrap();
            Mrp(Vec3::new(next[0], next[1], next[2])).to_dcm()
        };
        let fd = (step(eps).matrix() - sigma.to_dcm().matrix()) / eps;
        let analytic = dcm_derivative(&sigma.to_dcm(), &omega);
        assert!((fd - analytic).norm() < 1e-5);
    }

    #[test]
    fn dcm_from_matrix_rejects_non_rotation() {
        assert!(Dcm::from_matrix(Mat3::identity() * 2.0).is_err());
    }

    proptest! {
        /// Z(σ) is a scaled-orthogonal matrix; under shadow switching its
        /// smallest singular value stays ≥ 1/4.
        #[test]
        fn z_matrix_is_regular_under_shadow_switching(
            x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0,
        ) {
            let s = Mrp::new(x, y, z).shadow_switch();
            let z_mat = s.z_matrix();
            let min_sv = z_mat.svd(false, false).singular_values.min();
            prop_assert!(min_sv >= 0.25 - 1e-12);
        }

        /// Shadow switching is idempotent on its own output.
        #[test]
        fn shadow_switch_idempotent(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0,
        ) {
            prop_assume!(x.abs() + y.abs() + z.abs() > 1e-6);
            let once = Mrp::new(x, y, z).shadow_switch();
            let twice = once.shadow_switch();
            prop_assert!((once.as_vec() - twice.as_vec()).norm() < 1e-14);
        }
    }

    #[test]
    fn dcm_convention_small_angle_sign() {
        // σ = (ε,0,0) is a rotation by 4ε about x; body y-axis seen from the
        // inertial frame tips toward +z.
        let eps = 1e-4;
        let c = Mrp::new(eps, 0.0, 0.0).to_dcm();
        let y_inertial = c.body_to_inertial(&Vec3::y());
        assert_relative_eq!(y_inertial.z, 4.0 * eps, max_relative = 1e-6);
    }
}
