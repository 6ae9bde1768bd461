//! Nonholonomic-constraint machinery for redundant EMFF.
//!
//! The conserved angular momentum of the formation defines a linear
//! constraint A·ζ = 0 on the stacked velocity-level state
//! ζ = [ṙ₂..ṙₙ, ω₁..ωₙ, ξ₁..ξₘ]. The controlled state v drops the last
//! wheel's ξₘ; S maps v back onto the constraint tangent space, and
//! projecting the stacked equations of motion through S yields the reduced
//! averaged dynamics M̄ v̇ + C̄ v = B̄ u_c + ū_d.
//!
//! Column layout shared by A, R, [M], [C], [B] and ζ:
//! `[ ṙ₂..ṙₙ | ω₁..ωₙ | ξ_{rw[0]}..ξ_{rw[m-1]} ]` — positions are I-frame,
//! rates and wheel states body-frame, satellite 1 eliminated by linear
//! momentum, RW satellites ordered by config index (the last one carries the
//! uncontrolled ξₘ).

use crate::dynamics::{rw_indices, SatelliteConfig, SystemState};
use crate::error::{Error, Result};
use crate::mathkit::{tilde, MatMN, SpdSolver, Vec3, VecN};

/// Shifted wheel momenta and reduced coordinate views of one state.
#[derive(Debug, Clone)]
pub struct ReducedStates {
    /// q_s = [r₂..rₙ; σ₁..σₙ] ∈ ℝ^{6n-3}.
    pub q_s: VecN,
    /// Controlled velocities v = [ṙ; ω; ξ₁..ξ_{m-1}] ∈ ℝ^{6n+3m-6}.
    pub v: VecN,
    /// Full constrained state ζ = [ṙ; ω; ξ₁..ξₘ] ∈ ℝ^{6n+3m-3}.
    pub zeta: VecN,
    /// ξ_j = h_j − (1/m)·C^{Bj/I}·L for every RW satellite, body frames.
    pub xi: Vec<Vec3>,
    /// Target values ξ_jd = −(1/m)·C^{Bj/I}·L_d.
    pub xi_d: Vec<Vec3>,
    /// System angular momentum assembled by direct summation, I frame.
    pub l_inertial: Vec3,
}

/// Builds the reduced coordinate views, with L assembled by direct summation.
pub fn reduced_states(
    state: &SystemState,
    configs: &[SatelliteConfig],
    l_d: &Vec3,
) -> Result<ReducedStates> {
    let n = state.n();
    let rw = rw_indices(configs);
    let m = rw.len();
    check_counts(n, m)?;

    let l = state.angular_momentum(configs);
    let inv_m = 1.0 / m as f64;
    let mut xi = Vec::with_capacity(m);
    let mut xi_d = Vec::with_capacity(m);
    for &j in &rw {
        let c = state.sats[j].sigma.to_dcm();
        xi.push(state.sats[j].h - inv_m * c.inertial_to_body(&l));
        xi_d.push(-inv_m * c.inertial_to_body(l_d));
    }

    let mut q_s = VecN::zeros(6 * n - 3);
    for j in 1..n {
        q_s.fixed_rows_mut::<3>(3 * (j - 1)).copy_from(&state.sats[j].r);
    }
    for j in 0..n {
        q_s.fixed_rows_mut::<3>(3 * (n - 1) + 3 * j)
            .copy_from(&state.sats[j].sigma.as_vec());
    }

    let mut zeta = VecN::zeros(6 * n + 3 * m - 3);
    for j in 1..n {
        zeta.fixed_rows_mut::<3>(3 * (j - 1)).copy_from(&state.sats[j].v);
    }
    for j in 0..n {
        zeta.fixed_rows_mut::<3>(3 * (n - 1) + 3 * j).copy_from(&state.sats[j].omega);
    }
    for (k, x) in xi.iter().enumerate() {
        zeta.fixed_rows_mut::<3>(6 * n - 3 + 3 * k).copy_from(x);
    }
    let v = zeta.rows(0, 6 * n + 3 * m - 6).into_owned();

    Ok(ReducedStates { q_s, v, zeta, xi, xi_d, l_inertial: l })
}

/// Constraint matrix A (3×(6n+3m-3)) and its truncation A_s dropping the
/// last wheel's columns:
/// A = [m₂(r̃₂−r̃₁), .., mₙ(r̃ₙ−r̃₁), C^{I/B1}J₁, .., C^{I/Bn}Jₙ, C^{I/B_{rw}}..].
pub fn build_constraint(state: &SystemState, configs: &[SatelliteConfig]) -> Result<(MatMN, MatMN)> {
    let n = state.n();
    let rw = rw_indices(configs);
    let m = rw.len();
    check_counts(n, m)?;

    let cols = 6 * n + 3 * m - 3;
    let mut a = MatMN::zeros(3, cols);
    let r1 = state.sats[0].r;
    for j in 1..n {
        let block = configs[j].mass * tilde(&(state.sats[j].r - r1));
        a.view_mut((0, 3 * (j - 1)), (3, 3)).copy_from(&block);
    }
    for j in 0..n {
        let c = state.sats[j].sigma.to_dcm();
        a.view_mut((0, 3 * (n - 1) + 3 * j), (3, 3))
            .copy_from(&(c.matrix() * configs[j].inertia));
    }
    for (k, &j) in rw.iter().enumerate() {
        let c = state.sats[j].sigma.to_dcm();
        a.view_mut((0, 6 * n - 3 + 3 * k), (3, 3)).copy_from(c.matrix());
    }
    let a_s = a.columns(0, cols - 3).into_owned();
    Ok((a, a_s))
}

/// Time derivative of A_s along the current state's velocities:
/// d/dt[m_j(r̃_j−r̃₁)] = m_j(ṽ_j−ṽ₁), d/dt[C^{I/B}J] = C^{I/B}ω̃J,
/// d/dt[C^{I/B}] = C^{I/B}ω̃.
fn constraint_derivative(state: &SystemState, configs: &[SatelliteConfig]) -> MatMN {
    let n = state.n();
    let rw = rw_indices(configs);
    let m = rw.len();
    let mut da = MatMN::zeros(3, 6 * n + 3 * m - 6);
    let v1 = state.sats[0].v;
    for j in 1..n {
        let block = configs[j].mass * tilde(&(state.sats[j].v - v1));
        da.view_mut((0, 3 * (j - 1)), (3, 3)).copy_from(&block);
    }
    for j in 0..n {
        let c = state.sats[j].sigma.to_dcm();
        let block = c.matrix() * tilde(&state.sats[j].omega) * configs[j].inertia;
        da.view_mut((0, 3 * (n - 1) + 3 * j), (3, 3)).copy_from(&block);
    }
    for (k, &j) in rw.iter().enumerate().take(m.saturating_sub(1)) {
        let c = state.sats[j].sigma.to_dcm();
        let block = c.matrix() * tilde(&state.sats[j].omega);
        da.view_mut((0, 6 * n - 3 + 3 * k), (3, 3)).copy_from(&block);
    }
    da
}

/// Null-space basis S = [E; −C^{Bm/I}A_s] of A and its analytic time
/// derivative along the state's velocities.
pub fn build_nullspace(
    a_s: &MatMN,
    state: &SystemState,
    configs: &[SatelliteConfig],
) -> Result<(MatMN, MatMN)> {
    let n = state.n();
    let rw = rw_indices(configs);
    let m = rw.len();
    check_counts(n, m)?;
    let k = 6 * n + 3 * m - 6;
    if a_s.nrows() != 3 || a_s.ncols() != k {
        return Err(Error::Invalid(format!(
            "A_s must be 3×{k}, got {}×{}",
            a_s.nrows(),
            a_s.ncols()
        )));
    }
    let last = *rw.last().expect("m >= 1");
    let c_mi = state.sats[last].sigma.to_dcm().matrix().transpose(); // C^{Bm/I}

    let mut s = MatMN::zeros(k + 3, k);
    s.view_mut((0, 0), (k, k)).copy_from(&MatMN::identity(k, k));
    s.view_mut((k, 0), (3, k)).copy_from(&(-(&c_mi * a_s)));

    // Ċ^{Bm/I} = −ω̃ₘ C^{Bm/I}
    let c_mi_dot = -tilde(&state.sats[last].omega) * c_mi;
    let da_s = constraint_derivative(state, configs);
    let mut s_dot = MatMN::zeros(k + 3, k);
    s_dot
        .view_mut((k, 0), (3, k))
        .copy_from(&(-(&c_mi_dot * a_s) - &c_mi * da_s));
    Ok((s, s_dot))
}

/// Momentum map R = [r̃₂₁, .., r̃ₙ₁, C^{I/B1}, .., C^{I/Bn}, 0₃ₓ₃ₘ] with
/// ^iL̇ = R(u_c + u_d).
pub fn r_matrix(state: &SystemState, configs: &[SatelliteConfig]) -> MatMN {
    let n = state.n();
    let m = rw_indices(configs).len();
    let mut r = MatMN::zeros(3, 6 * n + 3 * m - 3);
    let r1 = state.sats[0].r;
    for j in 1..n {
        r.view_mut((0, 3 * (j - 1)), (3, 3))
            .copy_from(&tilde(&(state.sats[j].r - r1)));
    }
    for j in 0..n {
        r.view_mut((0, 3 * (n - 1) + 3 * j), (3, 3))
            .copy_from(state.sats[j].sigma.to_dcm().matrix());
    }
    r
}

/// All constraint and reduced-dynamics matrices evaluated at one state.
#[derive(Debug, Clone)]
pub struct KinematicsWorkspace {
    pub n: usize,
    pub m: usize,
    pub rw: Vec<usize>,
    pub a: MatMN,
    pub a_s: MatMN,
    pub s: MatMN,
    pub s_dot: MatMN,
    /// T₁ = [Ẑ_s, 0]: maps v to q̇_s.
    pub t1: MatMN,
    pub m_bar: MatMN,
    pub c_bar: MatMN,
    pub b_bar: MatMN,
    /// Right inverse B̄ᵣ⁻¹ = [B]⁻¹[M]S·M̄⁻¹; every column lies in the
    /// momentum-neutral input set of Theorem 1.
    pub b_bar_rinv: MatMN,
    pub r_mat: MatMN,
    pub m_bar_cond: f64,
}

impl KinematicsWorkspace {
    /// Assembles the workspace, exploiting the sparsity of S = [E; −C^{Bm/I}A_s]
    /// and the block-diagonal [M], [C], [B]:
    ///   M̄ = M_top + A_sᵀA_s,
    ///   C̄ = blkdiag(0, C_a, 0) − A_sᵀ·C^{I/Bm}·Ṡ_bot,
    ///   B̄ = [E | −A_sᵀC^{I/Bm}] + wheel coupling blocks,
    /// which avoids any dense (6n+3m−3)² product.
    pub fn build(state: &SystemState, configs: &[SatelliteConfig]) -> Result<Self> {
        let n = state.n();
        if configs.len() != n {
            return Err(Error::Invalid(format!("{n} states for {} configs", configs.len())));
        }
        let rw = rw_indices(configs);
        let m = rw.len();
        check_counts(n, m)?;
        let k = 6 * n + 3 * m - 6; // dim v
        let big = k + 3; // dim ζ

        let (a, a_s) = build_constraint(state, configs)?;
        let (s, s_dot) = build_nullspace(&a_s, state, configs)?;
        let s_bot = s.rows(k, 3).into_owned(); // −C^{Bm/I}A_s
        let s_dot_bot = s_dot.rows(k, 3).into_owned();

        let mut t1 = MatMN::zeros(6 * n - 3, k);
        t1.view_mut((0, 0), (3 * n - 3, 3 * n - 3))
            .copy_from(&MatMN::identity(3 * n - 3, 3 * n - 3));
        for j in 0..n {
            t1.view_mut((3 * (n - 1) + 3 * j, 3 * (n - 1) + 3 * j), (3, 3))
                .copy_from(&state.sats[j].sigma.z_matrix());
        }

        // M̄ = M_top + A_sᵀA_s (C^{Bm/I} is orthonormal)
        let mut m_bar = a_s.transpose() * &a_s;
        for j in 1..n {
            for i in 0..3 {
                m_bar[(3 * (j - 1) + i, 3 * (j - 1) + i)] += configs[j].mass;
            }
        }
        for j in 0..n {
            let base = 3 * (n - 1) + 3 * j;
            let mut view = m_bar.view_mut((base, base), (3, 3));
            view += configs[j].inertia;
        }
        for i in (6 * n - 3)..k {
            m_bar[(i, i)] += 1.0;
        }

        // C̄ = Sᵀ([M]Ṡ + [C]S): [M]Ṡ keeps only the ξₘ rows (unit mass), and
        // [C]S keeps only the attitude diagonal blocks.
        let mut c_bar = s_bot.transpose() * &s_dot_bot;
        for j in 0..n {
            let st = &state.sats[j];
            let h = if configs[j].has_rw { st.h } else { Vec3::zeros() };
            let block = -tilde(&(configs[j].inertia * st.omega + h));
            let base = 3 * (n - 1) + 3 * j;
            let mut view = c_bar.view_mut((base, base), (3, 3));
            view += block;
        }

        // B̄ = Sᵀ[B] = [E_K | S_botᵀ] plus −E₃ at (attitude row j, ḣ column c)
        let mut b_bar = MatMN::zeros(k, big);
        b_bar.view_mut((0, 0), (k, k)).copy_from(&MatMN::identity(k, k));
        b_bar.view_mut((0, k), (k, 3)).copy_from(&s_bot.transpose());
        for (c, &j) in rw.iter().enumerate() {
            for i in 0..3 {
                b_bar[(3 * (n - 1) + 3 * j + i, 6 * n - 3 + 3 * c + i)] -= 1.0;
            }
        }

        // [M]S = [M_top applied to E; S_bot] row-blocks, then
        // B̄ᵣ⁻¹ = [B]⁻¹ ([M]S M̄⁻¹) with [B]⁻¹ adding each wheel's ḣ row
        // into its satellite's attitude rows.
        let mut ms = MatMN::zeros(big, k);
        for j in 1..n {
            for i in 0..3 {
                ms[(3 * (j - 1) + i, 3 * (j - 1) + i)] = configs[j].mass;
            }
        }
        for j in 0..n {
            let base = 3 * (n - 1) + 3 * j;
            ms.view_mut((base, base), (3, 3)).copy_from(&configs[j].inertia);
        }
        for i in (6 * n - 3)..k {
            ms[(i, i)] = 1.0;
        }
        ms.view_mut((k, 0), (3, k)).copy_from(&s_bot);

        let solver = SpdSolver::new(m_bar.clone())?;
        // MS·M̄⁻¹ = (M̄⁻¹·(MS)ᵀ)ᵀ since M̄ is symmetric.
        let mut b_bar_rinv = solver.solve_mat(&ms.transpose()).transpose();
        for (c, &j) in rw.iter().enumerate() {
            for col in 0..k {
                for i in 0..3 {
                    let add = b_bar_rinv[(6 * n - 3 + 3 * c + i, col)];
                    b_bar_rinv[(3 * (n - 1) + 3 * j + i, col)] += add;
                }
            }
        }

        let r_mat = r_matrix(state, configs);
        Ok(KinematicsWorkspace {
            n,
            m,
            rw,
            a,
            a_s,
            s,
            s_dot,
            t1,
            m_bar,
            c_bar,
            b_bar,
            b_bar_rinv,
            r_mat,
            m_bar_cond: solver.cond_estimate(),
        })
    }

    /// Reconstructs the uncontrolled wheel state from the constraint:
    /// ξₘ = −C^{Bm/I} A_s v.
    pub fn xi_m_from_constraint(&self, state: &SystemState, v: &VecN) -> Vec3 {
        let last = *self.rw.last().expect("m >= 1");
        let c_mi = state.sats[last].sigma.to_dcm();
        let w = &self.a_s * v;
        -c_mi.inertial_to_body(&Vec3::new(w[0], w[1], w[2]))
    }
}

fn check_counts(n: usize, m: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Invalid(format!("at least two satellites required, got {n}")));
    }
    if m == 0 || m > n {
        return Err(Error::Invalid(format!(
            "RW count must satisfy 1 ≤ m ≤ n, got m = {m}, n = {n}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        propagate, DipoleDrive, Disturbances, Environment, OrbitReference, PropagationMode,
        SatelliteState, SystemState,
    };
    use crate::mathkit::{Mat3, Mrp};
    use approx::assert_abs_diff_eq;

    fn config(mass: f64, j: (f64, f64, f64), has_rw: bool) -> SatelliteConfig {
        SatelliteConfig {
            mass,
            inertia: Mat3::from_diagonal(&Vec3::new(j.0, j.1, j.2)),
            has_rw,
            coil_radius: 0.5,
            mu_max: 1e5,
            rw_h_max: 50.0,
        }
    }

    /// Stacked mass matrix [M] = diag([M_p], [M_a], E₃ₘ).
    fn dense_big_m(configs: &[SatelliteConfig], rw_count: usize) -> MatMN {
        let n = configs.len();
        let dim = 6 * n + 3 * rw_count - 3;
        let mut m = MatMN::identity(dim, dim);
        for j in 1..n {
            for i in 0..3 {
                m[(3 * (j - 1) + i, 3 * (j - 1) + i)] = configs[j].mass;
            }
        }
        for j in 0..n {
            m.view_mut((3 * (n - 1) + 3 * j, 3 * (n - 1) + 3 * j), (3, 3))
                .copy_from(&configs[j].inertia);
        }
        m
    }

    /// Stacked gyroscopic matrix [C]: attitude diagonal blocks −(J_jω_j + h_j)~.
    fn dense_big_c(state: &SystemState, configs: &[SatelliteConfig], rw_count: usize) -> MatMN {
        let n = configs.len();
        let dim = 6 * n + 3 * rw_count - 3;
        let mut c = MatMN::zeros(dim, dim);
        for j in 0..n {
            let s = &state.sats[j];
            let h = if configs[j].has_rw { s.h } else { Vec3::zeros() };
            let block = -tilde(&(configs[j].inertia * s.omega + h));
            c.view_mut((3 * (n - 1) + 3 * j, 3 * (n - 1) + 3 * j), (3, 3))
                .copy_from(&block);
        }
        c
    }

    /// Input map [B]: identity plus −E₃ coupling from each wheel's ḣ into its
    /// satellite's attitude rows. `inverse` flips the coupling sign, which is the
    /// exact closed-form [B]⁻¹.
    fn dense_big_b(configs: &[SatelliteConfig], rw: &[usize], inverse: bool) -> MatMN {
        let n = configs.len();
        let dim = 6 * n + 3 * rw.len() - 3;
        let mut b = MatMN::identity(dim, dim);
        let sign = if inverse { 1.0 } else { -1.0 };
        for (k, &j) in rw.iter().enumerate() {
            for i in 0..3 {
                b[(3 * (n - 1) + 3 * j + i, 6 * n - 3 + 3 * k + i)] = sign;
            }
        }
        b
    }


    /// The structured assembly must agree with the dense textbook products
    /// Sᵀ[M]S, Sᵀ([M]Ṡ+[C]S), Sᵀ[B], [B]⁻¹[M]S·M̄⁻¹.
    #[test]
    fn structured_assembly_matches_dense_products() {
        for &(n, m) in &[(2usize, 1usize), (3, 2), (4, 4), (5, 3)] {
            let (state, configs) = rand_case(900 + n as u64 + 10 * m as u64, n, m, 1.0);
            let ws = KinematicsWorkspace::build(&state, &configs).unwrap();
            let rw = rw_indices(&configs);
            let m_big = dense_big_m(&configs, m);
            let c_big = dense_big_c(&state, &configs, m);
            let b_big = dense_big_b(&configs, &rw, false);
            let b_inv = dense_big_b(&configs, &rw, true);
            let ms = &m_big * &ws.s;
            let m_bar = ws.s.transpose() * &ms;
            let c_bar = ws.s.transpose() * (&m_big * &ws.s_dot + &c_big * &ws.s);
            let b_bar = ws.s.transpose() * &b_big;
            let solver = crate::mathkit::SpdSolver::new(m_bar.clone()).unwrap();
            let b_bar_rinv = &b_inv * solver.solve_mat(&ms.transpose()).transpose();
            let rel = |a: &MatMN, b: &MatMN| (a - b).norm() / b.norm().max(1e-300);
            assert!(rel(&ws.m_bar, &m_bar) < 1e-14, "M̄ mismatch (n={n}, m={m})");
            assert!(rel(&ws.c_bar, &c_bar) < 1e-12, "C̄ mismatch (n={n}, m={m})");
            assert!(rel(&ws.b_bar, &b_bar) < 1e-14, "B̄ mismatch (n={n}, m={m})");
            assert!(rel(&ws.b_bar_rinv, &b_bar_rinv) < 1e-10, "B̄ᵣ⁻¹ mismatch (n={n}, m={m})");
        }
    }

    struct Lcg(u64);

    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
        fn vec3(&mut self, s: f64) -> Vec3 {
            Vec3::new(self.next(), self.next(), self.next()) * s
        }
    }

    /// Deterministic pseudo-random formation; `scale` ~ 1 keeps every matrix
    /// entry O(1)-O(10) so identity checks sit at machine precision.
    fn rand_case(seed: u64, n: usize, m: usize, scale: f64) -> (SystemState, Vec<SatelliteConfig>) {
        let mut g = Lcg(seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1));
        let mut sats = Vec::new();
        let mut configs = Vec::new();
        for j in 0..n {
            configs.push(config(
                (2.0 + g.next().abs()) * scale,
                (2.0 + g.next().abs(), 2.0 + g.next().abs(), 3.0 + g.next().abs()),
                j < m,
            ));
            sats.push(SatelliteState {
                r: g.vec3(3.0) + Vec3::new(8.0 * j as f64, 0.0, 0.0),
                v: g.vec3(0.05),
                sigma: Mrp(g.vec3(0.4)),
                omega: g.vec3(0.05),
                h: if j < m { g.vec3(0.5) } else { Vec3::zeros() },
            });
        }
        (SystemState { t: 0.0, sats }, configs)
    }

    #[test]
    fn dimensions_match_for_five_sat_five_rw() {
        let (state, configs) = rand_case(1, 5, 5, 1.0);
        let ws = KinematicsWorkspace::build(&state, &configs).unwrap();
        assert_eq!(ws.a.shape(), (3, 42));
        assert_eq!(ws.a_s.shape(), (3, 39));
        assert_eq!(ws.s.shape(), (42, 39));
        assert_eq!(ws.t1.shape(), (27, 39));
        assert_eq!(ws.m_bar.shape(), (39, 39));
        assert_eq!(ws.b_bar.shape(), (39, 42));
        assert_eq!(ws.b_bar_rinv.shape(), (42, 39));
        let red = reduced_states(&state, &configs, &Vec3::zeros()).unwrap();
        assert_eq!(red.v.len(), 39);
        assert_eq!(red.zeta.len(), 42);
        assert_eq!(red.q_s.len(), 27);
    }

    #[test]
    fn coincident_positions_zero_the_position_block() {
        let configs = vec![config(5.0, (2.0, 2.0, 3.0), true), config(5.0, (2.0, 2.0, 3.0), false)];
        let state = SystemState {
            t: 0.0,
            sats: vec![
                SatelliteState::at_rest(Vec3::new(1.0, 2.0, 3.0), Mrp::new(0.1, 0.0, 0.0)),
                SatelliteState::at_rest(Vec3::new(1.0, 2.0, 3.0), Mrp::zero()),
            ],
        };
        let (a, _) = build_constraint(&state, &configs).unwrap();
        assert_eq!(a.shape(), (3, 12));
        assert!(a.view((0, 0), (3, 3)).norm() == 0.0);
        // remaining blocks: C J1, C J2, C^{I/B1}
        assert!(a.view((0, 3), (3, 3)).norm() > 0.0);
    }

    #[test]
    fn rejects_invalid_counts() {
        let (state, mut configs) = rand_case(2, 3, 2, 1.0);
        for c in configs.iter_mut() {
            c.has_rw = false;
        }
        assert!(KinematicsWorkspace::build(&state, &configs).is_err());
    }

    /// A·ζ = 0 exactly when ξ is assembled from the directly-summed L.
    #[test]
    fn constraint_annihilates_reduced_state() {
        for seed in 0..10 {
            let (state, configs) = rand_case(seed, 4, 3, 1.0);
            let (a, _) = build_constraint(&state, &configs).unwrap();
            let red = reduced_states(&state, &configs, &Vec3::zeros()).unwrap();
            let residual = (&a * &red.zeta).norm();
            let scale = a.norm() * red.zeta.norm();
            assert!(residual <= 1e-13 * scale, "residual {residual:.3e} vs scale {scale:.3e}");
        }
    }

    #[test]
    fn nullspace_annihilated_and_sts_identity() {
        for &(n, m) in &[(2usize, 1usize), (3, 2), (5, 5)] {
            let (state, configs) = rand_case(7 + n as u64, n, m, 1.0);
            let ws = KinematicsWorkspace::build(&state, &configs).unwrap();
            let as_norm = (&ws.a * &ws.s).norm();
            assert!(as_norm <= 1e-12 * ws.a.norm() * ws.s.norm());

            let sts = ws.s.transpose() * &ws.s;
            let expected = MatMN::identity(ws.s.ncols(), ws.s.ncols()) + ws.a_s.transpose() * &ws.a_s;
            assert!((sts.clone() - &expected).norm() <= 1e-12 * sts.norm());

            // A_sᵀA_s is PSD, so M̄ = M_top + A_sᵀA_s keeps at least the
            // smallest mass/inertia/unit-wheel eigenvalue.
            let eig_min = ws.m_bar.clone().symmetric_eigenvalues().min();
            let floor = configs
                .iter()
                .skip(1)
                .map(|c| c.mass)
                .chain(configs.iter().map(|c| c.inertia.symmetric_eigenvalues().min()))
                .fold(1.0_f64, f64::min);
            assert!(eig_min >= floor - 1e-9, "min eigenvalue {eig_min} below floor {floor}");
        }
    }

    #[test]
    fn right_inverse_identity_well_scaled() {
        for &(n, m) in &[(2usize, 1usize), (3, 2), (5, 5)] {
            let (state, configs) = rand_case(100 + n as u64, n, m, 1.0);
            let ws = KinematicsWorkspace::build(&state, &configs).unwrap();
            let k = ws.b_bar.nrows();
            let defect = (&ws.b_bar * &ws.b_bar_rinv - MatMN::identity(k, k)).norm();
            assert!(defect <= 1e-10, "defect {defect:.3e} for (n,m)=({n},{m})");
        }
    }

    /// At formation scale (200 kg, 10 m) the identity still holds to the
    /// rounding floor eps·cond(M̄).
    #[test]
    fn right_inverse_identity_formation_scale() {
        let (state, configs) = rand_case(55, 5, 5, 200.0);
        let ws = KinematicsWorkspace::build(&state, &configs).unwrap();
        let k = ws.b_bar.nrows();
        let defect = (&ws.b_bar * &ws.b_bar_rinv - MatMN::identity(k, k)).norm();
        let floor = f64::EPSILON * ws.m_bar_cond.max(1.0);
        assert!(defect <= 10.0 * floor, "defect {defect:.3e} vs floor {floor:.3e}");
    }

    #[test]
    fn static_state_has_zero_s_dot() {
        let (mut state, configs) = rand_case(31, 3, 2, 1.0);
        for s in &mut state.sats {
            s.v = Vec3::zeros();
            s.omega = Vec3::zeros();
        }
        let (_, a_s) = build_constraint(&state, &configs).unwrap();
        let (_, s_dot) = build_nullspace(&a_s, &state, &configs).unwrap();
        assert_eq!(s_dot.norm(), 0.0);
    }

    /// Appending ξₘ = −C^{Bm/I}A_s·v to any v produces a ζ with A·ζ = 0.
    #[test]
    fn zeta_reconstruction_from_v() {
        let (state, configs) = rand_case(77, 4, 2, 1.0);
        let ws = KinematicsWorkspace::build(&state, &configs).unwrap();
        let mut x = 12345u64;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let v = VecN::from_fn(ws.s.ncols(), |_, _| next());
        let zeta = &ws.s * &v;
        let xi_m = ws.xi_m_from_constraint(&state, &v);
        let tail: Vec3 = zeta.fixed_rows::<3>(zeta.len() - 3).into();
        assert_abs_diff_eq!(tail, xi_m, epsilon = 1e-13 * (1.0 + xi_m.norm()));
        assert!((&ws.a * &zeta).norm() <= 1e-12 * ws.a.norm() * zeta.norm());
    }

    /// Ṡ matches a central finite difference of S along a propagated
    /// trajectory.
    #[test]
    fn s_dot_matches_finite_difference() {
        let (state, configs) = rand_case(5, 3, 2, 1.0);
        let env = Environment {
            orbit: OrbitReference::circular(700e3),
            disturbances: Disturbances::none(),
        };
        let drive = DipoleDrive::Dc(vec![Vec3::zeros(); 3]);
        let h = 1e-4;
        let step = |from: &SystemState, dt: f64| {
            propagate(from, &configs, &env, &drive, &[Vec3::zeros(); 2], dt, PropagationMode::Averaged).unwrap()
        };
        let s_of = |st: &SystemState| {
            let (_, a_s) = build_constraint(st, &configs).unwrap();
            build_nullspace(&a_s, st, &configs).unwrap()
        };
        let mid = step(&state, h); // t + h
        let plus = step(&mid, h); // t + 2h
        let (s0, _) = s_of(&state);
        let (s2, _) = s_of(&plus);
        let (_, s_dot_mid) = s_of(&mid);
        let fd_central = (s2 - s0) / (2.0 * h);
        let rel = (fd_central - &s_dot_mid).norm() / s_dot_mid.norm().max(1e-12);
        assert!(rel < 1e-6, "central-difference relative error {rel:.3e}");
    }

    /// v̇ᵀ(dM̄/dt − 2C̄)v ≈ 0 along trajectories for arbitrary probes v.
    #[test]
    fn m_bar_rate_minus_two_c_bar_is_skew() {
        let (state, configs) = rand_case(9, 3, 3, 1.0);
        let env = Environment {
            orbit: OrbitReference::circular(700e3),
            disturbances: Disturbances::none(),
        };
        let drive = DipoleDrive::Dc(vec![Vec3::zeros(); 3]);
        let h = 1e-3;
        let step = |from: &SystemState, dt: f64| {
            propagate(from, &configs, &env, &drive, &[Vec3::zeros(); 3], dt, PropagationMode::Averaged).unwrap()
        };
        let mid = step(&state, h);
        let plus = step(&mid, h);
        let ws_mid = KinematicsWorkspace::build(&mid, &configs).unwrap();
        let ws0 = KinematicsWorkspace::build(&state, &configs).unwrap();
        let ws1 = KinematicsWorkspace::build(&plus, &configs).unwrap();
        let m_dot = (&ws1.m_bar - &ws0.m_bar) / (2.0 * h);
        let q = m_dot - 2.0 * &ws_mid.c_bar;
        let mut x = 4u64;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let scale = q.norm().max(1.0);
        for _ in 0..5 {
            let v = VecN::from_fn(q.nrows(), |_, _| next());
            let quad = (v.transpose() * &q * &v)[(0, 0)].abs();
            assert!(quad <= 1e-6 * scale * v.norm_squared(), "quad form {quad:.3e}");
        }
    }
}
