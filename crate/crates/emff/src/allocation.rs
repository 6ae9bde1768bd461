//! Dipole inversion: mapping commanded per-satellite wrenches to coil dipole
//! amplitudes.
//!
//! Two problems share one solver core:
//!
//! - AC power-optimal allocation: minimize μ_sinᵀμ_sin + μ_cosᵀμ_cos subject
//!   to the averaged wrench matching the commands. 6n variables against
//!   6(n-1) independent bilinear constraints, solved by an augmented
//!   Lagrangian with Gauss-Newton inner iterations, warm-started from the
//!   previous control step and re-seeded from random scaled starts on failure.
//! - DC baseline: minimize the achieved torque norm subject to force
//!   constraints only (3n variables, 3(n-1) constraints).
//!
//! Everything is solved in nondimensional units: dipoles scaled by
//! μ_ref = sqrt(4π d̄⁴ f̄ / (3μ₀)), forces by f̄ and torques by f̄·d̄.

use crate::error::{Error, Result};
use crate::magnetics::{
    field_jacobian_wrt_mu, force_jacobian_wrt_mu_j, force_jacobian_wrt_mu_k, torque_jacobian_wrt_mu_j,
    torque_jacobian_wrt_mu_k, AcDipoleSet, FarFieldModel, MU0,
};
use crate::mathkit::{tilde, MatMN, Vec3, VecN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Wrench targets for one allocation call. Forces address satellites 2..n
/// (satellite 1 carries the implied reaction −Σf); torques address all n and
/// must balance the force moments, since the EM system cannot change the
/// total angular momentum.
#[derive(Debug, Clone)]
pub struct AllocationProblem {
    pub positions: Vec<Vec3>,
    pub target_forces: Vec<Vec3>,
    pub target_torques: Vec<Vec3>,
    pub d_min: f64,
    pub mu_max: f64,
}

impl AllocationProblem {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Checks shapes, pair distances and the wrench-balance feasibility
    /// condition Σ(r_j−r_1)×f_j + Στ_j = 0.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n < 2 {
            return Err(Error::Invalid("allocation needs at least two satellites".into()));
        }
        if self.target_forces.len() != n - 1 || self.target_torques.len() != n {
            return Err(Error::Invalid(format!(
                "expected {} force and {} torque targets, got {} and {}",
                n - 1,
                n,
                self.target_forces.len(),
                self.target_torques.len()
            )));
        }
        for j in 0..n {
            for k in (j + 1)..n {
                let dist = (self.positions[j] - self.positions[k]).norm();
                if dist < self.d_min {
                    return Err(Error::FarFieldViolation { j, k, dist, d_min: self.d_min });
                }
            }
        }
        let mut balance = self.target_torques.iter().sum::<Vec3>();
        let r1 = self.positions[0];
        let mut scale: f64 = 0.0;
        for (j, f) in self.target_forces.iter().enumerate() {
            let arm = self.positions[j + 1] - r1;
            balance += arm.cross(f);
            scale = scale.max(arm.norm() * f.norm());
        }
        scale = scale.max(self.target_torques.iter().map(|t| t.norm()).fold(0.0, f64::max));
        if balance.norm() > 1e-6 * scale.max(1e-30) {
            return Err(Error::Invalid(format!(
                "wrench targets violate angular-momentum balance (defect {:.3e} vs scale {:.3e})",
                balance.norm(),
                scale
            )));
        }
        Ok(())
    }
}

/// Characteristic scales used to nondimensionalize an allocation problem.
/// Degenerate (all-zero) targets fall back to the identity transform.
#[derive(Debug, Clone, Copy)]
pub struct Scaling {
    pub mu_ref: f64,
    pub f_ref: f64,
    pub tau_ref: f64,
    pub d_ref: f64,
}

impl Scaling {
    pub fn identity() -> Self {
        Scaling { mu_ref: 1.0, f_ref: 1.0, tau_ref: 1.0, d_ref: 1.0 }
    }
}

/// Builds the nondimensionalization for a problem: μ_ref = sqrt(4π d̄⁴ f̄/(3μ₀))
/// with d̄ the mean pair distance and f̄/τ̄ the characteristic wrench scales.
pub fn scale_problem(problem: &AllocationProblem) -> Scaling {
    let n = problem.n();
    let mut d_sum = 0.0;
    let mut pairs = 0usize;
    for j in 0..n {
        for k in (j + 1)..n {
            d_sum += (problem.positions[j] - problem.positions[k]).norm();
            pairs += 1;
        }
    }
    let d_ref = if pairs > 0 { d_sum / pairs as f64 } else { 1.0 };
    let f_max = problem.target_forces.iter().map(|f| f.norm()).fold(0.0, f64::max);
    let tau_max = problem.target_torques.iter().map(|t| t.norm()).fold(0.0, f64::max);
    if f_max == 0.0 && tau_max == 0.0 {
        return Scaling::identity();
    }
    let f_ref = f_max.max(tau_max / d_ref);
    let tau_ref = f_ref * d_ref;
    let mu_ref = (4.0 * std::f64::consts::PI * d_ref.powi(4) * f_ref / (3.0 * MU0)).sqrt();
    Scaling { mu_ref, f_ref, tau_ref, d_ref }
}

/// Averaged-wrench constraint residual and its Jacobian in physical units.
///
/// `x` stacks [μ_sin,1..μ_sin,n | μ_cos,1..μ_cos,n]. The residual stacks the
/// force mismatches of satellites 2..n followed by their torque mismatches
/// (6(n-1) rows); satellite 1's torque row is implied by the balance checked
/// in [`AllocationProblem::validate`].
pub fn residual_and_jacobian(x: &VecN, problem: &AllocationProblem) -> Result<(VecN, MatMN)> {
    let n = problem.n();
    if x.len() != 6 * n {
        return Err(Error::Invalid(format!("expected {} amplitudes, got {}", 6 * n, x.len())));
    }
    let ff = FarFieldModel::new(problem.d_min);
    let mu_s: Vec<Vec3> = (0..n).map(|j| x.fixed_rows::<3>(3 * j).into()).collect();
    let mu_c: Vec<Vec3> = (0..n).map(|j| x.fixed_rows::<3>(3 * n + 3 * j).into()).collect();

    let rows = 6 * (n - 1);
    let mut r = VecN::zeros(rows);
    let mut jac = MatMN::zeros(rows, 6 * n);
    for j in 1..n {
        let f_row = 3 * (j - 1);
        let t_row = 3 * (n - 1) + 3 * (j - 1);
        let mut force = -problem.target_forces[j - 1];
        let mut torque = -problem.target_torques[j];
        for k in 0..n {
            if k == j {
                continue;
            }
            let r_jk = problem.positions[j] - problem.positions[k];
            force += 0.5 * (ff.force(&mu_s[k], &mu_s[j], &r_jk)? + ff.force(&mu_c[k], &mu_c[j], &r_jk)?);
            torque += 0.5 * (ff.torque(&mu_s[k], &mu_s[j], &r_jk)? + ff.torque(&mu_c[k], &mu_c[j], &r_jk)?);

            // force rows
            add_block(&mut jac, f_row, 3 * j, &(0.5 * force_jacobian_wrt_mu_j(&mu_s[k], &r_jk)));
            add_block(&mut jac, f_row, 3 * k, &(0.5 * force_jacobian_wrt_mu_k(&mu_s[j], &r_jk)));
            add_block(&mut jac, f_row, 3 * n + 3 * j, &(0.5 * force_jacobian_wrt_mu_j(&mu_c[k], &r_jk)));
            add_block(&mut jac, f_row, 3 * n + 3 * k, &(0.5 * force_jacobian_wrt_mu_k(&mu_c[j], &r_jk)));
            // torque rows
            add_block(&mut jac, t_row, 3 * j, &(0.5 * torque_jacobian_wrt_mu_j(&mu_s[k], &r_jk)));
            add_block(&mut jac, t_row, 3 * k, &(0.5 * torque_jacobian_wrt_mu_k(&mu_s[j], &r_jk)));
            add_block(&mut jac, t_row, 3 * n + 3 * j, &(0.5 * torque_jacobian_wrt_mu_j(&mu_c[k], &r_jk)));
            add_block(&mut jac, t_row, 3 * n + 3 * k, &(0.5 * torque_jacobian_wrt_mu_k(&mu_c[j], &r_jk)));
        }
        r.fixed_rows_mut::<3>(f_row).copy_from(&force);
        r.fixed_rows_mut::<3>(t_row).copy_from(&torque);
    }
    Ok((r, jac))
}

fn add_block(m: &mut MatMN, row: usize, col: usize, block: &nalgebra::Matrix3<f64>) {
    let mut view = m.view_mut((row, col), (3, 3));
    view += block;
}

#[derive(Debug, Clone)]
pub struct AllocationSettings {
    /// Tolerance on the scaled constraint residual (2-norm).
    pub constraint_tol: f64,
    /// Tolerance on the scaled augmented-Lagrangian gradient.
    pub gradient_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Random re-seeds attempted after the first start fails.
    pub restarts: usize,
    pub seed: u64,
    /// Mixed into the restart RNG stream for per-step determinism.
    pub step_index: u64,
    /// False solves the J = 0 feasibility problem instead.
    pub power_optimal: bool,
}

impl Default for AllocationSettings {
    fn default() -> Self {
        AllocationSettings {
            constraint_tol: 1e-8,
            gradient_tol: 1e-6,
            max_outer: 50,
            max_inner: 30,
            restarts: 8,
            seed: 0,
            step_index: 0,
            power_optimal: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AllocationSolution {
    pub dipoles: AcDipoleSet,
    /// Scaled constraint residual (2-norm) at the solution.
    pub residual: f64,
    /// Physical objective μ_sinᵀμ_sin + μ_cosᵀμ_cos, (A·m²)².
    pub objective: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    /// Norm of the objective gradient projected onto the constraint tangent
    /// space, scaled units; near zero at a local power optimum.
    pub projected_gradient: f64,
    /// True when some amplitude exceeds the configured μ_max.
    pub mu_limit_exceeded: bool,
}

/// Solves the AC power-optimal allocation. The previous step's solution warm
/// starts the solver; failures fall back to deterministic random re-seeds.
pub fn solve_ac_allocation(
    problem: &AllocationProblem,
    settings: &AllocationSettings,
    omega_f: f64,
    warm_start: Option<&AcDipoleSet>,
) -> Result<AllocationSolution> {
    problem.validate()?;
    let n = problem.n();
    let scaling = scale_problem(problem);

    let all_zero = problem.target_forces.iter().all(|f| f.norm() == 0.0)
        && problem.target_torques.iter().all(|t| t.norm() == 0.0);
    if all_zero {
        return Ok(AllocationSolution {
            dipoles: AcDipoleSet::zeros(n, omega_f),
            residual: 0.0,
            objective: 0.0,
            iterations: 0,
            restarts_used: 0,
            projected_gradient: 0.0,
            mu_limit_exceeded: false,
        });
    }

    let model = AcModel { problem, scaling, power_optimal: settings.power_optimal };

    let warm_scaled = warm_start.map(|w| {
        let mut x = VecN::zeros(6 * n);
        for j in 0..n {
            x.fixed_rows_mut::<3>(3 * j).copy_from(&(w.mu_sin[j] / scaling.mu_ref));
            x.fixed_rows_mut::<3>(3 * n + 3 * j).copy_from(&(w.mu_cos[j] / scaling.mu_ref));
        }
        x
    });

    let out = augmented_lagrangian(&model, warm_scaled.as_ref(), settings)?;

    let x_phys = &out.x * scaling.mu_ref;
    let mu_sin: Vec<Vec3> = (0..n).map(|j| x_phys.fixed_rows::<3>(3 * j).into()).collect();
    let mu_cos: Vec<Vec3> = (0..n).map(|j| x_phys.fixed_rows::<3>(3 * n + 3 * j).into()).collect();
    let mu_limit_exceeded = mu_sin
        .iter()
        .chain(mu_cos.iter())
        .any(|m| m.norm() > problem.mu_max);
    Ok(AllocationSolution {
        dipoles: AcDipoleSet::new(mu_sin, mu_cos, omega_f)?,
        residual: out.residual,
        objective: x_phys.norm_squared(),
        iterations: out.iterations,
        restarts_used: out.restarts_used,
        projected_gradient: out.projected_gradient,
        mu_limit_exceeded,
    })
}

/// Bilinear curvature block of a force constraint: for yᵀf(a, b, r) the
/// mixed second derivative ∂²/∂a∂b is
/// (3μ₀/4π‖r‖⁴)[(y·û)E + û yᵀ + y ûᵀ − 5(y·û)û ûᵀ].
fn pair_force_curvature(y: &Vec3, r: &Vec3) -> nalgebra::Matrix3<f64> {
    let dist = r.norm();
    let u = r / dist;
    let yu = y.dot(&u);
    (3.0 * MU0 / (4.0 * std::f64::consts::PI) / dist.powi(4))
        * (yu * nalgebra::Matrix3::identity() + u * y.transpose() + y * u.transpose()
            - 5.0 * yu * u * u.transpose())
}

/// Bilinear curvature block of a torque constraint: yᵀτ(a, b, r) = bᵀ(−ỹ K(r))a,
/// so ∂²/∂b∂a = −ỹ·K(r).
fn pair_torque_curvature(y: &Vec3, r: &Vec3) -> nalgebra::Matrix3<f64> {
    -tilde(y) * field_jacobian_wrt_mu(r)
}

/// Scaled AC allocation model: unknowns x̂ = [μ_sin; μ_cos]/μ_ref.
struct AcModel<'a> {
    problem: &'a AllocationProblem,
    scaling: Scaling,
    power_optimal: bool,
}

impl AlModel for AcModel<'_> {
    fn dim(&self) -> usize {
        6 * self.problem.n()
    }

    fn constraints(&self, x: &VecN) -> Result<(VecN, MatMN)> {
        let n = self.problem.n();
        let x_phys = x * self.scaling.mu_ref;
        let (r, jac) = residual_and_jacobian(&x_phys, self.problem)?;
        let mut r_s = r;
        let mut j_s = jac * self.scaling.mu_ref;
        for i in 0..6 * (n - 1) {
            let s = if i < 3 * (n - 1) { self.scaling.f_ref } else { self.scaling.tau_ref };
            r_s[i] /= s;
            for c in 0..6 * n {
                j_s[(i, c)] /= s;
            }
        }
        Ok((r_s, j_s))
    }

    fn constraint_curvature(&self, y: &VecN) -> MatMN {
        let n = self.problem.n();
        let mu2 = self.scaling.mu_ref * self.scaling.mu_ref;
        let mut w = MatMN::zeros(6 * n, 6 * n);
        for j in 1..n {
            let f_row = 3 * (j - 1);
            let t_row = 3 * (n - 1) + 3 * (j - 1);
            let y_f = Vec3::new(y[f_row], y[f_row + 1], y[f_row + 2]) * (mu2 / self.scaling.f_ref);
            let y_t = Vec3::new(y[t_row], y[t_row + 1], y[t_row + 2]) * (mu2 / self.scaling.tau_ref);
            for k in 0..n {
                if k == j {
                    continue;
                }
                let r_jk = self.problem.positions[j] - self.problem.positions[k];
                let f_blk = 0.5 * pair_force_curvature(&y_f, &r_jk);
                let t_blk = 0.5 * pair_torque_curvature(&y_t, &r_jk);
                for base in [0usize, 3 * n] {
                    add_block(&mut w, base + 3 * j, base + 3 * k, &(f_blk + t_blk));
                    add_block(&mut w, base + 3 * k, base + 3 * j, &(f_blk + t_blk).transpose());
                }
            }
        }
        w
    }

    fn objective(&self, x: &VecN) -> Result<(VecN, MatMN)> {
        if self.power_optimal {
            Ok((x.clone(), MatMN::identity(x.len(), x.len())))
        } else {
            Ok((VecN::zeros(0), MatMN::zeros(0, x.len())))
        }
    }

    fn objective_curvature(&self, _g: &VecN) -> MatMN {
        MatMN::zeros(self.dim(), self.dim())
    }
}

/// DC torque-minimizing baseline: minimize Σ‖τ_EM,j‖² subject to the force
/// constraints of satellites 2..n.
#[derive(Debug, Clone)]
pub struct DcSolution {
    pub dipoles: Vec<Vec3>,
    pub achieved_torques: Vec<Vec3>,
    /// Scaled force residual at the solution.
    pub residual: f64,
    /// Physical Σ‖τ_EM,j‖², (N·m)².
    pub objective: f64,
    pub iterations: usize,
    pub restarts_used: usize,
}

pub fn solve_dc_allocation(
    positions: &[Vec3],
    target_forces: &[Vec3],
    d_min: f64,
    settings: &AllocationSettings,
    warm_start: Option<&[Vec3]>,
) -> Result<DcSolution> {
    let n = positions.len();
    if target_forces.len() != n - 1 || n < 2 {
        return Err(Error::Invalid(format!(
            "DC allocation needs n ≥ 2 and n-1 force targets (n = {n}, got {})",
            target_forces.len()
        )));
    }
    let problem = AllocationProblem {
        positions: positions.to_vec(),
        target_forces: target_forces.to_vec(),
        target_torques: vec![Vec3::zeros(); n],
        d_min,
        mu_max: f64::INFINITY,
    };
    // torque targets are unused here; only check distances and force balance
    for j in 0..n {
        for k in (j + 1)..n {
            let dist = (positions[j] - positions[k]).norm();
            if dist < d_min {
                return Err(Error::FarFieldViolation { j, k, dist, d_min });
            }
        }
    }
    let scaling = scale_problem(&problem);

    if target_forces.iter().all(|f| f.norm() == 0.0) {
        return Ok(DcSolution {
            dipoles: vec![Vec3::zeros(); n],
            achieved_torques: vec![Vec3::zeros(); n],
            residual: 0.0,
            objective: 0.0,
            iterations: 0,
            restarts_used: 0,
        });
    }

    let model = DcModel { positions, target_forces, d_min, scaling };
    let warm_scaled = warm_start.map(|w| {
        let mut x = VecN::zeros(3 * n);
        for (j, m) in w.iter().enumerate() {
            x.fixed_rows_mut::<3>(3 * j).copy_from(&(m / scaling.mu_ref));
        }
        x
    });
    let out = augmented_lagrangian(&model, warm_scaled.as_ref(), settings)?;

    let x_phys = &out.x * scaling.mu_ref;
    let dipoles: Vec<Vec3> = (0..n).map(|j| x_phys.fixed_rows::<3>(3 * j).into()).collect();
    let (_, _, g, _) = model.wrench_physical(&x_phys)?;
    let achieved: Vec<Vec3> = (0..n).map(|j| g.fixed_rows::<3>(3 * j).into()).collect();
    Ok(DcSolution {
        dipoles,
        achieved_torques: achieved,
        residual: out.residual,
        objective: g.norm_squared(),
        iterations: out.iterations,
        restarts_used: out.restarts_used,
    })
}

/// Scaled DC allocation model: unknowns x̂ = μ/μ_ref, force-only constraints,
/// torque-norm objective.
struct DcModel<'a> {
    positions: &'a [Vec3],
    target_forces: &'a [Vec3],
    d_min: f64,
    scaling: Scaling,
}

impl DcModel<'_> {
    /// (c, Jc, g, Jg) in physical units.
    fn wrench_physical(&self, x_phys: &VecN) -> Result<(VecN, MatMN, VecN, MatMN)> {
        let n = self.positions.len();
        let ff = FarFieldModel::new(self.d_min);
        let mus: Vec<Vec3> = (0..n).map(|j| x_phys.fixed_rows::<3>(3 * j).into()).collect();
        let mut c = VecN::zeros(3 * (n - 1));
        let mut jc = MatMN::zeros(3 * (n - 1), 3 * n);
        let mut g = VecN::zeros(3 * n);
        let mut jg = MatMN::zeros(3 * n, 3 * n);
        for j in 0..n {
            let mut torque = Vec3::zeros();
            for k in 0..n {
                if k == j {
                    continue;
                }
                let r_jk = self.positions[j] - self.positions[k];
                torque += ff.torque(&mus[k], &mus[j], &r_jk)?;
                add_block(&mut jg, 3 * j, 3 * j, &torque_jacobian_wrt_mu_j(&mus[k], &r_jk));
                add_block(&mut jg, 3 * j, 3 * k, &torque_jacobian_wrt_mu_k(&mus[j], &r_jk));
                if j >= 1 {
                    let row = 3 * (j - 1);
                    add_block(&mut jc, row, 3 * j, &force_jacobian_wrt_mu_j(&mus[k], &r_jk));
                    add_block(&mut jc, row, 3 * k, &force_jacobian_wrt_mu_k(&mus[j], &r_jk));
                }
            }
            if j >= 1 {
                let mut force = -self.target_forces[j - 1];
                for k in 0..n {
                    if k != j {
                        force += ff.force(&mus[k], &mus[j], &(self.positions[j] - self.positions[k]))?;
                    }
                }
                c.fixed_rows_mut::<3>(3 * (j - 1)).copy_from(&force);
            }
            g.fixed_rows_mut::<3>(3 * j).copy_from(&torque);
        }
        Ok((c, jc, g, jg))
    }
}

impl AlModel for DcModel<'_> {
    fn dim(&self) -> usize {
        3 * self.positions.len()
    }

    fn constraints(&self, x: &VecN) -> Result<(VecN, MatMN)> {
        let x_phys = x * self.scaling.mu_ref;
        let (c, jc, _, _) = self.wrench_physical(&x_phys)?;
        Ok((c / self.scaling.f_ref, jc * (self.scaling.mu_ref / self.scaling.f_ref)))
    }

    fn constraint_curvature(&self, y: &VecN) -> MatMN {
        let n = self.positions.len();
        let mu2 = self.scaling.mu_ref * self.scaling.mu_ref;
        let mut w = MatMN::zeros(3 * n, 3 * n);
        for j in 1..n {
            let row = 3 * (j - 1);
            let y_f = Vec3::new(y[row], y[row + 1], y[row + 2]) * (mu2 / self.scaling.f_ref);
            for k in 0..n {
                if k == j {
                    continue;
                }
                let r_jk = self.positions[j] - self.positions[k];
                let f_blk = pair_force_curvature(&y_f, &r_jk);
                add_block(&mut w, 3 * j, 3 * k, &f_blk);
                add_block(&mut w, 3 * k, 3 * j, &f_blk.transpose());
            }
        }
        w
    }

    fn objective(&self, x: &VecN) -> Result<(VecN, MatMN)> {
        let x_phys = x * self.scaling.mu_ref;
        let (_, _, g, jg) = self.wrench_physical(&x_phys)?;
        Ok((g / self.scaling.tau_ref, jg * (self.scaling.mu_ref / self.scaling.tau_ref)))
    }

    fn objective_curvature(&self, g: &VecN) -> MatMN {
        let n = self.positions.len();
        let mu2 = self.scaling.mu_ref * self.scaling.mu_ref;
        let mut w = MatMN::zeros(3 * n, 3 * n);
        for j in 0..n {
            let y_t = Vec3::new(g[3 * j], g[3 * j + 1], g[3 * j + 2]) * (mu2 / self.scaling.tau_ref);
            for k in 0..n {
                if k == j {
                    continue;
                }
                let r_jk = self.positions[j] - self.positions[k];
                let t_blk = pair_torque_curvature(&y_t, &r_jk);
                add_block(&mut w, 3 * j, 3 * k, &t_blk);
                add_block(&mut w, 3 * k, 3 * j, &t_blk.transpose());
            }
        }
        w
    }
}
/// Problem interface for the augmented-Lagrangian core. Constraints are
/// bilinear in the unknowns, so their second derivatives are constant and the
/// curvature contraction Σ yᵢ∇²cᵢ depends on the multipliers alone; supplying
/// it exactly makes the inner iteration a true Newton method, which is what
/// keeps warm-started solves on the same solution branch.
trait AlModel {
    fn dim(&self) -> usize;
    /// Scaled constraint residual and Jacobian.
    fn constraints(&self, x: &VecN) -> Result<(VecN, MatMN)>;
    /// W(y) = Σ yᵢ ∇²cᵢ (scaled, x-independent).
    fn constraint_curvature(&self, y: &VecN) -> MatMN;
    /// Scaled objective residual g and Jacobian (½‖g‖² is minimized);
    /// zero-row output means feasibility only.
    fn objective(&self, x: &VecN) -> Result<(VecN, MatMN)>;
    /// Σ gᵢ ∇²gᵢ for the current objective residual.
    fn objective_curvature(&self, g: &VecN) -> MatMN;
}

struct SolverOutput {
    x: VecN,
    residual: f64,
    iterations: usize,
    restarts_used: usize,
    projected_gradient: f64,
}

struct Attempt {
    x: VecN,
    residual: f64,
    stationary: bool,
    objective: f64,
    attempt: usize,
}

/// Augmented-Lagrangian outer loop with damped-Newton inner solves on
/// Φ(x) = ½‖g‖² + λᵀc + (ρ/2)‖c‖². All quantities arrive nondimensionalized.
fn augmented_lagrangian(
    model: &dyn AlModel,
    warm_start: Option<&VecN>,
    settings: &AllocationSettings,
) -> Result<SolverOutput> {
    let dim = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(
        settings.seed ^ settings.step_index.wrapping_mul(0x9E3779B97F4A7C15),
    );
    let mut attempts_log: Vec<Attempt> = Vec::new();
    let mut total_iters = 0usize;

    for attempt in 0..=settings.restarts {
        let (x0, warm) = match (attempt, warm_start) {
            (0, Some(w)) => (w.clone(), true),
            _ => (VecN::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)), false),
        };
        let (x, residual, iters, stationary) = solve_single(model, x0, warm, settings)?;
        total_iters += iters;
        let objective = model.objective(&x)?.0.norm_squared();
        let ok = residual <= settings.constraint_tol && stationary;
        attempts_log.push(Attempt { x, residual, stationary, objective, attempt });
        if ok {
            break;
        }
    }

    // Prefer stationary feasible solutions with the lowest objective, then
    // any feasible one, then report failure with the best residual seen.
    let feasible = |a: &&Attempt| a.residual <= settings.constraint_tol;
    let chosen = attempts_log
        .iter()
        .filter(feasible)
        .filter(|a| a.stationary)
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .or_else(|| {
            attempts_log
                .iter()
                .filter(feasible)
                .min_by(|a, b| a.objective.total_cmp(&b.objective))
        });
    let chosen = match chosen {
        Some(c) => c,
        None => {
            let best = attempts_log
                .iter()
                .min_by(|a, b| a.residual.total_cmp(&b.residual))
                .expect("at least one attempt");
            return Err(Error::NoFeasibleSolution {
                residual: best.residual,
                restarts: settings.restarts,
            });
        }
    };

    // Optimality diagnostic: objective gradient projected onto the constraint
    // tangent space.
    let projected_gradient = {
        let (_, jc) = model.constraints(&chosen.x)?;
        let (g, jg) = model.objective(&chosen.x)?;
        let grad = jg.transpose() * g;
        let jjt = &jc * jc.transpose() + MatMN::identity(jc.nrows(), jc.nrows()) * 1e-14;
        match nalgebra::Cholesky::new(jjt) {
            Some(ch) => {
                let corr = jc.transpose() * ch.solve(&(&jc * &grad));
                (grad - corr).norm()
            }
            None => f64::NAN,
        }
    };

    Ok(SolverOutput {
        x: chosen.x.clone(),
        residual: chosen.residual,
        iterations: total_iters,
        restarts_used: chosen.attempt,
        projected_gradient,
    })
}

/// One augmented-Lagrangian run from a single start. Returns the iterate, its
/// constraint norm, the Newton iterations spent, and whether the final inner
/// pass reached gradient stationarity.
fn solve_single(
    model: &dyn AlModel,
    mut x: VecN,
    warm: bool,
    settings: &AllocationSettings,
) -> Result<(VecN, f64, usize, bool)> {
    let dim = model.dim();
    let (mut c, jc0) = model.constraints(&x)?;
    let mut lambda = VecN::zeros(c.len());
    if warm {
        // Warm starts arrive near a KKT point of the previous step; recover
        // its multipliers by least squares (∇f + Jᵀλ ≈ 0) so the augmented
        // Lagrangian tracks the same solution branch instead of wandering.
        let (g, jg) = model.objective(&x)?;
        let grad = jg.transpose() * g;
        let jjt = &jc0 * jc0.transpose() + MatMN::identity(jc0.nrows(), jc0.nrows()) * 1e-12;
        if let Some(ch) = nalgebra::Cholesky::new(jjt) {
            lambda = -ch.solve(&(&jc0 * &grad));
        }
    }
    // Warm starts sit at (or near) a KKT point; the augmented Hessian
    // ∇²L + ρJᵀJ is only positive definite there once ρ dominates the
    // Lagrangian's negative curvature in the constraint-normal directions,
    // so start warm solves stiff. Cold solves start soft to stay stable far
    // from the manifold.
    let mut rho = if warm { 1e5 } else { 10.0 };
    let mut iters = 0usize;
    let mut prev_cnorm = c.norm();
    let mut stationary = false;

    let phi_of = |x: &VecN, lambda: &VecN, rho: f64| -> Result<f64> {
        let (c, _) = model.constraints(x)?;
        let (g, _) = model.objective(x)?;
        Ok(0.5 * g.norm_squared() + lambda.dot(&c) + 0.5 * rho * c.norm_squared())
    };

    for _outer in 0..settings.max_outer {
        let mut nu = 1e-12;
        stationary = false;
        for _inner in 0..settings.max_inner {
            iters += 1;
            let (ci, jci) = model.constraints(&x)?;
            let (g, jg) = model.objective(&x)?;
            let y = &lambda + rho * &ci;
            let grad = jg.transpose() * &g + jci.transpose() * &y;
            if grad.norm() <= settings.gradient_tol * (1.0 + x.norm()) {
                stationary = true;
                break;
            }
            let h_base = jg.transpose() * &jg
                + model.objective_curvature(&g)
                + jci.transpose() * &jci * rho
                + model.constraint_curvature(&y);
            // Newton with Levenberg damping: bump ν until the (possibly
            // indefinite) Hessian factors, then line-search the step.
            let mut step = None;
            for _ in 0..60 {
                let mut h = h_base.clone();
                for i in 0..dim {
                    h[(i, i)] += nu;
                }
                match nalgebra::Cholesky::new(h) {
                    Some(ch) => {
                        step = Some(ch.solve(&(-&grad)));
                        break;
                    }
                    None => nu = (nu * 10.0).max(1e-10),
                }
            }
            let step = match step {
                Some(s) => s,
                None => break,
            };
            let phi = phi_of(&x, &lambda, rho)?;
            let slope = grad.dot(&step);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = &x + &step * alpha;
                if let Ok(phi_t) = phi_of(&trial, &lambda, rho) {
                    if phi_t <= phi + 1e-4 * alpha * slope {
                        x = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted {
                nu = (nu * 0.25).max(1e-12);
            } else {
                nu = (nu * 100.0).max(1e-8);
            }
        }

        let out = model.constraints(&x)?;
        c = out.0;
        let cnorm = c.norm();
        if cnorm <= settings.constraint_tol && stationary {
            break;
        }
        if cnorm <= 0.25 * prev_cnorm || cnorm <= settings.constraint_tol {
            lambda += rho * &c;
        } else {
            rho = (rho * 10.0).min(1e10);
        }
        prev_cnorm = cnorm;
    }
    Ok((x.clone(), c.norm(), iters, stationary))
}
