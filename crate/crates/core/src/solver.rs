//! Sparse linear solves and the nonlinear solve of the implicit corrector
//! stage.
//!
//! Direct solves go through a sparse LU factorization; an optional
//! Jacobi-preconditioned conjugate gradient is available for SPD systems. The
//! corrector couples the temperature equation to the radiative moment system
//! with an outer Gauss-Seidel iteration; the temperature equation itself is
//! solved by Newton on the black-body terms with the conduction tensor frozen
//! per outer iterate, so every linearized operator stays symmetric. Newton
//! steps reuse a factorization of the constant part of the Jacobian as a
//! preconditioner and only fall back to refactoring when that stalls.

use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use thiserror::Error;

use crate::assembly::{self, CsrMatrix, RadiativeSystem};
use crate::model::{ConductivityModel, ModelError, PhysicalParams};
use crate::spaces::{FemField, FemSpace};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("singular system: {0}")]
    Singular(String),
    #[error("linear solver exceeded {iters} iterations (residual {residual:.3e})")]
    MaxIterationsExceeded { iters: usize, residual: f64 },
    #[error("nonlinear iteration diverged: residual grew for {grew} consecutive iterates (last {residual:.3e})")]
    NonlinearDivergence { grew: usize, residual: f64 },
    #[error("nonlinear iteration did not converge within {iters} iterations (residual {residual:.3e})")]
    NonlinearMaxIterations { iters: usize, residual: f64 },
    #[error("non-finite values encountered during solve")]
    NotFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Linear solver selection: sparse direct factorization (default) or
/// Jacobi-preconditioned conjugate gradient for SPD systems.
#[derive(Debug, Clone)]
pub enum LinearSolver {
    Direct,
    Cg { tol: f64, max_iter: usize },
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::Direct
    }
}

impl LinearSolver {
    pub fn solve(&self, matrix: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        match self {
            LinearSolver::Direct => {
                let f = Factorization::new(matrix)?;
                Ok(f.solve_refined(matrix, rhs))
            }
            LinearSolver::Cg { tol, max_iter } => cg_solve(matrix, rhs, *tol, *max_iter),
        }
    }
}

/// Sparse LU factorization, reusable across right-hand sides.
pub struct Factorization {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl Factorization {
    pub fn new(matrix: &CsrMatrix) -> Result<Self, SolverError> {
        assert_eq!(matrix.nrows, matrix.ncols);
        let mut triplets = Vec::with_capacity(matrix.nnz());
        for row in 0..matrix.nrows {
            for k in matrix.row_offsets[row]..matrix.row_offsets[row + 1] {
                triplets.push(Triplet::new(row, matrix.col_indices[k], matrix.values[k]));
            }
        }
        let mat = SparseColMat::try_new_from_triplets(matrix.nrows, matrix.ncols, &triplets)
            .map_err(|e| SolverError::Singular(format!("{e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| SolverError::Singular(format!("{e:?}")))?;
        Ok(Self {
            lu,
            n: matrix.nrows,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    /// Solve with one step of iterative refinement.
    pub fn solve_refined(&self, matrix: &CsrMatrix, rhs: &[f64]) -> Vec<f64> {
        let mut x = self.solve(rhs);
        let ax = matrix.mul_vec(&x);
        let res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = self.solve(&res);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        x
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradient for SPD systems.
pub fn cg_solve(
    matrix: &CsrMatrix,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolverError> {
    let inv_diag: Vec<f64> = matrix
        .diagonal()
        .iter()
        .map(|&d| {
            if d != 0.0 { 1.0 / d } else { 1.0 }
        })
        .collect();
    let precond = |r: &[f64], z: &mut Vec<f64>| {
        z.clear();
        z.extend(r.iter().zip(&inv_diag).map(|(ri, di)| ri * di));
    };
    cg_preconditioned(matrix, rhs, tol, max_iter, precond)
}

fn cg_preconditioned(
    matrix: &CsrMatrix,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
    mut precond: impl FnMut(&[f64], &mut Vec<f64>),
) -> Result<Vec<f64>, SolverError> {
    let n = rhs.len();
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = Vec::with_capacity(n);
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        matrix.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolverError::Singular(format!(
                "CG breakdown: p^T A p = {pap}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = norm2(&r);
        if rnorm <= tol * bnorm {
            return Ok(x);
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolverError::MaxIterationsExceeded {
        iters: max_iter,
        residual: norm2(&r) / bnorm,
    })
}

/// Conjugate gradient preconditioned by a reusable factorization of a nearby
/// operator; used for the Newton systems whose Jacobian differs from a
/// constant matrix only by the black-body terms.
fn cg_with_factor_precond(
    matrix: &CsrMatrix,
    rhs: &[f64],
    precond: &Factorization,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolverError> {
    cg_preconditioned(matrix, rhs, tol, max_iter, |r, z| {
        *z = precond.solve(r);
    })
}

/// Tolerances of the Newton iteration on the temperature equation.
#[derive(Debug, Clone)]
pub struct NewtonConfig {
    /// Relative residual tolerance (against the first residual of the solve).
    pub rel_tol: f64,
    /// Absolute residual floor.
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// Configuration of the outer temperature/moment coupling iteration.
#[derive(Debug, Clone)]
pub struct CorrectorConfig {
    pub newton: NewtonConfig,
    /// Relative L2 change of the temperature between outer iterates.
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    pub linear: LinearSolver,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            newton: NewtonConfig::default(),
            outer_tol: 1e-10,
            outer_max_iter: 50,
            linear: LinearSolver::default(),
        }
    }
}

/// Conduction operator handed to the corrector: either a prebuilt constant
/// matrix with a factorization of the constant Jacobian part, or instructions
/// to rebuild from the current temperature iterate.
pub enum DiffusionOperator<'a> {
    Constant {
        stiffness: &'a CsrMatrix,
        /// Factorization of `3M + sigma K + (sigma/tau) c_m B`.
        base_factor: &'a Factorization,
    },
    Temperature {
        exactness: usize,
    },
}

/// Everything the corrector stage needs, prepared by the integrator.
pub struct CorrectorContext<'a> {
    pub t_space: Arc<FemSpace>,
    pub params: &'a PhysicalParams,
    pub model: &'a ConductivityModel,
    pub sigma: f64,
    pub mass: &'a CsrMatrix,
    pub boundary_mass: &'a CsrMatrix,
    pub diffusion: DiffusionOperator<'a>,
    /// Rectangular `(phi_basis_j, w_i)_0` coupling matrix.
    pub cross_mass: &'a CsrMatrix,
    pub radiative: &'a RadiativeSystem,
    pub radiative_factor: &'a Factorization,
    /// Exactness for the volume black-body terms.
    pub nonlinear_exactness: usize,
    /// Exactness for the boundary black-body terms.
    pub boundary_exactness: usize,
    /// `(4T^{n+1/2} - T^n, w)_0` data vector.
    pub data: &'a [f64],
    /// Time-invariant and explicitly time-dependent right-hand side pieces at
    /// `t_{n+1}` (ambient boundary data, manufactured sources), pre-multiplied
    /// by sigma and the proper coefficients.
    pub const_rhs: &'a [f64],
    /// Optional hook adding manufactured terms to the radiative right-hand side.
    pub phi_rhs_extra: Option<&'a dyn Fn(&mut Vec<f64>)>,
}

/// Output of one corrector solve.
pub struct CorrectorSolution {
    pub temperature: Vec<f64>,
    pub phi: [Vec<f64>; 2],
    pub outer_iters: usize,
    pub newton_iters: usize,
    /// Newton residual history of the first outer iterate (quadratic
    /// convergence diagnostics).
    pub first_newton_residuals: Vec<f64>,
}

/// Solves the coupled implicit stage: outer Gauss-Seidel over the
/// temperature/moment coupling, inner Newton on the black-body nonlinearity
/// with the conduction tensor frozen at the current outer iterate.
pub fn solve_corrector(
    ctx: &CorrectorContext,
    t_init: &[f64],
    config: &CorrectorConfig,
) -> Result<CorrectorSolution, SolverError> {
    let n = ctx.t_space.num_dofs;
    let p = ctx.params;
    let sigma = ctx.sigma;
    let coeff_bnd_f = sigma / p.tau * p.alpha * std::f64::consts::PI;
    let coeff_vol_f = 4.0 * std::f64::consts::PI * p.k0 / (p.tau * p.tau) * sigma;
    let coeff_cm = sigma / p.tau * p.c_m;
    let gamma_c = sigma * p.gamma_coupling();

    let mut t_cur = t_init.to_vec();
    let mut phi = [vec![0.0; ctx.radiative.phi_space.num_dofs], vec![
        0.0;
        ctx.radiative.phi_space.num_dofs
    ]];
    let mut outer_iters = 0;
    let mut newton_total = 0;
    let mut first_newton_residuals = Vec::new();
    let mut outer_residual_prev = f64::INFINITY;
    let mut outer_grew = 0usize;
    // residual scale of the whole corrector solve (first Newton residual of
    // the first outer iterate)
    let mut scale0: Option<f64> = None;

    // storage reused across outer iterates when the conduction tensor is constant
    let mut temp_stiffness: Option<CsrMatrix> = None;
    let mut temp_factor: Option<Factorization> = None;

    for outer in 0..config.outer_max_iter {
        outer_iters = outer + 1;
        // moment solve driven by the current temperature iterate
        let t_field = FemField::from_coeffs(&ctx.t_space, t_cur.clone());
        let mut rhs_phi = ctx.radiative.rhs_from_field(&t_field);
        if let Some(hook) = ctx.phi_rhs_extra {
            hook(&mut rhs_phi);
        }
        let phi_flat = ctx.radiative_factor.solve(&rhs_phi);
        if phi_flat.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NotFinite);
        }
        let np = ctx.radiative.phi_space.num_dofs;
        phi[0].copy_from_slice(&phi_flat[..np]);
        phi[1].copy_from_slice(&phi_flat[np..]);

        // conduction operator for this outer iterate
        let (stiffness, base_factor): (&CsrMatrix, &Factorization) = match &ctx.diffusion {
            DiffusionOperator::Constant {
                stiffness,
                base_factor,
            } => (stiffness, base_factor),
            DiffusionOperator::Temperature { exactness } => {
                let k = assembly::assemble_diffusion_temperature(
                    &ctx.t_space,
                    &t_field,
                    ctx.model,
                    *exactness,
                )?;
                let mut base = ctx.mass.clone();
                base.scale(3.0);
                base.add_scaled(&k, sigma);
                if coeff_cm != 0.0 {
                    base.add_scaled(ctx.boundary_mass, coeff_cm);
                }
                let factor = temp_factor.insert(Factorization::new(&base)?);
                (&*temp_stiffness.insert(k), &*factor)
            }
        };

        // fixed right-hand side for this outer iterate:
        // data + const terms + sigma * gamma-coupling * (gamma2 phi1 - gamma1 phi2, w)
        let phi_combo: Vec<f64> = phi[0]
            .iter()
            .zip(&phi[1])
            .map(|(a, b)| p.gamma2 * a - p.gamma1 * b)
            .collect();
        let phi_load = ctx.cross_mass.mul_vec(&phi_combo);
        let rhs_fixed: Vec<f64> = (0..n)
            .map(|i| ctx.data[i] + ctx.const_rhs[i] + gamma_c * phi_load[i])
            .collect();

        // Newton on: 3 M c + sigma K c + coeff_cm B c
        //            + coeff_bnd_f <f(c), w> + coeff_vol_f (f(c), w) = rhs_fixed
        let residual = |c: &[f64]| -> Vec<f64> {
            let c_field = FemField::from_coeffs(&ctx.t_space, c.to_vec());
            let (vol_load, _) = assembly::assemble_blackbody_load(
                &ctx.t_space,
                &c_field,
                p,
                ctx.nonlinear_exactness,
                false,
            );
            let mut g = ctx.mass.mul_vec(c);
            g.iter_mut().for_each(|v| *v *= 3.0);
            let kc = stiffness.mul_vec(c);
            for i in 0..n {
                g[i] += sigma * kc[i] + coeff_vol_f * vol_load[i] - rhs_fixed[i];
            }
            if coeff_cm != 0.0 {
                let bc = ctx.boundary_mass.mul_vec(c);
                for i in 0..n {
                    g[i] += coeff_cm * bc[i];
                }
            }
            if coeff_bnd_f != 0.0 {
                let (bnd_load, _) = assembly::assemble_boundary_blackbody(
                    &ctx.t_space,
                    &c_field,
                    p,
                    ctx.boundary_exactness,
                    false,
                );
                for i in 0..n {
                    g[i] += coeff_bnd_f * bnd_load[i];
                }
            }
            g
        };

        let mut c = t_cur.clone();
        let mut prev_res = f64::INFINITY;
        let mut grew = 0usize;
        let mut converged = false;
        for _newton in 0..config.newton.max_iter {
            let mut g = residual(&c);
            let res = norm2(&g);
            if !res.is_finite() {
                return Err(SolverError::NotFinite);
            }
            if outer == 0 {
                first_newton_residuals.push(res);
            }
            let scale = *scale0.get_or_insert(res.max(config.newton.abs_tol));
            if res <= config.newton.rel_tol * scale + config.newton.abs_tol {
                converged = true;
                break;
            }
            newton_total += 1;
            if res > prev_res {
                grew += 1;
                if grew >= 3 {
                    return Err(SolverError::NonlinearDivergence {
                        grew,
                        residual: res,
                    });
                }
            } else {
                grew = 0;
            }
            prev_res = res;

            // Jacobian: base + black-body terms (same sparsity pattern)
            let c_field = FemField::from_coeffs(&ctx.t_space, c.clone());
            let (_, vol_jac) = assembly::assemble_blackbody_load(
                &ctx.t_space,
                &c_field,
                p,
                ctx.nonlinear_exactness,
                true,
            );
            let mut jac = ctx.mass.clone();
            jac.scale(3.0);
            jac.add_scaled(stiffness, sigma);
            if coeff_cm != 0.0 {
                jac.add_scaled(ctx.boundary_mass, coeff_cm);
            }
            jac.add_scaled(vol_jac.as_ref().unwrap(), coeff_vol_f);
            if coeff_bnd_f != 0.0 {
                let (_, bnd_jac) = assembly::assemble_boundary_blackbody(
                    &ctx.t_space,
                    &c_field,
                    p,
                    ctx.boundary_exactness,
                    true,
                );
                jac.add_scaled(bnd_jac.as_ref().unwrap(), coeff_bnd_f);
            }
            g.iter_mut().for_each(|v| *v = -*v);
            let step = match cg_with_factor_precond(&jac, &g, base_factor, 1e-12, 400) {
                Ok(s) => s,
                Err(_) => Factorization::new(&jac)?.solve_refined(&jac, &g),
            };
            for i in 0..n {
                c[i] += step[i];
            }
        }
        if !converged {
            return Err(SolverError::NonlinearMaxIterations {
                iters: config.newton.max_iter,
                residual: prev_res,
            });
        }

        // outer convergence: relative mass-norm change of the temperature
        let diff: Vec<f64> = c.iter().zip(&t_cur).map(|(a, b)| a - b).collect();
        let m_diff = ctx.mass.mul_vec(&diff);
        let m_new = ctx.mass.mul_vec(&c);
        let change = dot(&diff, &m_diff).sqrt();
        let size = dot(&c, &m_new).sqrt().max(f64::MIN_POSITIVE);
        t_cur = c;
        let rel = change / size;
        if rel > outer_residual_prev {
            outer_grew += 1;
            if outer_grew >= 3 {
                return Err(SolverError::NonlinearDivergence {
                    grew: outer_grew,
                    residual: rel,
                });
            }
        } else {
            outer_grew = 0;
        }
        outer_residual_prev = rel;
        if rel <= config.outer_tol {
            break;
        }
        if outer + 1 == config.outer_max_iter {
            return Err(SolverError::NonlinearMaxIterations {
                iters: config.outer_max_iter,
                residual: rel,
            });
        }
    }

    // final moment solve consistent with the converged temperature
    let t_field = FemField::from_coeffs(&ctx.t_space, t_cur.clone());
    let mut rhs_phi = ctx.radiative.rhs_from_field(&t_field);
    if let Some(hook) = ctx.phi_rhs_extra {
        hook(&mut rhs_phi);
    }
    let phi_flat = ctx.radiative_factor.solve(&rhs_phi);
    let np = ctx.radiative.phi_space.num_dofs;
    phi[0].copy_from_slice(&phi_flat[..np]);
    phi[1].copy_from_slice(&phi_flat[np..]);

    Ok(CorrectorSolution {
        temperature: t_cur,
        phi,
        outer_iters,
        newton_iters: newton_total,
        first_newton_residuals,
    })
}
