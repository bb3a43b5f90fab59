//! Nonlinear solve of one implicit step: Newton's method continued along the
//! homotopy `H(ρ, u, α)` from the decoupled linear system at `α = 0` to the
//! scheme at `α = 1`.

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use log::debug;

use crate::error::{Error, Result, StepFailure};
use crate::mesh::{Mesh, Vec3};
use crate::scheme::{
    assemble_jacobian, assemble_residual, stiffness_matrix, Layout, ResidualVector, SchemeParams,
    State,
};
use crate::spaces::element_average;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct HomotopySettings {
    /// Strictly increasing, from 0 to exactly 1.
    pub alpha_schedule: Vec<f64>,
    /// Newton iterations allowed per α node.
    pub max_iter: usize,
    /// Convergence threshold on the ∞-norm of the residual.
    pub tol: f64,
    /// Step length factor applied on each rejected trial.
    pub backtrack: f64,
    /// Smallest step length tried before giving up.
    pub step_floor: f64,
}

impl HomotopySettings {
    pub fn new(alpha_schedule: Vec<f64>, params: &SchemeParams) -> Result<Self> {
        let s = HomotopySettings {
            alpha_schedule,
            max_iter: params.newton_max_iter,
            tol: params.newton_tol,
            backtrack: 0.5,
            step_floor: 1e-6,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.alpha_schedule;
        if a.len() < 2 || a[0] != 0.0 || *a.last().unwrap() != 1.0 {
            return Err(Error::InvalidArgument(
                "alpha schedule must start at 0 and end at 1".into(),
            ));
        }
        if a.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "alpha schedule must be strictly increasing".into(),
            ));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.step_floor > 0.0) {
            return Err(Error::InvalidArgument(
                "invalid line-search settings".into(),
            ));
        }
        Ok(())
    }

    /// `{0, 1}`, then `{0, ¼, ½, ¾, 1}`, then uniform steps of
    /// `1 / homotopy_steps`.
    pub fn fallback_chain(params: &SchemeParams) -> Result<Vec<HomotopySettings>> {
        let n = params.homotopy_steps;
        let uniform: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        [vec![0.0, 1.0], vec![0.0, 0.25, 0.5, 0.75, 1.0], uniform]
            .into_iter()
            .map(|s| HomotopySettings::new(s, params))
            .collect()
    }
}

/// Work done by a successful step solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveStats {
    /// Newton iterations over all attempted schedules.
    pub newton_iters: usize,
    /// Number of α nodes in the schedule that succeeded.
    pub alpha_nodes_used: usize,
    /// Position of that schedule in the fallback chain.
    pub schedule_index: usize,
}

/// Residual of `H(·, α)`: convection, pressure and stabilization scaled by α.
pub fn alpha_residual(
    prev: &State,
    guess: &State,
    alpha: f64,
    params: &SchemeParams,
    mesh: &Mesh,
) -> Result<ResidualVector> {
    assemble_residual(prev, guess, alpha, params, mesh)
}

/// LU factorization of a square sparse matrix.
pub struct SparseLu {
    matrix: CsrMatrix,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn new(matrix: &CsrMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::LinearSolver(format!(
                "matrix is {}x{}, not square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        faer::set_global_parallelism(faer::Par::Seq);
        let triplets: Vec<Triplet<usize, usize, f64>> = matrix
            .triplets()
            .into_iter()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(
            matrix.nrows(),
            matrix.ncols(),
            &triplets,
        )
        .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
        let lu = a
            .sp_lu()
            .map_err(|e| Error::LinearSolver(format!("factorization failed: {e:?}")))?;
        Ok(SparseLu {
            matrix: matrix.clone(),
            lu,
        })
    }

    /// Solves `A x = b` and checks `‖Ax − b‖_∞ ≤ 1e-10 (1 + ‖b‖_∞)`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.matrix.nrows();
        if rhs.len() != n {
            return Err(Error::LinearSolver(format!(
                "rhs has length {}, expected {n}",
                rhs.len()
            )));
        }
        let b = faer::col::Col::from_fn(n, |i| rhs[i]);
        let x = self.lu.solve(&b);
        let x: Vec<f64> = (0..n).map(|i| x[i]).collect();
        let ax = self.matrix.mul_vec(&x);
        // f64::max would swallow NaN
        let res = ax
            .iter()
            .zip(rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, |m: f64, v| if v.is_nan() || v > m { v } else { m });
        let bnorm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !x.iter().all(|v| v.is_finite()) || !(res <= 1e-10 * (1.0 + bnorm)) {
            return Err(Error::LinearSolver(format!(
                "numerically singular system (residual {res:.3e})"
            )));
        }
        Ok(x)
    }
}

/// Direct sparse solve of `A x = b`.
pub fn linear_solve(matrix: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    SparseLu::new(matrix)?.solve(rhs)
}

/// Exact solution of the `α = 0` system: `ρ = ρ^{k-1}` and
/// `(M/Δt + K) u = Σ_E |E| ρ_E^{k-1} û_E^{k-1} / (4Δt)` per free face, where
/// `M` couples the free faces of each element with weight `|E| ρ_E^{k-1} / 16`.
pub fn alpha0_solve(prev: &State, params: &SchemeParams, mesh: &Mesh) -> Result<State> {
    let layout = Layout::new(mesh);
    let dt = params.dt(mesh);
    let uhat_old = element_average(&prev.u, mesh);
    let stiff = stiffness_matrix(mesh);

    // all three components share the scalar operator
    let mut t: Vec<(usize, usize, f64)> = stiff
        .triplets()
        .into_iter()
        .filter(|&(r, c, _)| r % 3 == 0 && c % 3 == 0)
        .map(|(r, c, v)| (r / 3, c / 3, v))
        .collect();
    let mut rhs = vec![Vec3::zeros(); layout.n_free];
    for e in 0..mesh.n_elements() {
        let w = mesh.volume(e) * prev.rho.values[e] / dt;
        let free: Vec<usize> = mesh
            .elem_faces(e)
            .iter()
            .filter_map(|ef| mesh.free_index(ef.face))
            .collect();
        for &i in &free {
            rhs[i] += uhat_old[e] * (w / 4.0);
            for &j in &free {
                t.push((i, j, w / 16.0));
            }
        }
    }
    let a = CsrMatrix::from_triplets(layout.n_free, layout.n_free, &t);
    let lu = SparseLu::new(&a)?;
    let mut next = prev.clone();
    for comp in 0..3 {
        let b: Vec<f64> = rhs.iter().map(|v| v[comp]).collect();
        let x = lu.solve(&b)?;
        for (k, &f) in mesh.interior_faces().iter().enumerate() {
            next.u.dofs[f][comp] = x[k];
        }
    }
    next.u.apply_bc();
    next.step = prev.step + 1;
    next.time = prev.time + dt;
    Ok(next)
}

fn min_density(x: &[f64], n_rho: usize) -> f64 {
    x[..n_rho].iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Continuation over `settings.alpha_schedule`, warm-started from the exact
/// `α = 0` solution, with a positivity-preserving backtracking line search.
/// Returns the state and the number of Newton iterations used.
pub fn homotopy_newton_solve(
    prev: &State,
    params: &SchemeParams,
    mesh: &Mesh,
    settings: &HomotopySettings,
) -> std::result::Result<(State, usize), StepFailure> {
    let fail = |alpha, iteration, residual_norm, reason: String| StepFailure {
        alpha,
        iteration,
        residual_norm,
        reason,
    };
    settings
        .validate()
        .map_err(|e| fail(0.0, 0, f64::NAN, e.to_string()))?;
    let layout = Layout::new(mesh);
    let mut state =
        alpha0_solve(prev, params, mesh).map_err(|e| fail(0.0, 0, f64::NAN, e.to_string()))?;
    let mut iters = 0;

    for &alpha in &settings.alpha_schedule[1..] {
        let eval = |s: &State| alpha_residual(prev, s, alpha, params, mesh);
        let mut r = eval(&state).map_err(|e| fail(alpha, 0, f64::NAN, e.to_string()))?;
        let mut norm = r.norm_inf();
        let mut it = 0;
        while norm > settings.tol {
            if it == settings.max_iter {
                return Err(fail(alpha, it, norm, "Newton budget exhausted".into()));
            }
            it += 1;
            iters += 1;
            let j = assemble_jacobian(prev, &state, alpha, params, mesh)
                .map_err(|e| fail(alpha, it, norm, e.to_string()))?;
            let rhs: Vec<f64> = r.to_vec().iter().map(|v| -v).collect();
            let dx = linear_solve(&j, &rhs).map_err(|e| fail(alpha, it, norm, e.to_string()))?;
            let x = state.to_unknowns(mesh);
            let mut step = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
                if min_density(&trial, layout.n_rho) > 0.0 {
                    let cand = state.with_unknowns(mesh, &trial);
                    if let Ok(rc) = eval(&cand) {
                        let nc = rc.norm_inf();
                        if nc < norm {
                            state = cand;
                            r = rc;
                            norm = nc;
                            break;
                        }
                    }
                }
                step *= settings.backtrack;
                if step < settings.step_floor {
                    return Err(fail(
                        alpha,
                        it,
                        norm,
                        "line search reached its floor".into(),
                    ));
                }
            }
            debug!("alpha {alpha}: iteration {it}, residual {norm:.3e}, step {step}");
        }
    }
    if !(min_density(&state.rho.values, layout.n_rho) > 0.0) {
        return Err(fail(1.0, 0, f64::NAN, "non-positive density".into()));
    }
    Ok((state, iters))
}

/// Solves one step, moving through the fallback schedules until one succeeds.
pub fn solve_step(prev: &State, params: &SchemeParams, mesh: &Mesh) -> Result<(State, SolveStats)> {
    let chain = HomotopySettings::fallback_chain(params)?;
    let mut total = 0;
    let mut last = None;
    for (index, settings) in chain.iter().enumerate() {
        match homotopy_newton_solve(prev, params, mesh, settings) {
            Ok((state, iters)) => {
                return Ok((
                    state,
                    SolveStats {
                        newton_iters: total + iters,
                        alpha_nodes_used: settings.alpha_schedule.len(),
                        schedule_index: index,
                    },
                ));
            }
            Err(f) => {
                debug!("schedule {index} failed: {f}");
                total += f.iteration;
                last = Some(f);
            }
        }
    }
    Err(Error::Solve(last.expect("nonempty fallback chain")))
}
