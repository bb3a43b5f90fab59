//! The fully implicit FEM-DG step: parameters, state, residual and Jacobian.
//!
//! Unknowns are ordered as all element densities (element order) followed by
//! one velocity triple per interior face, in [`Mesh::interior_faces`] order.
//! Boundary faces carry the no-slip constraint and are not unknowns.
//!
//! Every assembly routine takes a homotopy parameter `alpha`: convection,
//! pressure and stabilization are scaled by it, the time derivative and the
//! diffusion are not. `alpha = 1` is the scheme itself.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::diagnostics::{DiagnosticsRow, StepRecorder};
use crate::error::{Error, Result};
use crate::fluxes::{neg, pos, stab_continuity, upwind_momentum, FaceTraces};
use crate::mesh::{Mesh, Vec3};
use crate::quadrature::TetRule;
use crate::spaces::{element_average, interpolate_v, ScalarQField, VelocityCRField};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeParams {
    /// Adiabatic exponent.
    pub gamma: f64,
    /// Pressure constant in `p = a ρ^γ`.
    pub a: f64,
    /// Stabilization exponent; the face weight is `h^{1-ε}`.
    pub epsilon: f64,
    /// Initial density floor factor (`ρ_0 + κh`).
    pub kappa: f64,
    /// `Δt = c h`.
    pub c: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Number of uniform α steps in the last fallback schedule.
    pub homotopy_steps: usize,
    pub face_quad_degree: usize,
    pub elem_quad_degree: usize,
    /// Test hook: evaluates the upwind flux on the downwind side.
    #[doc(hidden)]
    pub mutate_flux_sign: bool,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams {
            gamma: 3.5,
            a: 1.0,
            epsilon: 0.2,
            kappa: 0.01,
            c: 0.5,
            newton_tol: 1e-9,
            newton_max_iter: 50,
            homotopy_steps: 10,
            face_quad_degree: 2,
            elem_quad_degree: 2,
            mutate_flux_sign: false,
        }
    }
}

impl SchemeParams {
    /// Checks every range constraint. Returns warnings for admissible but
    /// theoretically unsupported values.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.gamma > 1.0) {
            return bad(format!("gamma must be > 1, got {}", self.gamma));
        }
        if !(self.a > 0.0) {
            return bad(format!("a must be > 0, got {}", self.a));
        }
        if !(self.epsilon > 1.0 / 6.0) {
            return bad(format!("epsilon must be > 1/6, got {}", self.epsilon));
        }
        if !(self.epsilon < 1.0) {
            return bad(format!("epsilon must be < 1, got {}", self.epsilon));
        }
        if !(self.kappa > 0.0) {
            return bad(format!("kappa must be > 0, got {}", self.kappa));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return bad(format!("c must be a positive number, got {}", self.c));
        }
        if !(self.newton_tol > 0.0) {
            return bad(format!("newton_tol must be > 0, got {}", self.newton_tol));
        }
        if self.newton_max_iter == 0 {
            return bad("newton_max_iter must be >= 1".into());
        }
        if self.homotopy_steps == 0 {
            return bad("homotopy_steps must be >= 1".into());
        }
        if self.face_quad_degree == 0 || self.elem_quad_degree == 0 {
            return bad("quadrature degrees must be >= 1".into());
        }
        let mut warnings = Vec::new();
        if self.gamma <= 3.0 {
            warnings.push(format!(
                "gamma = {} <= 3: the convergence theory requires gamma > 3",
                self.gamma
            ));
        }
        Ok(warnings)
    }

    pub fn dt(&self, mesh: &Mesh) -> f64 {
        self.c * mesh.h()
    }

    /// `h^{1-ε}`
    pub fn h_power(&self, mesh: &Mesh) -> f64 {
        mesh.h().powf(1.0 - self.epsilon)
    }
}

/// `p(ρ) = a ρ^γ`
pub fn pressure(rho: f64, params: &SchemeParams) -> Result<f64> {
    if rho < 0.0 || rho.is_nan() {
        return Err(Error::Domain(format!("pressure of negative density {rho}")));
    }
    Ok(params.a * rho.powf(params.gamma))
}

/// `p'(ρ) = a γ ρ^{γ-1}`
pub fn pressure_derivative(rho: f64, params: &SchemeParams) -> Result<f64> {
    if rho < 0.0 || rho.is_nan() {
        return Err(Error::Domain(format!("pressure of negative density {rho}")));
    }
    Ok(params.a * params.gamma * rho.powf(params.gamma - 1.0))
}

/// `(ρ_h^k, u_h^k)` at `t = k Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub rho: ScalarQField,
    pub u: VelocityCRField,
    pub step: usize,
    pub time: f64,
}

impl State {
    pub fn new(rho: ScalarQField, mut u: VelocityCRField) -> Self {
        u.apply_bc();
        State {
            rho,
            u,
            step: 0,
            time: 0.0,
        }
    }

    pub fn mass(&self, mesh: &Mesh) -> f64 {
        self.rho.integral(mesh)
    }

    /// Flattens into the unknown vector (densities, then interior-face velocities).
    pub fn to_unknowns(&self, mesh: &Mesh) -> Vec<f64> {
        let layout = Layout::new(mesh);
        let mut x = Vec::with_capacity(layout.len());
        x.extend_from_slice(&self.rho.values);
        for &f in mesh.interior_faces() {
            x.extend(self.u.dofs[f].iter());
        }
        x
    }

    /// A copy of `self` with densities and free velocities taken from `x`.
    pub fn with_unknowns(&self, mesh: &Mesh, x: &[f64]) -> State {
        let layout = Layout::new(mesh);
        assert_eq!(x.len(), layout.len());
        let mut s = self.clone();
        s.rho.values.copy_from_slice(&x[..layout.n_rho]);
        for (k, &f) in mesh.interior_faces().iter().enumerate() {
            let b = layout.vel(k, 0);
            s.u.dofs[f] = Vec3::new(x[b], x[b + 1], x[b + 2]);
        }
        s
    }
}

/// Positions of the unknowns in the global vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_rho: usize,
    pub n_free: usize,
}

impl Layout {
    pub fn new(mesh: &Mesh) -> Self {
        Layout {
            n_rho: mesh.n_elements(),
            n_free: mesh.interior_faces().len(),
        }
    }

    pub fn len(&self) -> usize {
        self.n_rho + 3 * self.n_free
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of component `a` of the free face with position `k`.
    pub fn vel(&self, k: usize, a: usize) -> usize {
        self.n_rho + 3 * k + a
    }
}

/// Continuity rows (one per element) and momentum rows (one triple per
/// interior face).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub continuity: Vec<f64>,
    pub momentum: Vec<Vec3>,
}

impl ResidualVector {
    pub fn norm_inf(&self) -> f64 {
        let c = self.continuity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.momentum.iter().fold(c, |m, v| m.max(v.amax()))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.continuity.clone();
        for m in &self.momentum {
            v.extend(m.iter());
        }
        v
    }

    /// Plain sum of the continuity rows. The rows are already integrated over
    /// their elements, so this equals `(mass^k - mass^{k-1}) / Δt`.
    pub fn continuity_sum(&self) -> f64 {
        self.continuity.iter().sum()
    }
}

/// `ρ_h^0 = Π_h^Q(ρ_0 + κh)`, `u_h^0 = Π_h^V[m_0 / (ρ_0 + κh)]` with no-slip.
pub fn initial_state(
    rho0: &dyn Fn(&Vec3) -> f64,
    m0: &dyn Fn(&Vec3) -> Vec3,
    mesh: &Mesh,
    params: &SchemeParams,
) -> Result<State> {
    let floor = params.kappa * mesh.h();
    let rule = TetRule::with_degree(params.elem_quad_degree);
    let mut values = Vec::with_capacity(mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let mut mean = 0.0;
        for (x, w) in rule.map(&mesh.corners(e)) {
            let r = rho0(&x);
            if !(r >= 0.0) {
                return Err(Error::InvalidData(format!(
                    "initial density {r} < 0 at ({}, {}, {})",
                    x.x, x.y, x.z
                )));
            }
            mean += w * r;
        }
        values.push(mean + floor);
    }
    let u = interpolate_v(mesh, |x| m0(x) / (rho0(x) + floor), params.face_quad_degree);
    Ok(State::new(ScalarQField { values }, u))
}

fn check_density(rho: &ScalarQField) -> Result<()> {
    match rho.values.iter().position(|&r| !(r > 0.0)) {
        Some(e) => Err(Error::Domain(format!(
            "non-positive density {} in element {e}",
            rho.values[e]
        ))),
        None => Ok(()),
    }
}

/// Upwind value with the optional mutation: the mutated flux takes the
/// density from the downwind side.
fn upwind(rm: f64, rp: f64, flux: f64, mutate: bool) -> f64 {
    let (a, b) = if mutate { (rp, rm) } else { (rm, rp) };
    a * pos(flux) + b * neg(flux)
}

/// Per-face contributions: the integrated mass flux (towards `E_+`) and the
/// momentum face vector `Φ` paired with `[v̂]`.
#[derive(Debug, Clone, Copy, Default)]
struct FaceTerms {
    mass: f64,
    momentum: Vec3,
}

struct Frame<'a> {
    mesh: &'a Mesh,
    prev: &'a State,
    guess: &'a State,
    params: &'a SchemeParams,
    alpha: f64,
    dt: f64,
    hs: f64,
    uhat: Vec<Vec3>,
    uhat_old: Vec<Vec3>,
}

impl<'a> Frame<'a> {
    fn new(
        prev: &'a State,
        guess: &'a State,
        alpha: f64,
        params: &'a SchemeParams,
        mesh: &'a Mesh,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha = {alpha} outside [0, 1]"
            )));
        }
        check_density(&guess.rho)?;
        Ok(Frame {
            mesh,
            prev,
            guess,
            params,
            alpha,
            dt: params.dt(mesh),
            hs: params.h_power(mesh),
            uhat: element_average(&guess.u, mesh),
            uhat_old: element_average(&prev.u, mesh),
        })
    }

    fn traces(&self, f: usize) -> Option<FaceTraces> {
        let face = self.mesh.face(f);
        let p = face.plus?;
        let m = face.minus;
        let rho = &self.guess.rho.values;
        Some(FaceTraces {
            rho_minus: rho[m],
            rho_plus: rho[p],
            uhat_minus: self.uhat[m],
            uhat_plus: self.uhat[p],
            flux: self.guess.u.dofs[f].dot(&face.normal),
            area: face.area,
            h_power: self.hs,
        })
    }

    fn face_terms(&self, f: usize) -> FaceTerms {
        let Some(t) = self.traces(f) else {
            return FaceTerms::default();
        };
        let up = upwind(
            t.rho_minus,
            t.rho_plus,
            t.flux,
            self.params.mutate_flux_sign,
        );
        let jump = t.jump_rho();
        let avg = (t.uhat_minus + t.uhat_plus) * 0.5;
        FaceTerms {
            mass: self.alpha * (t.area * up - stab_continuity(jump, t.h_power, t.area)),
            momentum: (upwind_momentum(up, t.uhat_minus, t.uhat_plus) * (-t.area)
                + avg * (t.h_power * t.area * jump))
                * self.alpha,
        }
    }

    /// `B_E = |E|(ρ_E û_E − ρ_E^{k-1} û_E^{k-1})/Δt + Σ_Γ s(E,Γ) Φ_Γ`, with
    /// `s = +1` on faces where `E` is `E_+`.
    fn element_b(&self, e: usize, faces: &[FaceTerms]) -> Vec3 {
        let vol = self.mesh.volume(e);
        let rho = self.guess.rho.values[e];
        let rho_old = self.prev.rho.values[e];
        let mut b = (self.uhat[e] * rho - self.uhat_old[e] * rho_old) * (vol / self.dt);
        for ef in self.mesh.elem_faces(e) {
            b -= faces[ef.face].momentum * ef.sign;
        }
        b
    }
}

/// Residual of the α-homotopy system at `guess`.
pub fn assemble_residual(
    prev: &State,
    guess: &State,
    alpha: f64,
    params: &SchemeParams,
    mesh: &Mesh,
) -> Result<ResidualVector> {
    let fr = Frame::new(prev, guess, alpha, params, mesh)?;
    let faces: Vec<FaceTerms> = (0..mesh.n_faces())
        .into_par_iter()
        .map(|f| fr.face_terms(f))
        .collect();

    let continuity: Vec<f64> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let mut r = mesh.volume(e) * (guess.rho.values[e] - prev.rho.values[e]) / fr.dt;
            for ef in mesh.elem_faces(e) {
                r += faces[ef.face].mass * ef.sign;
            }
            r
        })
        .collect();

    struct ElemData {
        b_quarter: Vec3,
        grad: Matrix3<f64>,
        p: f64,
    }
    let elems: Vec<ElemData> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            Ok(ElemData {
                b_quarter: fr.element_b(e, &faces) * 0.25,
                grad: guess.u.element_gradient(mesh, e),
                p: alpha * pressure(guess.rho.values[e], params)?,
            })
        })
        .collect::<Result<_>>()?;

    let momentum: Vec<Vec3> = mesh
        .interior_faces()
        .par_iter()
        .map(|&f| {
            let face = mesh.face(f);
            let mut row = Vec3::zeros();
            for e in [Some(face.minus), face.plus].into_iter().flatten() {
                let i = local_index(mesh, e, f);
                let an = mesh.area_normals(e)[i];
                let d = &elems[e];
                row += d.b_quarter + d.grad * an - an * d.p;
            }
            row
        })
        .collect();

    Ok(ResidualVector {
        continuity,
        momentum,
    })
}

/// Residual of the scheme (`alpha = 1`).
pub fn residual(
    prev: &State,
    guess: &State,
    params: &SchemeParams,
    mesh: &Mesh,
) -> Result<ResidualVector> {
    assemble_residual(prev, guess, 1.0, params, mesh)
}

fn local_index(mesh: &Mesh, e: usize, f: usize) -> usize {
    mesh.elem_faces(e)
        .iter()
        .position(|ef| ef.face == f)
        .expect("face belongs to element")
}

/// Column entries of a 3-row block: `(column, value of the three rows)`.
type BlockColumns = Vec<(usize, Vec3)>;

fn push_identity(cols: &mut BlockColumns, base: usize, scale: f64) {
    for a in 0..3 {
        let mut v = Vec3::zeros();
        v[a] = scale;
        cols.push((base + a, v));
    }
}

fn merge_columns(mut cols: BlockColumns) -> BlockColumns {
    cols.sort_by_key(|c| c.0);
    let mut out: BlockColumns = Vec::with_capacity(cols.len());
    for (c, v) in cols {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => out.push((c, v)),
        }
    }
    out
}

/// Derivatives of the face terms of one interior face.
struct FaceDerivs {
    mass: Vec<(usize, f64)>,
    momentum: BlockColumns,
}

impl Frame<'_> {
    fn face_derivs(&self, f: usize, layout: &Layout) -> Option<FaceDerivs> {
        let t = self.traces(f)?;
        let mesh = self.mesh;
        let face = mesh.face(f);
        let (m, p) = (face.minus, face.plus?);
        let k = mesh.free_index(f)?;
        let mutate = self.params.mutate_flux_sign;
        let (rm, rp, flux) = (t.rho_minus, t.rho_plus, t.flux);
        let (ra, rb) = if mutate { (rp, rm) } else { (rm, rp) };
        let up = ra * pos(flux) + rb * neg(flux);
        let hp = if flux > 0.0 { 1.0 } else { 0.0 };
        let hn = if flux < 0.0 { 1.0 } else { 0.0 };
        let (dup_drm, dup_drp) = if mutate {
            (neg(flux), pos(flux))
        } else {
            (pos(flux), neg(flux))
        };
        let dup_du = face.normal * (ra * hp + rb * hn);
        let scale = self.alpha * t.area;
        let hs = t.h_power;
        let jump = t.jump_rho();

        let mut mass = vec![(m, scale * (dup_drm + hs)), (p, scale * (dup_drp - hs))];
        for a in 0..3 {
            mass.push((layout.vel(k, a), scale * dup_du[a]));
        }

        let avg = (t.uhat_minus + t.uhat_plus) * 0.5;
        let w = t.uhat_minus * (if up > 0.0 { 1.0 } else { 0.0 })
            + t.uhat_plus * (if up < 0.0 { 1.0 } else { 0.0 });
        let mut mom: BlockColumns = vec![
            (m, (-w * dup_drm - avg * hs) * scale),
            (p, (-w * dup_drp + avg * hs) * scale),
        ];
        for b in 0..3 {
            mom.push((layout.vel(k, b), -w * (dup_du[b] * scale)));
        }
        let cm = scale * (-pos(up) + hs * jump * 0.5) * 0.25;
        let cp = scale * (-neg(up) + hs * jump * 0.5) * 0.25;
        for (e, c) in [(m, cm), (p, cp)] {
            for ef in mesh.elem_faces(e) {
                if let Some(g) = mesh.free_index(ef.face) {
                    push_identity(&mut mom, layout.vel(g, 0), c);
                }
            }
        }
        Some(FaceDerivs {
            mass,
            momentum: mom,
        })
    }
}

/// Jacobian of [`assemble_residual`] with respect to the unknowns. The upwind
/// kinks use the one-sided derivatives `d(x⁺)/dx = [x > 0]`,
/// `d(x⁻)/dx = [x < 0]`.
pub fn assemble_jacobian(
    prev: &State,
    guess: &State,
    alpha: f64,
    params: &SchemeParams,
    mesh: &Mesh,
) -> Result<CsrMatrix> {
    let fr = Frame::new(prev, guess, alpha, params, mesh)?;
    let layout = Layout::new(mesh);
    let derivs: Vec<Option<FaceDerivs>> = (0..mesh.n_faces())
        .into_par_iter()
        .map(|f| fr.face_derivs(f, &layout))
        .collect();

    let blocks: Vec<Vec<(usize, usize, f64)>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| -> Result<Vec<(usize, usize, f64)>> {
            let vol = mesh.volume(e);
            let rho = guess.rho.values[e];
            let efs = mesh.elem_faces(e);
            let mut out = Vec::new();

            // continuity row
            out.push((e, e, vol / fr.dt));
            for ef in efs {
                if let Some(d) = &derivs[ef.face] {
                    for &(c, v) in &d.mass {
                        out.push((e, c, ef.sign * v));
                    }
                }
            }

            // dB_E
            let mut db: BlockColumns = vec![(e, fr.uhat[e] * (vol / fr.dt))];
            for ef in efs {
                if let Some(g) = mesh.free_index(ef.face) {
                    push_identity(&mut db, layout.vel(g, 0), vol * rho / (4.0 * fr.dt));
                }
                if let Some(d) = &derivs[ef.face] {
                    for &(c, v) in &d.momentum {
                        db.push((c, -v * ef.sign));
                    }
                }
            }
            let db = merge_columns(db);

            let an = mesh.area_normals(e);
            let dp = alpha * pressure_derivative(rho, params)?;
            for (i, ef) in efs.iter().enumerate() {
                let Some(k) = mesh.free_index(ef.face) else {
                    continue;
                };
                let row = layout.vel(k, 0);
                for &(c, v) in &db {
                    for a in 0..3 {
                        out.push((row + a, c, 0.25 * v[a]));
                    }
                }
                for (j, eg) in efs.iter().enumerate() {
                    if let Some(g) = mesh.free_index(eg.face) {
                        let coef = an[i].dot(&an[j]) / vol;
                        for a in 0..3 {
                            out.push((row + a, layout.vel(g, a), coef));
                        }
                    }
                }
                for a in 0..3 {
                    out.push((row + a, e, -dp * an[i][a]));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let triplets: Vec<_> = blocks.into_iter().flatten().collect();
    Ok(CsrMatrix::from_triplets(
        layout.len(),
        layout.len(),
        &triplets,
    ))
}

/// Jacobian of the scheme (`alpha = 1`).
pub fn jacobian(
    prev: &State,
    guess: &State,
    params: &SchemeParams,
    mesh: &Mesh,
) -> Result<CsrMatrix> {
    assemble_jacobian(prev, guess, 1.0, params, mesh)
}

/// The CR stiffness `∫ ∇_h u : ∇_h v` on the free velocity unknowns.
pub fn stiffness_matrix(mesh: &Mesh) -> CsrMatrix {
    let layout = Layout::new(mesh);
    let mut t = Vec::new();
    for e in 0..mesh.n_elements() {
        let an = mesh.area_normals(e);
        let vol = mesh.volume(e);
        let efs = mesh.elem_faces(e);
        for (i, ef) in efs.iter().enumerate() {
            let Some(k) = mesh.free_index(ef.face) else {
                continue;
            };
            for (j, eg) in efs.iter().enumerate() {
                if let Some(g) = mesh.free_index(eg.face) {
                    let coef = an[i].dot(&an[j]) / vol;
                    for a in 0..3 {
                        t.push((3 * k + a, 3 * g + a, coef));
                    }
                }
            }
        }
    }
    let n = 3 * layout.n_free;
    CsrMatrix::from_triplets(n, n, &t)
}

/// One time step, solved by the homotopy Newton solver.
pub fn time_step(
    prev: &State,
    params: &SchemeParams,
    mesh: &Mesh,
) -> Result<(State, crate::solver::SolveStats)> {
    crate::solver::solve_step(prev, params, mesh)
}

/// Number of steps `M = ⌈T/Δt⌉` (0 for `T = 0`).
pub fn step_count(t_final: f64, dt: f64) -> usize {
    if t_final <= 0.0 {
        0
    } else {
        (t_final / dt - 1e-12).ceil() as usize
    }
}

/// States `k = 0..=M` with their diagnostics rows and solver statistics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub rows: Vec<DiagnosticsRow>,
    pub stats: Vec<crate::solver::SolveStats>,
}

/// Advances `initial` by `steps` time steps. `on_step` sees every state,
/// including the initial one, together with its diagnostics row. A failed
/// step is reported as [`Error::StepFailed`] with its index.
pub fn run(
    mesh: &Mesh,
    params: &SchemeParams,
    initial: State,
    steps: usize,
    on_step: &mut dyn FnMut(&State, &DiagnosticsRow) -> Result<()>,
) -> Result<Trajectory> {
    params.validate()?;
    let (mut recorder, row0) = StepRecorder::start(&initial, params, mesh)?;
    on_step(&initial, &row0)?;
    let mut traj = Trajectory {
        states: vec![initial],
        rows: vec![row0],
        stats: Vec::new(),
    };
    for k in 1..=steps {
        let prev = traj.states.last().expect("initial state");
        let (next, stats) = match time_step(prev, params, mesh) {
            Ok(v) => v,
            Err(Error::Solve(failure)) => return Err(Error::StepFailed { step: k, failure }),
            Err(e) => return Err(e),
        };
        let row = recorder.record(prev, &next, &stats, params, mesh)?;
        on_step(&next, &row)?;
        traj.states.push(next);
        traj.rows.push(row);
        traj.stats.push(stats);
    }
    Ok(traj)
}
