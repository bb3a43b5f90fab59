//! Discrete structure checks: energy ledger and inequality, positivity bound,
//! renormalized continuity inequality, the transport identities with their
//! error functionals `P_1`–`P_4`, and refinement studies.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::error::Result;
use crate::fluxes::{neg, upwind_momentum, upwind_scalar};
use crate::mesh::{build_box_mesh, Mesh, Vec3};
use crate::presets::Preset;
use crate::quadrature::{TetRule, TriangleRule};
use crate::scheme::{pressure, run, step_count, SchemeParams, State};
use crate::solver::SolveStats;
use crate::spaces::{
    broken_divergence, element_average, interpolation_errors, normal_flux, SmoothScalarField,
    SmoothVectorField,
};

/// Energy and the computable numerical dissipation of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyLedger {
    /// `Σ |E| ρ |û|² / 2`
    pub kinetic: f64,
    /// `Σ |E| a ρ^γ / (γ − 1)`
    pub internal: f64,
    /// `Σ |E| |∇_h u|²`
    pub grad_diss: f64,
    /// `Σ_Γ |Γ| |Up(ρu)| |[û]|² / 2`
    pub d2: f64,
    /// `Σ |E| ρ^{k-1} |û^k − û^{k-1}|² / (2Δt)`
    pub d5: f64,
    pub mass: f64,
    pub min_rho: f64,
}

impl EnergyLedger {
    pub fn energy(&self) -> f64 {
        self.kinetic + self.internal
    }

    pub fn dissipation(&self) -> f64 {
        self.grad_diss + self.d2 + self.d5
    }
}

pub fn energy_ledger(
    prev: &State,
    cur: &State,
    params: &SchemeParams,
    mesh: &Mesh,
) -> Result<EnergyLedger> {
    let dt = params.dt(mesh);
    let uhat = element_average(&cur.u, mesh);
    let uhat_old = element_average(&prev.u, mesh);
    let mut l = EnergyLedger {
        min_rho: cur.rho.min(),
        ..Default::default()
    };
    for e in 0..mesh.n_elements() {
        let vol = mesh.volume(e);
        let rho = cur.rho.values[e];
        l.kinetic += vol * rho * uhat[e].norm_squared() / 2.0;
        l.internal += vol * pressure(rho, params)? / (params.gamma - 1.0);
        l.grad_diss += vol * cur.u.element_gradient(mesh, e).norm_squared();
        l.d5 += vol * prev.rho.values[e] * (uhat[e] - uhat_old[e]).norm_squared() / (2.0 * dt);
        l.mass += vol * rho;
    }
    for &f in mesh.interior_faces() {
        let face = mesh.face(f);
        let (m, p) = (face.minus, face.plus.expect("interior face"));
        let up = upwind_scalar(
            cur.rho.values[m],
            cur.rho.values[p],
            cur.u.dofs[f].dot(&face.normal),
        );
        l.d2 += face.area * up.abs() * (uhat[p] - uhat[m]).norm_squared() / 2.0;
    }
    Ok(l)
}

/// Margins `E^0 − (E^m + Δt Σ_{k≤m} (grad_diss^k + D2^k + D5^k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCheck {
    pub margins: Vec<f64>,
    pub passed: bool,
}

/// `ledgers[0]` belongs to the initial state; its dissipation is ignored.
pub fn energy_inequality_check(ledgers: &[EnergyLedger], dt: f64) -> EnergyCheck {
    let Some(first) = ledgers.first() else {
        return EnergyCheck {
            margins: Vec::new(),
            passed: true,
        };
    };
    let e0 = first.energy();
    let mut cum = 0.0;
    let mut margins = vec![0.0];
    for l in &ledgers[1..] {
        cum += dt * l.dissipation();
        margins.push(e0 - (l.energy() + cum));
    }
    let passed = margins.iter().all(|&m| m >= -1e-10 * e0);
    EnergyCheck { margins, passed }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityCheck {
    /// `min ρ^{k-1} / (1 + Δt ‖div_h u^k‖_∞)`
    pub bound: f64,
    /// `min ρ^k − bound`
    pub slack: f64,
    pub passed: bool,
}

pub fn positivity_bound_check(
    prev: &State,
    cur: &State,
    params: &SchemeParams,
    mesh: &Mesh,
) -> PositivityCheck {
    positivity_bound(
        prev.rho.min(),
        cur.rho.min(),
        &broken_divergence(&cur.u, mesh),
        params.dt(mesh),
    )
}

/// The bound evaluated from its ingredients.
pub fn positivity_bound(min_prev: f64, min_cur: f64, div: &[f64], dt: f64) -> PositivityCheck {
    let div_max = div.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let bound = min_prev / (1.0 + dt * div_max);
    let slack = min_cur - bound;
    PositivityCheck {
        bound,
        slack,
        passed: slack >= -1e-12,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenormalizedCheck {
    /// `Σ |E| ((ρ^k)² − (ρ^{k-1})²) / (2Δt)`
    pub lhs: f64,
    /// `−Σ |E| ((ρ^k)²/2) div_h u^k`
    pub rhs: f64,
    pub margin: f64,
    pub passed: bool,
}

/// The renormalized continuity inequality for `B(z) = z²/2` with the
/// nonnegative remainders dropped.
pub fn renormalized_check(
    prev: &State,
    cur: &State,
    params: &SchemeParams,
    mesh: &Mesh,
) -> RenormalizedCheck {
    let dt = params.dt(mesh);
    let div = broken_divergence(&cur.u, mesh);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for e in 0..mesh.n_elements() {
        let vol = mesh.volume(e);
        let (r, r0) = (cur.rho.values[e], prev.rho.values[e]);
        lhs += vol * (r * r - r0 * r0) / (2.0 * dt);
        rhs -= vol * r * r / 2.0 * div[e];
    }
    let margin = rhs - lhs;
    RenormalizedCheck {
        lhs,
        rhs,
        margin,
        passed: margin >= -1e-10 * (1.0 + rhs.abs()),
    }
}

/// Lowest-order face-flux reconstruction `ũ` on element `e`: the field
/// `w + s x` whose outward normal flux on local face `i` is `fluxes[i]`.
/// With `p_i` the vertex opposite face `i`,
/// `ũ(x) = Σ_i fluxes[i] |Γ_i| (x − p_i) / (3|E|)`.
pub fn rt0_value(mesh: &Mesh, e: usize, outward_fluxes: &[f64; 4], x: &Vec3) -> Vec3 {
    let corners = mesh.corners(e);
    let vol = mesh.volume(e);
    let efs = mesh.elem_faces(e);
    (0..4)
        .map(|i| (x - corners[i]) * (outward_fluxes[i] * mesh.face(efs[i].face).area / (3.0 * vol)))
        .sum()
}

fn outward_fluxes(state: &State, mesh: &Mesh, e: usize) -> [f64; 4] {
    let efs = mesh.elem_faces(e);
    std::array::from_fn(|i| {
        let face = mesh.face(efs[i].face);
        state.u.dofs[efs[i].face].dot(&face.normal) * efs[i].sign
    })
}

/// Both sides of the continuity transport identity
/// `Σ_Γ |Γ| Up [φ̂]_Γ = Σ_E ρ_E ∫_E ũ·∇φ + P_1(φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityIdentity {
    pub lhs: f64,
    pub volume: f64,
    pub p1: f64,
}

impl ContinuityIdentity {
    pub fn relative_residual(&self) -> f64 {
        (self.lhs - self.volume - self.p1).abs() / (1.0 + self.lhs.abs())
    }
}

/// Both sides of the momentum transport identity
/// `Σ_Γ |Γ| Up(ρu⊗û)·[Π̂v]_Γ = Σ_E ρ_E ∫_E (ũ·∇)v·û_E + P_2 + P_3 + P_4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumIdentity {
    pub lhs: f64,
    pub volume: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

impl MomentumIdentity {
    pub fn relative_residual(&self) -> f64 {
        (self.lhs - self.volume - self.p2 - self.p3 - self.p4).abs() / (1.0 + self.lhs.abs())
    }
}

struct Averages<T> {
    elem: Vec<T>,
    face: Vec<T>,
}

fn averages<T, F>(mesh: &Mesh, f: F, degree: usize) -> Averages<T>
where
    T: Copy + Send + std::iter::Sum<T> + std::ops::Mul<f64, Output = T>,
    F: Fn(&Vec3) -> T + Sync,
{
    let tet = TetRule::with_degree(degree);
    let tri = TriangleRule::with_degree(degree);
    Averages {
        elem: (0..mesh.n_elements())
            .into_par_iter()
            .map(|e| tet.map(&mesh.corners(e)).map(|(x, w)| f(&x) * w).sum())
            .collect(),
        face: (0..mesh.n_faces())
            .into_par_iter()
            .map(|k| tri.map(&mesh.face_corners(k)).map(|(x, w)| f(&x) * w).sum())
            .collect(),
    }
}

fn identity_degree(params: &SchemeParams) -> usize {
    params.elem_quad_degree.max(params.face_quad_degree).max(2)
}

pub fn transport_identity_continuity(
    state: &State,
    phi: &dyn SmoothScalarField,
    mesh: &Mesh,
    params: &SchemeParams,
) -> ContinuityIdentity {
    let degree = identity_degree(params);
    let avg = averages(mesh, |x| phi.value(x), degree);
    let flux = normal_flux(&state.u, mesh);
    let rho = &state.rho.values;

    let lhs: f64 = mesh
        .interior_faces()
        .iter()
        .map(|&f| {
            let face = mesh.face(f);
            let (m, p) = (face.minus, face.plus.unwrap());
            let up = upwind_scalar(rho[m], rho[p], flux.values[f]);
            face.area * up * (avg.elem[p] - avg.elem[m])
        })
        .sum();

    let rule = TetRule::with_degree(degree);
    let (volume, p1) = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let fl = outward_fluxes(state, mesh, e);
            let vol = mesh.volume(e);
            let volume = rho[e]
                * vol
                * rule
                    .map(&mesh.corners(e))
                    .map(|(x, w)| w * rt0_value(mesh, e, &fl, &x).dot(&phi.gradient(&x)))
                    .sum::<f64>();
            let mut p1 = 0.0;
            for (i, ef) in mesh.elem_faces(e).iter().enumerate() {
                let face = mesh.face(ef.face);
                if let Some(nb) = face.neighbor_of(e) {
                    p1 += face.area
                        * (rho[e] - rho[nb])
                        * neg(fl[i])
                        * (avg.elem[e] - avg.face[ef.face]);
                }
            }
            (volume, p1)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));

    ContinuityIdentity { lhs, volume, p1 }
}

pub fn transport_identity_momentum(
    state: &State,
    v: &dyn SmoothVectorField,
    mesh: &Mesh,
    params: &SchemeParams,
) -> MomentumIdentity {
    let degree = identity_degree(params);
    let avg = averages(mesh, |x| v.value(x), degree);
    // Π̂v: element mean of the CR interpolant, i.e. the mean of its face averages
    let pi_hat: Vec<Vec3> = (0..mesh.n_elements())
        .map(|e| {
            mesh.elem_faces(e)
                .iter()
                .map(|ef| avg.face[ef.face])
                .sum::<Vec3>()
                * 0.25
        })
        .collect();
    let flux = normal_flux(&state.u, mesh);
    let uhat = element_average(&state.u, mesh);
    let div = broken_divergence(&state.u, mesh);
    let rho = &state.rho.values;

    let lhs: f64 = mesh
        .interior_faces()
        .iter()
        .map(|&f| {
            let face = mesh.face(f);
            let (m, p) = (face.minus, face.plus.unwrap());
            let up = upwind_scalar(rho[m], rho[p], flux.values[f]);
            face.area * upwind_momentum(up, uhat[m], uhat[p]).dot(&(pi_hat[p] - pi_hat[m]))
        })
        .sum();

    let rule = TetRule::with_degree(degree);
    let parts: Vec<[f64; 4]> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let fl = outward_fluxes(state, mesh, e);
            let vol = mesh.volume(e);
            // ∫ ũ_i û_j ∂_i v_j = ∫ ûᵀ (∇v) ũ with (∇v)[(j, i)] = ∂_i v_j
            let volume = rho[e]
                * vol
                * rule
                    .map(&mesh.corners(e))
                    .map(|(x, w)| {
                        let jac: Matrix3<f64> = v.jacobian(&x);
                        w * uhat[e].dot(&(jac * rt0_value(mesh, e, &fl, &x)))
                    })
                    .sum::<f64>();
            let (mut p2, mut p3) = (0.0, 0.0);
            for (i, ef) in mesh.elem_faces(e).iter().enumerate() {
                let face = mesh.face(ef.face);
                if let Some(nb) = face.neighbor_of(e) {
                    let d = pi_hat[e] - avg.face[ef.face];
                    let w = face.area * neg(fl[i]);
                    p2 += w * (rho[e] - rho[nb]) * uhat[e].dot(&d);
                    p3 += w * rho[nb] * (uhat[e] - uhat[nb]).dot(&d);
                }
            }
            // ∫_E (Π^V v − v) = |E| (Π̂v_E − mean_E v)
            let p4 = -rho[e] * div[e] * uhat[e].dot(&((pi_hat[e] - avg.elem[e]) * vol));
            [volume, p2, p3, p4]
        })
        .collect();
    let mut s = [0.0; 4];
    for p in parts {
        for k in 0..4 {
            s[k] += p[k];
        }
    }
    MomentumIdentity {
        lhs,
        volume: s[0],
        p2: s[1],
        p3: s[2],
        p4: s[3],
    }
}

/// `[P_1(φ), P_2(v), P_3(v), P_4(v)]` at one state.
pub fn p_functionals(
    state: &State,
    phi: &dyn SmoothScalarField,
    v: &dyn SmoothVectorField,
    mesh: &Mesh,
    params: &SchemeParams,
) -> [f64; 4] {
    let c = transport_identity_continuity(state, phi, mesh, params);
    let m = transport_identity_momentum(state, v, mesh, params);
    [c.p1, m.p2, m.p3, m.p4]
}

/// One CSV row of per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub t: f64,
    pub ledger: EnergyLedger,
    pub energy_margin: f64,
    pub positivity_slack: f64,
    pub newton_iters: usize,
    pub alpha_nodes_used: usize,
}

impl DiagnosticsRow {
    pub const HEADER: [&'static str; 13] = [
        "step",
        "t",
        "mass",
        "kinetic",
        "internal",
        "grad_diss",
        "D2",
        "D5",
        "min_rho",
        "energy_margin",
        "positivity_slack",
        "newton_iters",
        "alpha_nodes_used",
    ];

    pub fn fields(&self) -> [String; 13] {
        let l = &self.ledger;
        let g = |v: f64| format!("{v:.17e}");
        [
            self.step.to_string(),
            g(self.t),
            g(l.mass),
            g(l.kinetic),
            g(l.internal),
            g(l.grad_diss),
            g(l.d2),
            g(l.d5),
            g(l.min_rho),
            g(self.energy_margin),
            g(self.positivity_slack),
            self.newton_iters.to_string(),
            self.alpha_nodes_used.to_string(),
        ]
    }
}

/// Accumulates the energy margin along a run.
#[derive(Debug, Clone)]
pub struct StepRecorder {
    e0: f64,
    dissipated: f64,
    dt: f64,
}

impl StepRecorder {
    pub fn start(
        initial: &State,
        params: &SchemeParams,
        mesh: &Mesh,
    ) -> Result<(Self, DiagnosticsRow)> {
        let ledger = energy_ledger(initial, initial, params, mesh)?;
        let ledger = EnergyLedger { d5: 0.0, ..ledger };
        let rec = StepRecorder {
            e0: ledger.energy(),
            dissipated: 0.0,
            dt: params.dt(mesh),
        };
        let row = DiagnosticsRow {
            step: initial.step,
            t: initial.time,
            ledger,
            energy_margin: 0.0,
            positivity_slack: 0.0,
            newton_iters: 0,
            alpha_nodes_used: 0,
        };
        Ok((rec, row))
    }

    pub fn record(
        &mut self,
        prev: &State,
        cur: &State,
        stats: &SolveStats,
        params: &SchemeParams,
        mesh: &Mesh,
    ) -> Result<DiagnosticsRow> {
        let ledger = energy_ledger(prev, cur, params, mesh)?;
        self.dissipated += self.dt * ledger.dissipation();
        Ok(DiagnosticsRow {
            step: cur.step,
            t: cur.time,
            ledger,
            energy_margin: self.e0 - (ledger.energy() + self.dissipated),
            positivity_slack: positivity_bound_check(prev, cur, params, mesh).slack,
            newton_iters: stats.newton_iters,
            alpha_nodes_used: stats.alpha_nodes_used,
        })
    }
}

/// `‖f_coarse − f_fine‖_{L²((0,T)×Ω)}` for two trajectories on nested meshes,
/// each extended piecewise constantly in time (`ρ(t) = ρ^k` on
/// `((k−1)Δt, kΔt]`).
pub fn cauchy_difference(
    coarse: (&Mesh, &[State], f64),
    fine: (&Mesh, &[State], f64),
    t_final: f64,
) -> f64 {
    let (mc, sc, dtc) = coarse;
    let (mf, sf, dtf) = fine;
    let inject: Vec<usize> = (0..mf.n_elements())
        .map(|e| mc.locate(&mf.centroid(e)).expect("nested meshes"))
        .collect();
    let mut breaks: Vec<f64> = (1..sc.len()).map(|k| k as f64 * dtc).collect();
    breaks.extend((1..sf.len()).map(|k| k as f64 * dtf));
    breaks.push(0.0);
    breaks.push(t_final);
    breaks.retain(|&t| t <= t_final);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_final.max(1.0));

    let level = |t: f64, dt: f64, n: usize| ((t / dt).ceil() as usize).clamp(1, n - 1);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let (kc, kf) = (level(mid, dtc, sc.len()), level(mid, dtf, sf.len()));
        let (rc, rf) = (&sc[kc].rho.values, &sf[kf].rho.values);
        let s: f64 = (0..mf.n_elements())
            .map(|e| mf.volume(e) * (rf[e] - rc[inject[e]]).powi(2))
            .sum();
        total += len * s;
    }
    total.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyStudy {
    pub ns: Vec<usize>,
    /// `differences[i]` compares `ns[i]` with `ns[i + 1]`.
    pub differences: Vec<f64>,
    pub strictly_decreasing: bool,
}

/// Runs `preset` to `t_final` on each `n` and measures successive
/// differences. `ns` must be successive doublings.
pub fn cauchy_convergence_study(
    preset: &Preset,
    params: &SchemeParams,
    ns: &[usize],
    t_final: f64,
) -> Result<CauchyStudy> {
    let mut runs = Vec::new();
    for &n in ns {
        let mesh = build_box_mesh(n, preset.domain)?;
        let init = preset.initial_state(&mesh, params)?;
        let steps = step_count(t_final, params.dt(&mesh));
        let traj = run(&mesh, params, init, steps, &mut |_, _| Ok(()))?;
        let dt = params.dt(&mesh);
        runs.push((mesh, traj.states, dt));
    }
    let differences: Vec<f64> = runs
        .windows(2)
        .map(|w| {
            cauchy_difference(
                (&w[0].0, &w[0].1, w[0].2),
                (&w[1].0, &w[1].1, w[1].2),
                t_final,
            )
        })
        .collect();
    let strictly_decreasing = differences.windows(2).all(|w| w[1] < w[0]);
    Ok(CauchyStudy {
        ns: ns.to_vec(),
        differences,
        strictly_decreasing,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PDecayStudy {
    pub ns: Vec<usize>,
    pub h: Vec<f64>,
    /// `magnitudes[j][i] = ∫_0^T |P_{i+1}|` on mesh `ns[j]`.
    pub magnitudes: Vec<[f64; 4]>,
    /// Observed `log₂` rates between successive meshes.
    pub rates: Vec<[f64; 4]>,
    pub monotone: bool,
}

/// `∫_0^T |P_i| dt` along a trajectory `states[k]` at `t = kΔt`, with the
/// state extended piecewise constantly in time (`ρ_h(t) = ρ^k` on
/// `((k−1)Δt, kΔt]`).
pub fn p_magnitudes(
    states: &[State],
    mesh: &Mesh,
    params: &SchemeParams,
    t_final: f64,
    phi: &dyn SmoothScalarField,
    v: &dyn SmoothVectorField,
) -> [f64; 4] {
    let dt = params.dt(mesh);
    let mut acc = [0.0; 4];
    for (k, state) in states.iter().enumerate().skip(1) {
        let weight = dt.min(t_final - (k - 1) as f64 * dt);
        if weight <= 0.0 {
            break;
        }
        let p = p_functionals(state, phi, v, mesh, params);
        for i in 0..4 {
            acc[i] += weight * p[i].abs();
        }
    }
    acc
}

/// Summarizes `magnitudes[j]` measured on meshes `ns[j]` with sizes `h[j]`.
pub fn p_decay_table(ns: &[usize], h: &[f64], magnitudes: Vec<[f64; 4]>) -> PDecayStudy {
    let rates: Vec<[f64; 4]> = magnitudes
        .windows(2)
        .map(|w| std::array::from_fn(|i| (w[0][i] / w[1][i]).log2()))
        .collect();
    let monotone = magnitudes
        .windows(2)
        .all(|w| (0..4).all(|i| w[1][i] < w[0][i]));
    PDecayStudy {
        ns: ns.to_vec(),
        h: h.to_vec(),
        magnitudes,
        rates,
        monotone,
    }
}

/// Time-integrated magnitudes of the error functionals along runs of
/// `preset` on each mesh.
pub fn p_decay_study(
    preset: &Preset,
    params: &SchemeParams,
    ns: &[usize],
    t_final: f64,
    phi: &dyn SmoothScalarField,
    v: &dyn SmoothVectorField,
) -> Result<PDecayStudy> {
    let mut magnitudes = Vec::new();
    let mut h = Vec::new();
    for &n in ns {
        let mesh = build_box_mesh(n, preset.domain)?;
        let init = preset.initial_state(&mesh, params)?;
        let steps = step_count(t_final, params.dt(&mesh));
        let traj = run(&mesh, params, init, steps, &mut |_, _| Ok(()))?;
        magnitudes.push(p_magnitudes(&traj.states, &mesh, params, t_final, phi, v));
        h.push(mesh.h());
    }
    Ok(p_decay_table(ns, &h, magnitudes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatesStudy {
    pub ns: Vec<usize>,
    pub h: Vec<f64>,
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    /// `log₂` ratios between successive meshes.
    pub l2_rates: Vec<f64>,
    pub h1_rates: Vec<f64>,
}

/// Interpolation errors of `Π_h^V v` over a refinement sequence.
pub fn interpolation_rate_study(
    v: &dyn SmoothVectorField,
    preset_domain: crate::mesh::BoxDomain,
    ns: &[usize],
    face_degree: usize,
    elem_degree: usize,
) -> Result<RatesStudy> {
    let mut out = RatesStudy {
        ns: ns.to_vec(),
        h: Vec::new(),
        l2: Vec::new(),
        h1: Vec::new(),
        l2_rates: Vec::new(),
        h1_rates: Vec::new(),
    };
    for &n in ns {
        let mesh = build_box_mesh(n, preset_domain)?;
        let (l2, h1) = interpolation_errors(v, &mesh, face_degree, elem_degree);
        out.h.push(mesh.h());
        out.l2.push(l2);
        out.h1.push(h1);
    }
    let rate = |e: &[f64], h: &[f64]| -> Vec<f64> {
        (1..e.len())
            .map(|k| (e[k - 1] / e[k]).ln() / (h[k - 1] / h[k]).ln())
            .collect()
    };
    out.l2_rates = rate(&out.l2, &out.h);
    out.h1_rates = rate(&out.h1, &out.h);
    Ok(out)
}

/// `φ(x) = (1 + x) sin(πx) sin(πy) sin(πz)`: smooth, vanishing on the unit
/// cube's boundary and without reflection symmetry.
#[derive(Debug, Clone, Copy, Default)]
pub struct SineBump;

impl SmoothScalarField for SineBump {
    fn value(&self, x: &Vec3) -> f64 {
        use std::f64::consts::PI;
        (1.0 + x.x) * (PI * x.x).sin() * (PI * x.y).sin() * (PI * x.z).sin()
    }

    fn gradient(&self, x: &Vec3) -> Vec3 {
        use std::f64::consts::PI;
        let (sx, sy, sz) = ((PI * x.x).sin(), (PI * x.y).sin(), (PI * x.z).sin());
        let (cx, cy, cz) = ((PI * x.x).cos(), (PI * x.y).cos(), (PI * x.z).cos());
        let a = 1.0 + x.x;
        Vec3::new(
            (sx + a * PI * cx) * sy * sz,
            a * sx * PI * cy * sz,
            a * sx * sy * PI * cz,
        )
    }
}

/// `v = (s, s(1 + y), s(2 − z))` with `s(x) = sin(πx) sin(πy) sin(πz)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SineVector;

impl SineVector {
    fn parts(x: &Vec3) -> (f64, Vec3) {
        use std::f64::consts::PI;
        let (sx, sy, sz) = ((PI * x.x).sin(), (PI * x.y).sin(), (PI * x.z).sin());
        let (cx, cy, cz) = ((PI * x.x).cos(), (PI * x.y).cos(), (PI * x.z).cos());
        (
            sx * sy * sz,
            Vec3::new(PI * cx * sy * sz, PI * sx * cy * sz, PI * sx * sy * cz),
        )
    }
}

impl SmoothVectorField for SineVector {
    fn value(&self, x: &Vec3) -> Vec3 {
        let (s, _) = Self::parts(x);
        Vec3::new(s, s * (1.0 + x.y), s * (2.0 - x.z))
    }

    fn jacobian(&self, x: &Vec3) -> Matrix3<f64> {
        let (s, g) = Self::parts(x);
        let r0 = g;
        let r1 = g * (1.0 + x.y) + Vec3::new(0.0, s, 0.0);
        let r2 = g * (2.0 - x.z) - Vec3::new(0.0, 0.0, s);
        Matrix3::from_rows(&[r0.transpose(), r1.transpose(), r2.transpose()])
    }
}

/// `v = φ d` for a scalar field `φ` and a fixed direction `d`.
#[derive(Debug, Clone, Copy)]
pub struct Directed<S> {
    pub scalar: S,
    pub direction: Vec3,
}

impl<S: SmoothScalarField> SmoothVectorField for Directed<S> {
    fn value(&self, x: &Vec3) -> Vec3 {
        self.direction * self.scalar.value(x)
    }

    fn jacobian(&self, x: &Vec3) -> Matrix3<f64> {
        self.direction * self.scalar.gradient(x).transpose()
    }
}
