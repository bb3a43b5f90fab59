//! Independent re-implementations of the discrete operators and the invariant
//! suite behind `nsfemdg check`.
//!
//! The oracles only read the vertex coordinates, the tetrahedra and the face
//! numbering of the velocity dofs from the mesh. Neighbors, normals, areas,
//! volumes and the P1 reconstruction of CR fields are recomputed here by brute
//! force.

use nalgebra::{Matrix3, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use crate::diagnostics::{transport_identity_continuity, transport_identity_momentum};
use crate::error::{Error, Result};
use crate::mesh::{build_box_mesh, BoxDomain, Mesh, Vec3};
use crate::scheme::{jacobian, residual, SchemeParams, State};
use crate::spaces::{
    broken_h1_seminorm, commuting_residual, cr_orthogonality_residual, h1_seminorm,
    QuadraticScalar, QuadraticVector, ScalarQField, VelocityCRField,
};

fn sorted3(mut t: [usize; 3]) -> [usize; 3] {
    t.sort_unstable();
    t
}

/// Vertex triple of local face `i` (the one opposite local vertex `i`).
fn local_triple(tet: &[usize; 4], i: usize) -> [usize; 3] {
    let mut t = [0; 3];
    let mut k = 0;
    for (j, &v) in tet.iter().enumerate() {
        if j != i {
            t[k] = v;
            k += 1;
        }
    }
    sorted3(t)
}

struct OracleFace {
    dof: usize,
    area: f64,
    /// Unit normal pointing out of the element.
    outward: Vec3,
    neighbor: Option<usize>,
}

/// Geometry rebuilt from vertex coordinates only.
struct Geometry {
    volume: Vec<f64>,
    centroid: Vec<Vec3>,
    faces: Vec<[OracleFace; 4]>,
    /// Inverse Vandermonde matrix mapping face-centroid values to `(a, g)` of
    /// `a + g·x`.
    vandermonde_inv: Vec<Matrix4<f64>>,
    h: f64,
}

impl Geometry {
    fn new(mesh: &Mesh) -> Result<Self> {
        let verts = mesh.vertices();
        let tets = mesh.tets();
        let dof_of: HashMap<[usize; 3], usize> = mesh
            .faces()
            .iter()
            .enumerate()
            .map(|(k, f)| (sorted3(f.vertices), k))
            .collect();

        let mut volume = Vec::with_capacity(tets.len());
        let mut centroid = Vec::with_capacity(tets.len());
        let mut faces = Vec::with_capacity(tets.len());
        let mut vandermonde_inv = Vec::with_capacity(tets.len());
        let mut h: f64 = 0.0;
        for (e, tet) in tets.iter().enumerate() {
            let p = tet.map(|v| verts[v]);
            let vol = ((p[1] - p[0]).cross(&(p[2] - p[0])))
                .dot(&(p[3] - p[0]))
                .abs()
                / 6.0;
            let c = (p[0] + p[1] + p[2] + p[3]) / 4.0;
            for a in 0..4 {
                for b in a + 1..4 {
                    h = h.max((p[a] - p[b]).norm());
                }
            }
            let mut local = Vec::with_capacity(4);
            let mut vand = Matrix4::zeros();
            for i in 0..4 {
                let tri = local_triple(tet, i);
                let q = tri.map(|v| verts[v]);
                let cross = (q[1] - q[0]).cross(&(q[2] - q[0]));
                let area = cross.norm() / 2.0;
                let mut n = cross / cross.norm();
                if n.dot(&(q[0] - p[i])) < 0.0 {
                    n = -n;
                }
                let fc = (q[0] + q[1] + q[2]) / 3.0;
                // brute-force neighbor search
                let neighbor = tets
                    .iter()
                    .enumerate()
                    .find(|&(o, t)| o != e && (0..4).any(|j| local_triple(t, j) == tri))
                    .map(|(o, _)| o);
                let dof = *dof_of.get(&tri).ok_or_else(|| {
                    Error::InvalidMesh(format!("face {tri:?} of element {e} is not numbered"))
                })?;
                vand.set_row(i, &Vector4::new(1.0, fc.x, fc.y, fc.z).transpose());
                local.push(OracleFace {
                    dof,
                    area,
                    outward: n,
                    neighbor,
                });
            }
            let inv = vand
                .try_inverse()
                .ok_or_else(|| Error::InvalidMesh(format!("element {e} is degenerate")))?;
            volume.push(vol);
            centroid.push(c);
            faces.push(
                <[OracleFace; 4]>::try_from(local).unwrap_or_else(|_| unreachable!("four faces")),
            );
            vandermonde_inv.push(inv);
        }
        Ok(Geometry {
            volume,
            centroid,
            faces,
            vandermonde_inv,
            h,
        })
    }

    /// `(value at the centroid, gradient)` of the P1 function with the given
    /// face-centroid values on element `e`, one column per component.
    fn reconstruct(&self, e: usize, values: &[Vec3; 4]) -> (Vec3, Matrix3<f64>) {
        let inv = &self.vandermonde_inv[e];
        let mut mean = Vec3::zeros();
        let mut grad = Matrix3::zeros();
        for a in 0..3 {
            let coef = inv * Vector4::from_fn(|i, _| values[i][a]);
            let g = Vec3::new(coef[1], coef[2], coef[3]);
            mean[a] = coef[0] + g.dot(&self.centroid[e]);
            grad.set_row(a, &g.transpose());
        }
        (mean, grad)
    }

    fn face_values(&self, u: &VelocityCRField, e: usize) -> [Vec3; 4] {
        [0, 1, 2, 3].map(|i| u.dofs[self.faces[e][i].dof])
    }
}

fn pressure_of(rho: f64, params: &SchemeParams) -> f64 {
    params.a * rho.powf(params.gamma)
}

/// Continuity rows recomputed element by element from the finite-volume
/// stencil: time difference, outward upwind fluxes and `−h^{1−ε}|Γ|(ρ_nb − ρ_E)`.
pub fn continuity_oracle(
    prev: &State,
    guess: &State,
    params: &SchemeParams,
    mesh: &Mesh,
) -> Result<Vec<f64>> {
    let g = Geometry::new(mesh)?;
    let dt = params.c * g.h;
    let hs = g.h.powf(1.0 - params.epsilon);
    let rho = &guess.rho.values;
    Ok((0..g.volume.len())
        .map(|e| {
            let mut r = g.volume[e] * (rho[e] - prev.rho.values[e]) / dt;
            for face in &g.faces[e] {
                let Some(nb) = face.neighbor else { continue };
                let flux = guess.u.dofs[face.dof].dot(&face.outward);
                let out = if flux > 0.0 {
                    rho[e] * flux
                } else {
                    rho[nb] * flux
                };
                r += face.area * out;
                r -= hs * face.area * (rho[nb] - rho[e]);
            }
            r
        })
        .collect())
}

/// Momentum rows recomputed by testing against every CR basis function in
/// turn and summing over all elements and all interior faces.
pub fn momentum_oracle(
    prev: &State,
    guess: &State,
    params: &SchemeParams,
    mesh: &Mesh,
) -> Result<Vec<Vec3>> {
    let g = Geometry::new(mesh)?;
    let ne = g.volume.len();
    let dt = params.c * g.h;
    let hs = g.h.powf(1.0 - params.epsilon);
    let rho = &guess.rho.values;
    let rho_old = &prev.rho.values;

    let recon: Vec<(Vec3, Matrix3<f64>)> = (0..ne)
        .map(|e| g.reconstruct(e, &g.face_values(&guess.u, e)))
        .collect();
    let uhat_old: Vec<Vec3> = (0..ne)
        .map(|e| g.reconstruct(e, &g.face_values(&prev.u, e)).0)
        .collect();

    // interior faces once each, oriented from the lower to the higher element index
    struct Pair {
        minus: usize,
        plus: usize,
        area: f64,
        normal: Vec3,
        dof: usize,
    }
    let mut pairs = Vec::new();
    for e in 0..ne {
        for face in &g.faces[e] {
            if let Some(nb) = face.neighbor {
                if e < nb {
                    pairs.push(Pair {
                        minus: e,
                        plus: nb,
                        area: face.area,
                        normal: face.outward,
                        dof: face.dof,
                    });
                }
            }
        }
    }

    let free: Vec<usize> = (0..mesh.n_faces())
        .filter(|&f| pairs.iter().any(|p| p.dof == f))
        .collect();
    let mut rows = Vec::with_capacity(free.len());
    for &f in &free {
        let mut row = Vec3::zeros();
        for a in 0..3 {
            let mut basis = VelocityCRField::zeros(mesh);
            basis.dofs[f][a] = 1.0;
            let test: Vec<(Vec3, Matrix3<f64>)> = (0..ne)
                .map(|e| g.reconstruct(e, &g.face_values(&basis, e)))
                .collect();
            let mut val = 0.0;
            for e in 0..ne {
                let (vhat, gv) = &test[e];
                let (uhat, gu) = &recon[e];
                let vol = g.volume[e];
                val += vol * (uhat * rho[e] - uhat_old[e] * rho_old[e]).dot(vhat) / dt;
                val += vol * gu.component_mul(gv).sum();
                val -= vol * pressure_of(rho[e], params) * gv.trace();
            }
            for p in &pairs {
                let (m, q) = (p.minus, p.plus);
                let flux = guess.u.dofs[p.dof].dot(&p.normal);
                let up = rho[m] * flux.max(0.0) + rho[q] * flux.min(0.0);
                let carried = if up > 0.0 {
                    recon[m].0 * up
                } else {
                    recon[q].0 * up
                };
                let jump_v = test[q].0 - test[m].0;
                let avg = (recon[m].0 + recon[q].0) * 0.5;
                val -= p.area * carried.dot(&jump_v);
                val += hs * p.area * (rho[q] - rho[m]) * avg.dot(&jump_v);
            }
            row[a] = val;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Largest row-wise differences between the assembled residual and the oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleComparison {
    pub continuity: f64,
    pub momentum: f64,
}

pub fn compare_with_oracles(
    prev: &State,
    guess: &State,
    params: &SchemeParams,
    mesh: &Mesh,
) -> Result<OracleComparison> {
    let r = residual(prev, guess, params, mesh)?;
    let c = continuity_oracle(prev, guess, params, mesh)?;
    let m = momentum_oracle(prev, guess, params, mesh)?;
    if m.len() != r.momentum.len() {
        return Err(Error::InvalidMesh(format!(
            "oracle found {} free faces, assembly {}",
            m.len(),
            r.momentum.len()
        )));
    }
    let dc = c
        .iter()
        .zip(&r.continuity)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, nan_max);
    let dm = m
        .iter()
        .zip(&r.momentum)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, nan_max);
    Ok(OracleComparison {
        continuity: dc,
        momentum: dm,
    })
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// `max |J − J_fd| / max |J|` with central differences of step `delta`.
pub fn jacobian_probe(
    prev: &State,
    guess: &State,
    params: &SchemeParams,
    mesh: &Mesh,
    delta: f64,
) -> Result<f64> {
    let jac = jacobian(prev, guess, params, mesh)?.to_dense();
    let x = guess.to_unknowns(mesh);
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for j in 0..x.len() {
        let step = delta * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let rp = residual(prev, &guess.with_unknowns(mesh, &xp), params, mesh)?.to_vec();
        let rm = residual(prev, &guess.with_unknowns(mesh, &xm), params, mesh)?.to_vec();
        for i in 0..x.len() {
            let fd = (rp[i] - rm[i]) / (2.0 * step);
            err = nan_max(err, (fd - jac[i][j]).abs());
            scale = scale.max(jac[i][j].abs());
        }
    }
    Ok(err / scale.max(f64::MIN_POSITIVE))
}

/// A random state with densities in `[0.5, 1.5]`, no-slip velocity dofs in
/// `[−1, 1]³`, and `|ũ·ν| ≥ min_flux` on every interior face.
pub fn random_state(mesh: &Mesh, rng: &mut impl Rng, min_flux: f64) -> State {
    let rho = ScalarQField {
        values: (0..mesh.n_elements())
            .map(|_| rng.random_range(0.5..1.5))
            .collect(),
    };
    let mut u = VelocityCRField::zeros(mesh);
    for &f in mesh.interior_faces() {
        let n = mesh.face(f).normal;
        loop {
            let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            if v.dot(&n).abs() >= min_flux {
                u.dofs[f] = v;
                break;
            }
        }
    }
    State::new(rho, u)
}

pub fn random_quadratic_vector(rng: &mut impl Rng) -> QuadraticVector {
    QuadraticVector {
        components: [0, 1, 2].map(|_| random_quadratic(rng)),
    }
}

pub fn random_quadratic(rng: &mut impl Rng) -> QuadraticScalar {
    let mut r = || rng.random_range(-1.0..1.0);
    QuadraticScalar::new(r(), Vec3::new(r(), r(), r()), Matrix3::from_fn(|_, _| r()))
}

fn random_linear(rng: &mut impl Rng) -> QuadraticScalar {
    let mut r = || rng.random_range(-1.0..1.0);
    QuadraticScalar::linear(r(), Vec3::new(r(), r(), r()))
}

/// Constant, linear and quadratic scalar test functions.
pub fn polynomial_scalars(rng: &mut impl Rng) -> Vec<(&'static str, QuadraticScalar)> {
    vec![
        (
            "constant",
            QuadraticScalar::constant(rng.random_range(-1.0..1.0)),
        ),
        ("linear", random_linear(rng)),
        ("quadratic", random_quadratic(rng)),
    ]
}

/// Constant, linear and quadratic vector test functions.
pub fn polynomial_vectors(rng: &mut impl Rng) -> Vec<(&'static str, QuadraticVector)> {
    vec![
        (
            "constant",
            QuadraticVector::constant(Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))),
        ),
        (
            "linear",
            QuadraticVector {
                components: [0, 1, 2].map(|_| random_linear(rng)),
            },
        ),
        ("quadratic", random_quadratic_vector(rng)),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
}

impl CheckEntry {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(CheckEntry::passed)
    }

    fn push(&mut self, name: String, value: f64, tolerance: f64) {
        self.entries.push(CheckEntry {
            name,
            value,
            tolerance,
        });
    }
}

/// Degree used for interpolating and projecting quadratic test data.
fn check_degree(params: &SchemeParams) -> usize {
    params.face_quad_degree.max(params.elem_quad_degree).max(2)
}

/// Runs the invariant suite on the unit cube with `n` cells per axis for each
/// `n` in `ns`. The Jacobian probe always runs on `n = 1`.
pub fn run_check_suite(params: &SchemeParams, ns: &[usize], seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::default();
    let degree = check_degree(params);

    for &n in ns {
        let mesh = build_box_mesh(n, BoxDomain::unit())?;

        let worst = (0..10)
            .map(|_| commuting_residual(&random_quadratic_vector(&mut rng), &mesh, degree).max())
            .fold(0.0, nan_max);
        report.push(format!("commuting diagram n={n}"), worst, 1e-12);

        let worst = (0..10)
            .map(|_| {
                let u = random_state(&mesh, &mut rng, 0.0).u;
                let v = random_quadratic_vector(&mut rng);
                let r = cr_orthogonality_residual(&u, &v, &mesh, degree);
                r.abs() / (broken_h1_seminorm(&u, &mesh) * h1_seminorm(&v, &mesh, degree))
            })
            .fold(0.0, nan_max);
        report.push(format!("CR orthogonality n={n}"), worst, 1e-10);

        let state = random_state(&mesh, &mut rng, 0.0);
        for (kind, phi) in polynomial_scalars(&mut rng) {
            let r = transport_identity_continuity(&state, &phi, &mesh, params).relative_residual();
            report.push(
                format!("continuity transport identity, {kind} n={n}"),
                r,
                1e-10,
            );
        }
        for (kind, v) in polynomial_vectors(&mut rng) {
            let r = transport_identity_momentum(&state, &v, &mesh, params).relative_residual();
            report.push(
                format!("momentum transport identity, {kind} n={n}"),
                r,
                1e-10,
            );
        }

        let prev = random_state(&mesh, &mut rng, 0.0);
        let guess = random_state(&mesh, &mut rng, 0.0);
        let cmp = compare_with_oracles(&prev, &guess, params, &mesh)?;
        report.push(format!("continuity oracle n={n}"), cmp.continuity, 1e-13);
        report.push(format!("momentum oracle n={n}"), cmp.momentum, 1e-12);
    }

    let mesh = build_box_mesh(1, BoxDomain::unit())?;
    let prev = random_state(&mesh, &mut rng, 0.0);
    let guess = random_state(&mesh, &mut rng, 0.01);
    let err = jacobian_probe(&prev, &guess, params, &mesh, 1e-6)?;
    report.push("jacobian probe n=1".into(), err, 1e-5);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracles_agree_with_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = SchemeParams::default();
        for n in [1, 2] {
            let mesh = build_box_mesh(n, BoxDomain::unit()).unwrap();
            let a = random_state(&mesh, &mut rng, 0.0);
            let b = random_state(&mesh, &mut rng, 0.0);
            let c = compare_with_oracles(&a, &b, &p, &mesh).unwrap();
            assert!(c.continuity < 1e-13, "{c:?}");
            assert!(c.momentum < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn oracle_sees_mutated_flux() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = SchemeParams {
            mutate_flux_sign: true,
            ..Default::default()
        };
        let mesh = build_box_mesh(1, BoxDomain::unit()).unwrap();
        let a = random_state(&mesh, &mut rng, 0.1);
        let b = random_state(&mesh, &mut rng, 0.1);
        let c = compare_with_oracles(&a, &b, &p, &mesh).unwrap();
        assert!(c.continuity > 1e-3);
    }

    #[test]
    fn random_state_respects_flux_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mesh = build_box_mesh(2, BoxDomain::unit()).unwrap();
        let s = random_state(&mesh, &mut rng, 0.2);
        for &f in mesh.interior_faces() {
            assert!(s.u.dofs[f].dot(&mesh.face(f).normal).abs() >= 0.2);
        }
        assert!(s.rho.min() >= 0.5);
    }

    #[test]
    fn suite_passes_and_detects_mutation() {
        let p = SchemeParams::default();
        let r = run_check_suite(&p, &[1], 7).unwrap();
        assert!(r.all_passed(), "{r:#?}");
        let bad = SchemeParams {
            mutate_flux_sign: true,
            ..p
        };
        assert!(!run_check_suite(&bad, &[1], 7).unwrap().all_passed());
    }
}
