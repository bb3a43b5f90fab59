//! Piecewise-constant scalars `Q_h`, Crouzeix-Raviart velocities `V_h`, the
//! canonical interpolation operators and the broken differential operators.
//!
//! On an element the CR field with face averages `U_i` is
//! `u = Σ_i U_i (1 - 3 λ_i)`, where `λ_i` is the barycentric coordinate of the
//! vertex opposite face `i`. Its constant gradient is
//! `∇u = Σ_i U_i ⊗ (|Γ_i| ν_i) / |E|` with outward `ν_i`.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};
use crate::quadrature::{TetRule, TriangleRule};

/// One value per element.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarQField {
    pub values: Vec<f64>,
}

impl ScalarQField {
    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        ScalarQField {
            values: vec![value; mesh.n_elements()],
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `∫_Ω q dx`
    pub fn integral(&self, mesh: &Mesh) -> f64 {
        self.values
            .iter()
            .zip(mesh.volumes())
            .map(|(q, v)| q * v)
            .sum()
    }
}

/// Crouzeix-Raviart vector field stored as one face average per face.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityCRField {
    pub dofs: Vec<Vec3>,
    /// `true` on faces whose dof is constrained to zero.
    pub boundary_mask: Vec<bool>,
}

impl VelocityCRField {
    pub fn zeros(mesh: &Mesh) -> Self {
        VelocityCRField {
            dofs: vec![Vec3::zeros(); mesh.n_faces()],
            boundary_mask: mesh.faces().iter().map(|f| f.is_boundary()).collect(),
        }
    }

    /// Zeroes every constrained (boundary) dof.
    pub fn apply_bc(&mut self) {
        for (d, &m) in self.dofs.iter_mut().zip(&self.boundary_mask) {
            if m {
                *d = Vec3::zeros();
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.dofs.iter().map(|d| d.amax()).fold(0.0, f64::max)
    }

    /// Value at `x`, using the restriction to element `e`.
    pub fn evaluate(&self, mesh: &Mesh, e: usize, x: &Vec3) -> Vec3 {
        let lambda = mesh.barycentric(e, x);
        mesh.elem_faces(e)
            .iter()
            .zip(lambda)
            .map(|(ef, l)| self.dofs[ef.face] * (1.0 - 3.0 * l))
            .sum()
    }

    /// Constant gradient on element `e`, `J[(a, b)] = ∂_b u_a`.
    pub fn element_gradient(&self, mesh: &Mesh, e: usize) -> Matrix3<f64> {
        let an = mesh.area_normals(e);
        let mut g = Matrix3::zeros();
        for (ef, a) in mesh.elem_faces(e).iter().zip(an.iter()) {
            g += self.dofs[ef.face] * a.transpose();
        }
        g / mesh.volume(e)
    }

    /// Element mean `û_E`: the average of the four face dofs.
    pub fn element_mean(&self, mesh: &Mesh, e: usize) -> Vec3 {
        mesh.elem_faces(e)
            .iter()
            .map(|ef| self.dofs[ef.face])
            .sum::<Vec3>()
            * 0.25
    }
}

/// Per-face normal flux `ũ·ν = (1/|Γ|) ∫_Γ u·ν`, with `ν` the stored face normal.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFluxField {
    pub values: Vec<f64>,
}

/// A vector field with an analytic Jacobian, `J[(a, b)] = ∂_b v_a`.
pub trait SmoothVectorField: Sync {
    fn value(&self, x: &Vec3) -> Vec3;
    fn jacobian(&self, x: &Vec3) -> Matrix3<f64>;

    fn divergence(&self, x: &Vec3) -> f64 {
        self.jacobian(x).trace()
    }

    fn curl(&self, x: &Vec3) -> Vec3 {
        curl_of(&self.jacobian(x))
    }
}

/// A scalar field with an analytic gradient.
pub trait SmoothScalarField: Sync {
    fn value(&self, x: &Vec3) -> f64;
    fn gradient(&self, x: &Vec3) -> Vec3;
}

fn curl_of(j: &Matrix3<f64>) -> Vec3 {
    Vec3::new(
        j[(2, 1)] - j[(1, 2)],
        j[(0, 2)] - j[(2, 0)],
        j[(1, 0)] - j[(0, 1)],
    )
}

/// `s(x) = c + b·x + ½ xᵀ H x`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticScalar {
    pub constant: f64,
    pub linear: Vec3,
    pub hessian: Matrix3<f64>,
}

impl QuadraticScalar {
    pub fn constant(c: f64) -> Self {
        QuadraticScalar {
            constant: c,
            linear: Vec3::zeros(),
            hessian: Matrix3::zeros(),
        }
    }

    pub fn linear(c: f64, b: Vec3) -> Self {
        QuadraticScalar {
            constant: c,
            linear: b,
            hessian: Matrix3::zeros(),
        }
    }

    pub fn new(c: f64, b: Vec3, hessian: Matrix3<f64>) -> Self {
        QuadraticScalar {
            constant: c,
            linear: b,
            hessian: (hessian + hessian.transpose()) * 0.5,
        }
    }
}

impl SmoothScalarField for QuadraticScalar {
    fn value(&self, x: &Vec3) -> f64 {
        self.constant + self.linear.dot(x) + 0.5 * x.dot(&(self.hessian * x))
    }

    fn gradient(&self, x: &Vec3) -> Vec3 {
        self.linear + self.hessian * x
    }
}

/// A vector field with one [`QuadraticScalar`] per component.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticVector {
    pub components: [QuadraticScalar; 3],
}

impl QuadraticVector {
    pub fn constant(c: Vec3) -> Self {
        QuadraticVector {
            components: [0, 1, 2].map(|a| QuadraticScalar::constant(c[a])),
        }
    }

    /// `v(x) = c + L x`
    pub fn affine(c: Vec3, l: Matrix3<f64>) -> Self {
        QuadraticVector {
            components: [0, 1, 2].map(|a| QuadraticScalar::linear(c[a], l.row(a).transpose())),
        }
    }
}

impl SmoothVectorField for QuadraticVector {
    fn value(&self, x: &Vec3) -> Vec3 {
        Vec3::from_fn(|a, _| self.components[a].value(x))
    }

    fn jacobian(&self, x: &Vec3) -> Matrix3<f64> {
        let rows = self
            .components
            .each_ref()
            .map(|c| c.gradient(x).transpose());
        Matrix3::from_rows(&rows)
    }
}

/// `Π_h^Q f`: the element mean of a scalar function.
pub fn project_q<F>(mesh: &Mesh, f: F, degree: usize) -> ScalarQField
where
    F: Fn(&Vec3) -> f64,
{
    let rule = TetRule::with_degree(degree);
    let values = (0..mesh.n_elements())
        .map(|e| rule.map(&mesh.corners(e)).map(|(x, w)| w * f(&x)).sum())
        .collect();
    ScalarQField { values }
}

/// Componentwise `Π_h^Q` of a vector function.
pub fn project_q_vec<F>(mesh: &Mesh, f: F, degree: usize) -> Vec<Vec3>
where
    F: Fn(&Vec3) -> Vec3,
{
    let rule = TetRule::with_degree(degree);
    (0..mesh.n_elements())
        .map(|e| rule.map(&mesh.corners(e)).map(|(x, w)| f(&x) * w).sum())
        .collect()
}

/// `Π_h^V v`: face averages on every face. Boundary dofs are left as computed;
/// call [`VelocityCRField::apply_bc`] for the constrained space.
pub fn interpolate_v<F>(mesh: &Mesh, v: F, degree: usize) -> VelocityCRField
where
    F: Fn(&Vec3) -> Vec3,
{
    let rule = TriangleRule::with_degree(degree);
    let mut field = VelocityCRField::zeros(mesh);
    for (f, dof) in field.dofs.iter_mut().enumerate() {
        *dof = rule
            .map(&mesh.face_corners(f))
            .map(|(x, w)| v(&x) * w)
            .sum();
    }
    field
}

/// `û = Π_h^Q u_h` for every element.
pub fn element_average(u: &VelocityCRField, mesh: &Mesh) -> Vec<Vec3> {
    (0..mesh.n_elements())
        .map(|e| u.element_mean(mesh, e))
        .collect()
}

/// `ũ·ν` on every face (the CR dof is the face average, so this is `dof·ν`).
pub fn normal_flux(u: &VelocityCRField, mesh: &Mesh) -> FaceFluxField {
    FaceFluxField {
        values: mesh
            .faces()
            .iter()
            .zip(&u.dofs)
            .map(|(face, d)| d.dot(&face.normal))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementDerivatives {
    pub gradient: Matrix3<f64>,
    pub divergence: f64,
    pub curl: Vec3,
}

/// Element-wise gradient, divergence and curl of a CR field.
pub fn broken_derivatives(u: &VelocityCRField, mesh: &Mesh) -> Result<Vec<ElementDerivatives>> {
    (0..mesh.n_elements())
        .map(|e| {
            if !(mesh.volume(e) > 0.0) {
                return Err(Error::InvalidMesh(format!("element {e} has zero volume")));
            }
            let g = u.element_gradient(mesh, e);
            Ok(ElementDerivatives {
                gradient: g,
                divergence: g.trace(),
                curl: curl_of(&g),
            })
        })
        .collect()
}

/// `div_h u` per element.
pub fn broken_divergence(u: &VelocityCRField, mesh: &Mesh) -> Vec<f64> {
    (0..mesh.n_elements())
        .map(|e| {
            let an = mesh.area_normals(e);
            mesh.elem_faces(e)
                .iter()
                .zip(an.iter())
                .map(|(ef, a)| u.dofs[ef.face].dot(a))
                .sum::<f64>()
                / mesh.volume(e)
        })
        .collect()
}

/// Maximum element-wise defects of the commuting identities
/// `div_h Π^V v = Π^Q div v`, `curl_h Π^V v = Π^Q curl v` and
/// `div Π^N v = Π^Q div v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommutingResidual {
    pub div: f64,
    pub curl: f64,
    pub div_nedelec: f64,
}

impl CommutingResidual {
    pub fn max(&self) -> f64 {
        self.div.max(self.curl).max(self.div_nedelec)
    }
}

pub fn commuting_residual(
    v: &dyn SmoothVectorField,
    mesh: &Mesh,
    degree: usize,
) -> CommutingResidual {
    let interp = interpolate_v(mesh, |x| v.value(x), degree);
    let derivs = broken_derivatives(&interp, mesh).expect("mesh elements have positive volume");
    let div_q = project_q(mesh, |x| v.divergence(x), degree);
    let curl_q = project_q_vec(mesh, |x| v.curl(x), degree);
    let face_rule = TriangleRule::with_degree(degree);
    // Π^N v through its face fluxes only: ∫_Γ v·ν for every face
    let face_flux: Vec<f64> = (0..mesh.n_faces())
        .map(|f| {
            let face = mesh.face(f);
            face.area
                * face_rule
                    .map(&mesh.face_corners(f))
                    .map(|(x, w)| w * v.value(&x).dot(&face.normal))
                    .sum::<f64>()
        })
        .collect();

    let mut out = CommutingResidual {
        div: 0.0,
        curl: 0.0,
        div_nedelec: 0.0,
    };
    for (e, d) in derivs.iter().enumerate() {
        out.div = out.div.max((d.divergence - div_q.values[e]).abs());
        out.curl = out.curl.max((d.curl - curl_q[e]).amax());
        let div_n: f64 = mesh
            .elem_faces(e)
            .iter()
            .map(|ef| ef.sign * face_flux[ef.face])
            .sum::<f64>()
            / mesh.volume(e);
        out.div_nedelec = out.div_nedelec.max((div_n - div_q.values[e]).abs());
    }
    out
}

/// `∫_Ω ∇_h u_h : ∇_h(Π^V v − v) dx`
pub fn cr_orthogonality_residual(
    u: &VelocityCRField,
    v: &dyn SmoothVectorField,
    mesh: &Mesh,
    degree: usize,
) -> f64 {
    let interp = interpolate_v(mesh, |x| v.value(x), degree);
    let rule = TetRule::with_degree(degree.saturating_sub(1).max(1));
    (0..mesh.n_elements())
        .map(|e| {
            let gu = u.element_gradient(mesh, e);
            let gi = interp.element_gradient(mesh, e);
            let mean_gv: Matrix3<f64> = rule
                .map(&mesh.corners(e))
                .map(|(x, w)| v.jacobian(&x) * w)
                .sum();
            mesh.volume(e) * gu.component_mul(&(gi - mean_gv)).sum()
        })
        .sum()
}

/// `‖∇_h u‖_{L²}` of a CR field.
pub fn broken_h1_seminorm(u: &VelocityCRField, mesh: &Mesh) -> f64 {
    (0..mesh.n_elements())
        .map(|e| mesh.volume(e) * u.element_gradient(mesh, e).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// `‖∇v‖_{L²}` of a smooth field.
pub fn h1_seminorm(v: &dyn SmoothVectorField, mesh: &Mesh, degree: usize) -> f64 {
    let rule = TetRule::with_degree(degree);
    (0..mesh.n_elements())
        .map(|e| {
            mesh.volume(e)
                * rule
                    .map(&mesh.corners(e))
                    .map(|(x, w)| w * v.jacobian(&x).norm_squared())
                    .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// `(‖Π^V v − v‖_{L²}, ‖∇_h(Π^V v − v)‖_{L²})`
pub fn interpolation_errors(
    v: &dyn SmoothVectorField,
    mesh: &Mesh,
    face_degree: usize,
    elem_degree: usize,
) -> (f64, f64) {
    let interp = interpolate_v(mesh, |x| v.value(x), face_degree);
    let rule = TetRule::with_degree(elem_degree);
    let (mut l2, mut h1) = (0.0, 0.0);
    for e in 0..mesh.n_elements() {
        let gi = interp.element_gradient(mesh, e);
        for (x, w) in rule.map(&mesh.corners(e)) {
            let wv = w * mesh.volume(e);
            l2 += wv * (interp.evaluate(mesh, e, &x) - v.value(&x)).norm_squared();
            h1 += wv * (gi - v.jacobian(&x)).norm_squared();
        }
    }
    (l2.sqrt(), h1.sqrt())
}
