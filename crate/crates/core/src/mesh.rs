//! Structured tetrahedral meshes of an axis-aligned box.
//!
//! Every grid cube is split into the six Kuhn (Freudenthal) simplices that
//! share its main diagonal. The family is shape regular with a constant
//! independent of `n`, refining `n -> 2n` halves `h`, and the refined mesh is
//! nested in the coarse one.
//!
//! Face orientation: an interior face stores `minus` as the element with the
//! lower index and its unit normal points from `minus` into `plus`. Boundary
//! faces store the owning element as `minus` with the outward normal.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec3,
    pub upper: Vec3,
}

impl BoxDomain {
    pub fn unit() -> Self {
        BoxDomain {
            lower: Vec3::zeros(),
            upper: Vec3::new(1.0, 1.0, 1.0),
        }
    }

    pub fn new(lower: Vec3, upper: Vec3) -> Result<Self> {
        let ext = upper - lower;
        if ext.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "box extents must be positive, got {:?}",
                ext.as_slice()
            )));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn extents(&self) -> Vec3 {
        self.upper - self.lower
    }

    pub fn volume(&self) -> f64 {
        self.extents().product()
    }

    pub fn center(&self) -> Vec3 {
        (self.lower + self.upper) * 0.5
    }
}

#[derive(Debug, Clone)]
pub struct Face {
    pub vertices: [usize; 3],
    pub area: f64,
    /// Unit normal, pointing from `minus` to `plus` (outward on the boundary).
    pub normal: Vec3,
    pub centroid: Vec3,
    pub minus: usize,
    pub plus: Option<usize>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.plus.is_none()
    }

    /// The element across the face from `elem`, if any.
    pub fn neighbor_of(&self, elem: usize) -> Option<usize> {
        if self.minus == elem {
            self.plus
        } else {
            Some(self.minus)
        }
    }
}

/// A face of an element together with its orientation relative to that element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElemFace {
    pub face: usize,
    /// +1 when the element is the face's `minus` side (stored normal is outward),
    /// -1 otherwise.
    pub sign: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    faces: Vec<Face>,
    /// Local face `i` is opposite local vertex `i`.
    elem_faces: Vec<[ElemFace; 4]>,
    volumes: Vec<f64>,
    centroids: Vec<Vec3>,
    diameters: Vec<f64>,
    h: f64,
    interior_faces: Vec<usize>,
    free_index: Vec<Option<usize>>,
    domain: BoxDomain,
    n: usize,
}

/// Summary numbers for a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshMetrics {
    pub h: f64,
    pub min_volume: f64,
    pub max_volume: f64,
    /// max over elements of circumradius / inradius
    pub shape_ratio: f64,
    pub n_elements: usize,
    pub n_interior_faces: usize,
    pub n_boundary_faces: usize,
    pub n_vertices: usize,
}

// Kuhn simplices: the path 0 -> e_p0 -> e_p0 + e_p1 -> (1,1,1).
const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

fn local_face(tet: &[usize; 4], i: usize) -> [usize; 3] {
    let mut out = [0; 3];
    let mut k = 0;
    for (j, &v) in tet.iter().enumerate() {
        if j != i {
            out[k] = v;
            k += 1;
        }
    }
    out
}

fn signed_volume(p: &[Vec3; 4]) -> f64 {
    Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]).determinant() / 6.0
}

/// Builds the Kuhn mesh with `n` cubes per axis.
pub fn build_box_mesh(n: usize, domain: BoxDomain) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "n_per_axis must be at least 1".into(),
        ));
    }
    BoxDomain::new(domain.lower, domain.upper)?;
    let step = domain.extents() / n as f64;
    let np = n + 1;
    let vid = |i: usize, j: usize, k: usize| i + np * (j + np * k);

    let mut vertices = Vec::with_capacity(np * np * np);
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                vertices.push(
                    domain.lower
                        + Vec3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z),
                );
            }
        }
    }

    let mut tets = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in PERMUTATIONS {
                    let mut c = [i, j, k];
                    let mut tet = [vid(c[0], c[1], c[2]); 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        tet[s + 1] = vid(c[0], c[1], c[2]);
                    }
                    let pts = tet.map(|v| vertices[v]);
                    if signed_volume(&pts) < 0.0 {
                        tet.swap(2, 3);
                    }
                    tets.push(tet);
                }
            }
        }
    }

    Mesh::from_parts(vertices, tets, domain, n)
}

impl Mesh {
    fn from_parts(
        vertices: Vec<Vec3>,
        tets: Vec<[usize; 4]>,
        domain: BoxDomain,
        n: usize,
    ) -> Result<Self> {
        let ne = tets.len();
        let mut volumes = Vec::with_capacity(ne);
        let mut centroids = Vec::with_capacity(ne);
        let mut diameters = Vec::with_capacity(ne);
        for tet in &tets {
            let p = tet.map(|v| vertices[v]);
            let vol = signed_volume(&p);
            if !(vol > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "element {:?} has non-positive volume {vol}",
                    tet
                )));
            }
            volumes.push(vol);
            centroids.push((p[0] + p[1] + p[2] + p[3]) * 0.25);
            let mut d: f64 = 0.0;
            for a in 0..4 {
                for b in (a + 1)..4 {
                    d = d.max((p[a] - p[b]).norm());
                }
            }
            diameters.push(d);
        }

        let mut lookup: HashMap<[usize; 3], usize> = HashMap::new();
        let mut faces: Vec<Face> = Vec::new();
        let mut elem_faces = Vec::with_capacity(ne);
        for (e, tet) in tets.iter().enumerate() {
            let mut local = [ElemFace { face: 0, sign: 1.0 }; 4];
            for (i, slot) in local.iter_mut().enumerate() {
                let fv = local_face(tet, i);
                let mut key = fv;
                key.sort_unstable();
                if let Some(&f) = lookup.get(&key) {
                    let face = &mut faces[f];
                    if face.plus.is_some() {
                        return Err(Error::InvalidMesh(format!(
                            "face {key:?} shared by more than two elements"
                        )));
                    }
                    face.plus = Some(e);
                    *slot = ElemFace {
                        face: f,
                        sign: -1.0,
                    };
                } else {
                    let [a, b, c] = fv.map(|v| vertices[v]);
                    let cross = (b - a).cross(&(c - a));
                    let area = 0.5 * cross.norm();
                    let mut normal = cross / cross.norm();
                    if normal.dot(&(vertices[tet[i]] - a)) > 0.0 {
                        normal = -normal;
                    }
                    let f = faces.len();
                    faces.push(Face {
                        vertices: fv,
                        area,
                        normal,
                        centroid: (a + b + c) / 3.0,
                        minus: e,
                        plus: None,
                    });
                    lookup.insert(key, f);
                    *slot = ElemFace { face: f, sign: 1.0 };
                }
            }
            elem_faces.push(local);
        }

        let mut interior_faces = Vec::new();
        let mut free_index = vec![None; faces.len()];
        for (f, face) in faces.iter().enumerate() {
            if !face.is_boundary() {
                free_index[f] = Some(interior_faces.len());
                interior_faces.push(f);
            }
        }
        let h = diameters.iter().cloned().fold(0.0, f64::max);

        Ok(Mesh {
            vertices,
            tets,
            faces,
            elem_faces,
            volumes,
            centroids,
            diameters,
            h,
            interior_faces,
            free_index,
            domain,
            n,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn elem_faces(&self, e: usize) -> &[ElemFace; 4] {
        &self.elem_faces[e]
    }

    pub fn n_elements(&self) -> usize {
        self.tets.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn volume(&self, e: usize) -> f64 {
        self.volumes[e]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn centroid(&self, e: usize) -> Vec3 {
        self.centroids[e]
    }

    pub fn diameter(&self, e: usize) -> f64 {
        self.diameters[e]
    }

    /// Maximal element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    /// Cubes per axis of the underlying grid.
    pub fn cells_per_axis(&self) -> usize {
        self.n
    }

    /// Interior faces in increasing face-index order. These carry the free
    /// velocity unknowns.
    pub fn interior_faces(&self) -> &[usize] {
        &self.interior_faces
    }

    /// Position of an interior face in [`Mesh::interior_faces`].
    pub fn free_index(&self, f: usize) -> Option<usize> {
        self.free_index[f]
    }

    pub fn corners(&self, e: usize) -> [Vec3; 4] {
        self.tets[e].map(|v| self.vertices[v])
    }

    pub fn face_corners(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].vertices.map(|v| self.vertices[v])
    }

    /// Outward unit normal of local face `i` of element `e`.
    pub fn outward_normal(&self, e: usize, i: usize) -> Vec3 {
        let ef = self.elem_faces[e][i];
        self.faces[ef.face].normal * ef.sign
    }

    /// `|Γ_i| ν_i` with `ν_i` outward, for every local face of `e`.
    pub fn area_normals(&self, e: usize) -> [Vec3; 4] {
        let ef = &self.elem_faces[e];
        std::array::from_fn(|i| {
            let face = &self.faces[ef[i].face];
            face.normal * (face.area * ef[i].sign)
        })
    }

    /// The element containing `p`, using the structured grid layout.
    /// Points on shared boundaries resolve to one of the candidates.
    pub fn locate(&self, p: &Vec3) -> Option<usize> {
        let ext = self.domain.extents();
        let mut cell = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let s = (p[a] - self.domain.lower[a]) / ext[a] * self.n as f64;
            if !(-1e-12..=self.n as f64 + 1e-12).contains(&s) {
                return None;
            }
            let c = (s.floor().max(0.0) as usize).min(self.n - 1);
            cell[a] = c;
            t[a] = s - c as f64;
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| t[b].partial_cmp(&t[a]).unwrap().then(a.cmp(&b)));
        let perm = PERMUTATIONS.iter().position(|p| *p == order)?;
        let cube = cell[0] + self.n * (cell[1] + self.n * cell[2]);
        Some(6 * cube + perm)
    }

    /// Barycentric coordinates of `p` with respect to element `e`.
    pub fn barycentric(&self, e: usize, p: &Vec3) -> [f64; 4] {
        let c = self.corners(e);
        let m = Matrix3::from_columns(&[c[1] - c[0], c[2] - c[0], c[3] - c[0]]);
        let l = m.lu().solve(&(p - c[0])).unwrap_or_else(Vec3::zeros);
        [1.0 - l.x - l.y - l.z, l.x, l.y, l.z]
    }
}

fn circumradius(p: &[Vec3; 4]) -> f64 {
    // |x - p0|^2 = |x - pi|^2  =>  2 (pi - p0) . x = |pi|^2 - |p0|^2
    let a = Matrix3::from_rows(&[
        (p[1] - p[0]).transpose() * 2.0,
        (p[2] - p[0]).transpose() * 2.0,
        (p[3] - p[0]).transpose() * 2.0,
    ]);
    let b = Vec3::new(
        p[1].norm_squared() - p[0].norm_squared(),
        p[2].norm_squared() - p[0].norm_squared(),
        p[3].norm_squared() - p[0].norm_squared(),
    );
    let center = a.lu().solve(&b).expect("non-degenerate element");
    (center - p[0]).norm()
}

pub fn mesh_metrics(mesh: &Mesh) -> MeshMetrics {
    let mut shape_ratio: f64 = 0.0;
    for e in 0..mesh.n_elements() {
        let p = mesh.corners(e);
        let surface: f64 = mesh
            .elem_faces(e)
            .iter()
            .map(|ef| mesh.face(ef.face).area)
            .sum();
        let inradius = 3.0 * mesh.volume(e) / surface;
        shape_ratio = shape_ratio.max(circumradius(&p) / inradius);
    }
    let n_boundary = mesh.faces().iter().filter(|f| f.is_boundary()).count();
    MeshMetrics {
        h: mesh.h(),
        min_volume: mesh.volumes().iter().cloned().fold(f64::INFINITY, f64::min),
        max_volume: mesh.volumes().iter().cloned().fold(0.0, f64::max),
        shape_ratio,
        n_elements: mesh.n_elements(),
        n_interior_faces: mesh.n_faces() - n_boundary,
        n_boundary_faces: n_boundary,
        n_vertices: mesh.vertices().len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Mesh {
        build_box_mesh(n, BoxDomain::unit()).unwrap()
    }

    #[test]
    fn single_cube_counts() {
        let m = unit(1);
        let mm = mesh_metrics(&m);
        assert_eq!(mm.n_elements, 6);
        assert_eq!(mm.n_boundary_faces, 12);
        assert_eq!(mm.n_interior_faces, 6);
        let total: f64 = m.volumes().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!((mm.h - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn refinement_halves_h_and_scales_measures() {
        let m1 = unit(1);
        let m2 = unit(2);
        assert_eq!(m2.n_elements(), 48);
        assert!((m2.h() - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((m2.h() * 2.0 - m1.h()).abs() < 1e-15);
        for e in 0..m2.n_elements() {
            assert!((m2.volume(e) - m1.volume(0) / 8.0).abs() < 1e-15);
        }
        let areas1: Vec<f64> = m1.faces().iter().map(|f| f.area).collect();
        for f in m2.faces() {
            assert!(areas1.iter().any(|a| (a / 4.0 - f.area).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_cells_is_rejected() {
        assert!(matches!(
            build_box_mesh(0, BoxDomain::unit()),
            Err(Error::InvalidArgument(_))
        ));
        let flat = BoxDomain {
            lower: Vec3::zeros(),
            upper: Vec3::new(1.0, 0.0, 1.0),
        };
        assert!(build_box_mesh(1, flat).is_err());
    }

    #[test]
    fn volumes_sum_to_box_volume() {
        let dom = BoxDomain::new(Vec3::new(-1.0, 0.5, 2.0), Vec3::new(2.0, 1.0, 4.5)).unwrap();
        for n in [1, 2, 3] {
            let m = build_box_mesh(n, dom).unwrap();
            let total: f64 = m.volumes().iter().sum();
            assert!((total - dom.volume()).abs() <= 1e-12 * dom.volume());
            assert!(mesh_metrics(&m).min_volume > 0.0);
        }
    }

    #[test]
    fn face_incidence_and_orientation() {
        let m = unit(3);
        let mut refs = vec![0usize; m.n_faces()];
        for e in 0..m.n_elements() {
            for (i, ef) in m.elem_faces(e).iter().enumerate() {
                refs[ef.face] += 1;
                let face = m.face(ef.face);
                assert_eq!(ef.sign > 0.0, face.minus == e);
                // outward: away from the opposite vertex
                let opp = m.vertices()[m.tets()[e][i]];
                assert!(m.outward_normal(e, i).dot(&(face.centroid - opp)) > 0.0);
            }
        }
        for (f, face) in m.faces().iter().enumerate() {
            assert!((face.normal.norm() - 1.0).abs() < 1e-14);
            assert!(face.area > 0.0);
            match face.plus {
                Some(p) => {
                    assert_eq!(refs[f], 2);
                    assert!(face.minus < p);
                    // points from minus into plus
                    assert!(face.normal.dot(&(m.centroid(p) - m.centroid(face.minus))) > 0.0);
                }
                None => assert_eq!(refs[f], 1),
            }
        }
    }

    #[test]
    fn closed_element_surfaces_and_telescoping() {
        let m = unit(2);
        for e in 0..m.n_elements() {
            let s: Vec3 = m.area_normals(e).iter().sum();
            assert!(s.norm() < 1e-12);
        }
        // an arbitrary per-face quantity telescopes over interior faces
        let g: Vec<f64> = (0..m.n_faces()).map(|f| (f as f64 * 0.37).sin()).collect();
        let mut total = 0.0;
        for e in 0..m.n_elements() {
            for ef in m.elem_faces(e) {
                if !m.face(ef.face).is_boundary() {
                    total += ef.sign * g[ef.face];
                }
            }
        }
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn shape_ratio_is_uniform_across_refinement() {
        let r: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&n| mesh_metrics(&unit(n)).shape_ratio)
            .collect();
        assert!((r[0] - r[1]).abs() < 1e-10 && (r[1] - r[2]).abs() < 1e-10);
        assert!(r[0] < 10.0);
    }

    #[test]
    fn locate_finds_containing_element() {
        let m = unit(3);
        for e in 0..m.n_elements() {
            assert_eq!(m.locate(&m.centroid(e)), Some(e));
        }
        assert_eq!(m.locate(&Vec3::new(2.0, 0.5, 0.5)), None);
    }

    #[test]
    fn refined_mesh_is_nested() {
        let coarse = unit(2);
        let fine = unit(4);
        for e in 0..fine.n_elements() {
            let c = coarse.locate(&fine.centroid(e)).unwrap();
            for p in fine.corners(e) {
                let b = coarse.barycentric(c, &p);
                assert!(
                    b.iter().all(|&l| l > -1e-12),
                    "fine {e} not inside coarse {c}"
                );
            }
        }
    }
}
