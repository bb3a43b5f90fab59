//! Quadrature on triangles and tetrahedra.
//!
//! Points are stored in barycentric coordinates and weights are normalized to
//! sum to one, so `∫_K f ≈ |K| Σ w_q f(x_q)` on any physical simplex `K`.
//! Degrees 1 and 2 use the classical low-order rules; higher degrees use
//! collapsed (Duffy) tensor products of Gauss-Legendre rules.

use nalgebra::Vector3;

#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TetRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

impl TriangleRule {
    /// A rule integrating polynomials up to `degree` exactly.
    pub fn with_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => TriangleRule {
                points: vec![[1.0 / 3.0; 3]],
                weights: vec![1.0],
            },
            2 => TriangleRule {
                // edge midpoints
                points: vec![[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]],
                weights: vec![1.0 / 3.0; 3],
            },
            d => {
                let n = (d + 3) / 2;
                let (x, w) = gauss_legendre_unit(n);
                let mut points = Vec::with_capacity(n * n);
                let mut weights = Vec::with_capacity(n * n);
                for (&u, &wu) in x.iter().zip(&w) {
                    for (&v, &wv) in x.iter().zip(&w) {
                        let s = u;
                        let t = (1.0 - u) * v;
                        points.push([1.0 - s - t, s, t]);
                        // reference area 1/2 normalized to 1
                        weights.push(2.0 * wu * wv * (1.0 - u));
                    }
                }
                TriangleRule { points, weights }
            }
        }
    }

    pub fn map(
        &self,
        corners: &[Vector3<f64>; 3],
    ) -> impl Iterator<Item = (Vector3<f64>, f64)> + '_ {
        let c = *corners;
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(b, &w)| (c[0] * b[0] + c[1] * b[1] + c[2] * b[2], w))
    }
}

impl TetRule {
    /// A rule integrating polynomials up to `degree` exactly.
    pub fn with_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => TetRule {
                points: vec![[0.25; 4]],
                weights: vec![1.0],
            },
            2 => {
                let a = 0.585_410_196_624_968_5;
                let b = 0.138_196_601_125_010_5;
                TetRule {
                    points: vec![[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]],
                    weights: vec![0.25; 4],
                }
            }
            d => {
                let n = (d + 4) / 2;
                let (x, w) = gauss_legendre_unit(n);
                let mut points = Vec::with_capacity(n * n * n);
                let mut weights = Vec::with_capacity(n * n * n);
                for (&u, &wu) in x.iter().zip(&w) {
                    for (&v, &wv) in x.iter().zip(&w) {
                        for (&s, &ws) in x.iter().zip(&w) {
                            let px = u;
                            let py = (1.0 - u) * v;
                            let pz = (1.0 - u) * (1.0 - v) * s;
                            points.push([1.0 - px - py - pz, px, py, pz]);
                            // reference volume 1/6 normalized to 1
                            weights.push(6.0 * wu * wv * ws * (1.0 - u) * (1.0 - u) * (1.0 - v));
                        }
                    }
                }
                TetRule { points, weights }
            }
        }
    }

    pub fn map(
        &self,
        corners: &[Vector3<f64>; 4],
    ) -> impl Iterator<Item = (Vector3<f64>, f64)> + '_ {
        let c = *corners;
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(b, &w)| (c[0] * b[0] + c[1] * b[1] + c[2] * b[2] + c[3] * b[3], w))
    }
}
