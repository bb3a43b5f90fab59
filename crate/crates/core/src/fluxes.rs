//! Pointwise face kernels for the density and momentum transport.
//!
//! Conventions on a face `Γ` with normal `ν` pointing from `E_-` to `E_+`:
//! `f_-` is the trace from `E_-`, `f_+` the trace from `E_+`, and the jump is
//! `[f] = f_+ − f_-`. All kernels return values per unit face area unless an
//! `area` argument is taken.

use crate::mesh::Vec3;

/// `max(x, 0)`
#[inline]
pub fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// `min(x, 0)`
#[inline]
pub fn neg(x: f64) -> f64 {
    x.min(0.0)
}

/// Traces needed by the kernels on one face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceTraces {
    pub rho_minus: f64,
    pub rho_plus: f64,
    pub uhat_minus: Vec3,
    pub uhat_plus: Vec3,
    /// `ũ·ν`
    pub flux: f64,
    pub area: f64,
    /// `h^{1-ε}`
    pub h_power: f64,
}

impl FaceTraces {
    pub fn jump_rho(&self) -> f64 {
        self.rho_plus - self.rho_minus
    }

    pub fn upwind(&self) -> f64 {
        upwind_scalar(self.rho_minus, self.rho_plus, self.flux)
    }

    pub fn momentum(&self) -> Vec3 {
        upwind_momentum(self.upwind(), self.uhat_minus, self.uhat_plus)
    }
}

/// `Up(ρu)|_Γ = ρ_-(ũ·ν)⁺ + ρ_+(ũ·ν)⁻`
#[inline]
pub fn upwind_scalar(rho_minus: f64, rho_plus: f64, flux: f64) -> f64 {
    rho_minus * pos(flux) + rho_plus * neg(flux)
}

/// `Up(ρu⊗û)|_Γ = Up⁺ û_- + Up⁻ û_+`: the element-average velocity is taken
/// from the side the mass flux comes from.
#[inline]
pub fn upwind_momentum(up: f64, uhat_minus: Vec3, uhat_plus: Vec3) -> Vec3 {
    uhat_minus * pos(up) + uhat_plus * neg(up)
}

/// Face weight `h^{1-ε} |Γ| [ρ]` of the density stabilization, to be paired
/// with `[q]`.
#[inline]
pub fn stab_continuity(jump_rho: f64, h_power: f64, area: f64) -> f64 {
    h_power * area * jump_rho
}

/// `h^{1-ε} |Γ| [ρ] ((û_- + û_+)/2)·[v̂]`
#[inline]
pub fn stab_momentum(
    jump_rho: f64,
    uhat_minus: Vec3,
    uhat_plus: Vec3,
    jump_vhat: Vec3,
    h_power: f64,
    area: f64,
) -> f64 {
    h_power * area * jump_rho * ((uhat_minus + uhat_plus) * 0.5).dot(&jump_vhat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn upwind_scalar_examples() {
        assert_eq!(upwind_scalar(2.0, 1.0, 0.5), 1.0);
        assert_eq!(upwind_scalar(7.0, 3.0, 0.0), 0.0);
        assert_eq!(upwind_scalar(1.0, 3.0, -2.0), -6.0);
    }

    #[test]
    fn upwind_momentum_examples() {
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(0.0, 2.0, 0.0);
        assert_eq!(upwind_momentum(1.5, a, b), Vec3::new(1.5, 0.0, 0.0));
        assert_eq!(upwind_momentum(0.0, a, b), Vec3::zeros());
        assert_eq!(upwind_momentum(-1.0, a, b), Vec3::new(0.0, -2.0, 0.0));
    }

    #[test]
    fn stabilization_examples() {
        assert_eq!(stab_continuity(0.0, 0.3, 0.5), 0.0);
        assert!((stab_continuity(1.0, 0.3, 0.5) - 0.15).abs() < 1e-16);
        let u = Vec3::new(1.0, 0.0, 0.0);
        let v = stab_momentum(2.0, u, u, Vec3::new(3.0, 0.0, 0.0), 0.1, 1.0);
        assert!((v - 0.6).abs() < 1e-15);
        assert_eq!(stab_momentum(0.0, u, u, u, 0.1, 1.0), 0.0);
        assert_eq!(
            stab_momentum(1.0, Vec3::zeros(), Vec3::zeros(), u, 0.1, 1.0),
            0.0
        );
    }

    #[test]
    fn boundary_face_contributes_nothing() {
        let t = FaceTraces {
            rho_minus: 1.3,
            rho_plus: 1.3,
            uhat_minus: Vec3::new(1.0, 2.0, 3.0),
            uhat_plus: Vec3::zeros(),
            flux: 0.0,
            area: 0.25,
            h_power: 0.7,
        };
        assert_eq!(t.upwind(), 0.0);
        assert_eq!(t.momentum(), Vec3::zeros());
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b, c)| Vec3::new(a, b, c))
    }

    proptest! {
        #[test]
        fn side_swap_is_antisymmetric(rm in 0.01..5.0f64, rp in 0.01..5.0f64, f in -4.0..4.0f64,
                                      um in vec3(), up in vec3()) {
            // flipping ν swaps the sides and negates the flux
            let a = upwind_scalar(rm, rp, f);
            let b = upwind_scalar(rp, rm, -f);
            prop_assert_eq!(a, -b);
            let ma = upwind_momentum(a, um, up);
            let mb = upwind_momentum(b, up, um);
            prop_assert!((ma + mb).amax() <= 1e-15);
        }

        #[test]
        fn upwind_scalar_homogeneous_and_monotone(rm in 0.01..5.0f64, rp in 0.01..5.0f64,
                                                  f in -4.0..4.0f64, s in 0.0..10.0f64, d in 0.0..1.0f64) {
            prop_assert!((upwind_scalar(rm, rp, s * f) - s * upwind_scalar(rm, rp, f)).abs() <= 1e-12);
            if f >= 0.0 {
                prop_assert!(upwind_scalar(rm + d, rp, f) >= upwind_scalar(rm, rp, f));
            } else {
                // more mass flowing backwards across the face
                prop_assert!(upwind_scalar(rm, rp + d, f) <= upwind_scalar(rm, rp, f));
            }
        }

        #[test]
        fn momentum_consistency(up in -4.0..4.0f64, u in vec3()) {
            prop_assert!((upwind_momentum(up, u, u) - u * up).amax() <= 1e-15);
        }

        #[test]
        fn momentum_stab_matches_energy_form(j in -2.0..2.0f64, um in vec3(), up in vec3(),
                                             hp in 0.0..1.0f64, area in 0.01..1.0f64) {
            // (a+b)/2·(a−b) = (|a|²−|b|²)/2
            let lhs = stab_momentum(j, um, up, up - um, hp, area);
            let rhs = hp * area * j * (up.norm_squared() - um.norm_squared()) / 2.0;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            // both jumps flip with the orientation
            let flipped = stab_momentum(-j, up, um, um - up, hp, area);
            prop_assert!((lhs - flipped).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
