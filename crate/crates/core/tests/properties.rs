//! Structural invariants of the discretization checked on randomized inputs.

use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nsfemdg_core::diagnostics::{
    energy_inequality_check, energy_ledger, positivity_bound_check, transport_identity_continuity,
    transport_identity_momentum,
};
use nsfemdg_core::scheme::{assemble_residual, jacobian, residual};
use nsfemdg_core::spaces::{
    commuting_residual, element_average, interpolate_v, normal_flux, project_q, QuadraticScalar,
    QuadraticVector,
};
use nsfemdg_core::verify::{compare_with_oracles, jacobian_probe, random_state};
use nsfemdg_core::{
    build_box_mesh, mesh_metrics, time_step, BoxDomain, Mesh, ScalarQField, SchemeParams, State,
    Vec3, VelocityCRField,
};

fn unit(n: usize) -> Mesh {
    build_box_mesh(n, BoxDomain::unit()).unwrap()
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

prop_compose! {
    fn boxes()(lo in prop::array::uniform3(-2.0..2.0f64), ext in prop::array::uniform3(0.2..3.0f64))
        -> BoxDomain
    {
        let lower = Vec3::from(lo);
        BoxDomain::new(lower, lower + Vec3::from(ext)).unwrap()
    }
}

prop_compose! {
    fn quadratic_vectors()(c in prop::array::uniform3(-1.0..1.0f64),
                          b in prop::array::uniform9(-1.0..1.0f64),
                          h in prop::array::uniform27(-1.0..1.0f64)) -> QuadraticVector
    {
        QuadraticVector {
            components: [0, 1, 2].map(|a| {
                QuadraticScalar::new(
                    c[a],
                    Vec3::new(b[3 * a], b[3 * a + 1], b[3 * a + 2]),
                    Matrix3::from_fn(|i, j| h[9 * a + 3 * i + j]),
                )
            }),
        }
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn mesh_tiles_the_box(n in 1usize..4, d in boxes()) {
        let m = build_box_mesh(n, d).unwrap();
        let total: f64 = m.volumes().iter().sum();
        prop_assert!((total - d.volume()).abs() <= 1e-12 * d.volume());
        let mm = mesh_metrics(&m);
        prop_assert_eq!(mm.n_elements, 6 * n * n * n);
        prop_assert_eq!(4 * mm.n_elements, 2 * mm.n_interior_faces + mm.n_boundary_faces);
        prop_assert!(mm.min_volume > 0.0);
    }

    #[test]
    fn face_normals_sum_to_zero_per_element(n in 1usize..4, d in boxes()) {
        let m = build_box_mesh(n, d).unwrap();
        for e in 0..m.n_elements() {
            let s: Vec3 = m.area_normals(e).iter().sum();
            prop_assert!(s.amax() <= 1e-12 * d.extents().amax().powi(2));
        }
    }

    #[test]
    fn interior_face_orientation(n in 1usize..4) {
        let m = unit(n);
        for &f in m.interior_faces() {
            let face = m.face(f);
            let p = face.plus.unwrap();
            prop_assert!(face.minus < p);
            prop_assert!((m.centroid(p) - m.centroid(face.minus)).dot(&face.normal) > 0.0);
        }
    }

    #[test]
    fn commuting_diagram_for_quadratics(n in 1usize..3, v in quadratic_vectors()) {
        prop_assert!(commuting_residual(&v, &unit(n), 2).max() <= 1e-12);
    }

    #[test]
    fn cr_interpolant_reproduces_affine_fields(c in prop::array::uniform3(-1.0..1.0f64),
                                               l in prop::array::uniform9(-1.0..1.0f64)) {
        let m = unit(2);
        let l = Matrix3::from_row_slice(&l);
        let v = QuadraticVector::affine(Vec3::from(c), l);
        use nsfemdg_core::spaces::SmoothVectorField;
        let u = interpolate_v(&m, |x| v.value(x), 2);
        for e in 0..m.n_elements() {
            prop_assert!((u.element_gradient(&m, e) - l).amax() <= 1e-12);
            let x = m.centroid(e);
            prop_assert!((u.evaluate(&m, e, &x) - v.value(&x)).amax() <= 1e-12);
        }
    }

    #[test]
    fn projection_of_constants(c in -5.0..5.0f64) {
        let m = unit(2);
        let q = project_q(&m, |_| c, 2);
        prop_assert!(q.values.iter().all(|v| (v - c).abs() <= 1e-13));
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn rest_state_has_zero_residual(rho in 0.1..5.0f64, n in 1usize..3) {
        let m = unit(n);
        let s = State::new(ScalarQField::constant(&m, rho), VelocityCRField::zeros(&m));
        let r = residual(&s, &s, &SchemeParams::default(), &m).unwrap();
        prop_assert_eq!(r.norm_inf(), 0.0);
    }

    #[test]
    fn continuity_rows_telescope(seed in any::<u64>(), n in 1usize..3) {
        let m = unit(n);
        let p = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_state(&m, &mut rng, 0.0);
        let b = random_state(&m, &mut rng, 0.0);
        let r = residual(&a, &b, &p, &m).unwrap();
        let expected = (b.mass(&m) - a.mass(&m)) / p.dt(&m);
        prop_assert!((r.continuity_sum() - expected).abs() <= 1e-13 * (1.0 + expected.abs()));
    }

    #[test]
    fn residual_is_affine_in_alpha(seed in any::<u64>(), alpha in 0.0..1.0f64) {
        let m = unit(1);
        let p = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_state(&m, &mut rng, 0.0);
        let b = random_state(&m, &mut rng, 0.0);
        let r0 = assemble_residual(&a, &b, 0.0, &p, &m).unwrap().to_vec();
        let r1 = assemble_residual(&a, &b, 1.0, &p, &m).unwrap().to_vec();
        let ra = assemble_residual(&a, &b, alpha, &p, &m).unwrap().to_vec();
        for i in 0..ra.len() {
            let lin = (1.0 - alpha) * r0[i] + alpha * r1[i];
            prop_assert!((ra[i] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
        }
    }

    #[test]
    fn residual_matches_oracles(seed in any::<u64>(), n in 1usize..3) {
        let m = unit(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_state(&m, &mut rng, 0.0);
        let b = random_state(&m, &mut rng, 0.0);
        let c = compare_with_oracles(&a, &b, &SchemeParams::default(), &m).unwrap();
        prop_assert!(c.continuity <= 1e-13 && c.momentum <= 1e-12, "{:?}", c);
    }

    #[test]
    fn jacobian_matches_finite_differences(seed in any::<u64>()) {
        let m = unit(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_state(&m, &mut rng, 0.0);
        let b = random_state(&m, &mut rng, 0.01);
        let err = jacobian_probe(&a, &b, &SchemeParams::default(), &m, 1e-6).unwrap();
        prop_assert!(err <= 1e-5, "{}", err);
    }

    #[test]
    fn jacobian_pattern_is_value_independent(s1 in any::<u64>(), s2 in any::<u64>()) {
        let m = unit(1);
        let p = SchemeParams::default();
        let mut r1 = ChaCha8Rng::seed_from_u64(s1);
        let mut r2 = ChaCha8Rng::seed_from_u64(s2);
        let (a1, b1) = (random_state(&m, &mut r1, 0.0), random_state(&m, &mut r1, 0.0));
        let (a2, b2) = (random_state(&m, &mut r2, 0.0), random_state(&m, &mut r2, 0.0));
        let j1 = jacobian(&a1, &b1, &p, &m).unwrap();
        let j2 = jacobian(&a2, &b2, &p, &m).unwrap();
        let pat = |j: &nsfemdg_core::CsrMatrix| {
            j.triplets().into_iter().map(|(r, c, _)| (r, c)).collect::<Vec<_>>()
        };
        prop_assert_eq!(pat(&j1), pat(&j2));
    }

    #[test]
    fn transport_identities_hold_for_any_state(seed in any::<u64>(), n in 1usize..3,
                                               v in quadratic_vectors()) {
        let m = unit(n);
        let p = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(&m, &mut rng, 0.0);
        let phi = v.components[0].clone();
        prop_assert!(transport_identity_continuity(&s, &phi, &m, &p).relative_residual() <= 1e-10);
        prop_assert!(transport_identity_momentum(&s, &v, &m, &p).relative_residual() <= 1e-10);
    }

    #[test]
    fn ledger_entries_are_nonnegative(seed in any::<u64>()) {
        let m = unit(2);
        let p = SchemeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_state(&m, &mut rng, 0.0);
        let b = random_state(&m, &mut rng, 0.0);
        let l = energy_ledger(&a, &b, &p, &m).unwrap();
        for x in [l.kinetic, l.internal, l.grad_diss, l.d2, l.d5, l.mass, l.min_rho] {
            prop_assert!(x >= 0.0);
        }
    }

    #[test]
    fn normal_flux_is_antisymmetric_under_reorientation(seed in any::<u64>()) {
        let m = unit(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(&m, &mut rng, 0.0);
        let flux = normal_flux(&s.u, &m);
        for e in 0..m.n_elements() {
            for (i, ef) in m.elem_faces(e).iter().enumerate() {
                let outward = s.u.dofs[ef.face].dot(&m.outward_normal(e, i));
                prop_assert!((outward - ef.sign * flux.values[ef.face]).abs() <= 1e-14);
            }
        }
        let uhat = element_average(&s.u, &m);
        prop_assert_eq!(uhat.len(), m.n_elements());
    }
}

proptest! {
    #![proptest_config(config(6))]

    /// One implicit step from a random smooth perturbation of rest.
    #[test]
    fn time_step_preserves_structure(amp in 0.05..0.5f64, k in prop::array::uniform3(0.5..3.0f64)) {
        let m = unit(2);
        let p = SchemeParams::default();
        let rho = project_q(&m, |x| 1.0 + amp * (k[0] * x.x + k[1] * x.y * x.z).sin(), 2);
        let u = interpolate_v(&m, |x| Vec3::new((k[2] * x.y).sin(), x.x * x.z, -x.y) * amp, 2);
        let s0 = State::new(rho, u);
        let (s1, stats) = time_step(&s0, &p, &m).unwrap();
        let r = residual(&s0, &s1, &p, &m).unwrap();
        prop_assert!(r.norm_inf() <= p.newton_tol);
        prop_assert!((s1.mass(&m) - s0.mass(&m)).abs() <= 1e-12 * s0.mass(&m));
        prop_assert!(positivity_bound_check(&s0, &s1, &p, &m).passed);
        prop_assert!(stats.newton_iters <= p.newton_max_iter * 3);
        let l0 = energy_ledger(&s0, &s0, &p, &m).unwrap();
        let l1 = energy_ledger(&s0, &s1, &p, &m).unwrap();
        let check = energy_inequality_check(&[l0, l1], p.dt(&m));
        prop_assert!(check.passed, "{:?}", check.margins);
    }
}
