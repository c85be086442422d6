mod common;

use common::{loglog_slope, rng, smooth_field, smooth_field_with_mean, smooth_pair};
use hydroctrl_core::dno::DnoConfig;
use hydroctrl_core::hydro::{
    elastic_force, elastic_force_curvature, elastic_linearization, flat_diagonal_variable,
    from_flat_diagonal_variable, linear_rhs, nonlinear_rhs, PhysParams,
};
use hydroctrl_core::spectral::{Depth, Field, I};
use hydroctrl_core::StatePair;

const N: usize = 64;

fn params() -> PhysParams {
    PhysParams {
        g: 1.0,
        sigma: 1.0,
        depth: Depth::Infinite,
    }
}

#[test]
fn elastic_force_vanishes_at_rest() {
    assert_eq!(
        elastic_force(&Field::zeros(N), &params())
            .unwrap()
            .max_abs_coeff(),
        0.0
    );
}

#[test]
fn elastic_force_cubic_deviation_from_fourth_derivative() {
    let p = PhysParams {
        sigma: 0.7,
        ..params()
    };
    let eps = [4e-2, 2e-2, 1e-2];
    let errs: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let eta = Field::cos_mode(N, 1, e);
            (&elastic_force(&eta, &p).unwrap() - &eta.dxn(4).scale(p.sigma)).l2_norm()
        })
        .collect();
    let slope = loglog_slope(&eps, &errs);
    assert!((slope - 3.0).abs() < 0.05, "slope {slope}");
}

#[test]
fn elastic_forms_agree() {
    let mut r = rng(11);
    let p = params();
    for _ in 0..5 {
        let eta = smooth_field(&mut r, 128, 10, 6.0, 0.05);
        let a = elastic_force(&eta, &p).unwrap();
        let b = elastic_force_curvature(&eta, &p).unwrap();
        assert!((&a - &b).l2_norm() < 1e-10);
    }
}

#[test]
fn elastic_linearization_at_rest_and_identity() {
    let e = elastic_linearization(&Field::zeros(N)).unwrap();
    assert!((&e.e4 - &Field::constant(N, 1.0)).max_abs_coeff() < 1e-15);
    assert_eq!(
        e.e1.max_abs_coeff() + e.e2.max_abs_coeff() + e.e3.max_abs_coeff(),
        0.0
    );
    let mut r = rng(12);
    let eta = smooth_field(&mut r, N, 8, 6.0, 0.1);
    let e = elastic_linearization(&eta).unwrap();
    assert!((&e.e3 - &e.e4.dx().scale(2.0)).max_abs_coeff() < 1e-11);
}

#[test]
fn elastic_linearization_matches_differences() {
    let mut r = rng(13);
    let p = params();
    let eta = smooth_field(&mut r, N, 6, 6.0, 0.1);
    let et = smooth_field(&mut r, N, 6, 0.0, 1.0);
    let lin = elastic_linearization(&eta)
        .unwrap()
        .apply(&et)
        .scale(p.sigma);
    let eps = [1e-2, 5e-3, 2.5e-3];
    let errs: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let plus = elastic_force(&eta.axpy(e, &et), &p).unwrap();
            let minus = elastic_force(&eta.axpy(-e, &et), &p).unwrap();
            (&(&plus - &minus).scale(0.5 / e) - &lin).l2_norm()
        })
        .collect();
    let slope = loglog_slope(&eps, &errs);
    assert!((slope - 2.0).abs() < 0.1, "slope {slope} {errs:?}");
}

#[test]
fn equilibrium_and_flat_surface_rhs() {
    let cfg = DnoConfig::default();
    let p = params();
    let z = nonlinear_rhs(&StatePair::zeros(N), None, &p, &cfg).unwrap();
    assert!(z.is_zero());
    let mut r = rng(14);
    let psi = smooth_field_with_mean(&mut r, N, 8, 0.0, 1.0);
    let u = StatePair::new(Field::zeros(N), psi.clone());
    let out = nonlinear_rhs(&u, None, &p, &cfg).unwrap();
    let g0 = psi.abs_d_pow(1.0);
    assert!((&out.eta - &g0).max_abs_coeff() < 1e-14);
    let expected = &psi.dx().product(&psi.dx()).scale(-0.5) + &g0.product(&g0).scale(0.5);
    assert!((&out.psi - &expected).max_abs_coeff() < 1e-13);
}

#[test]
fn nonlinear_rhs_is_quadratically_close_to_linear() {
    let cfg = DnoConfig::default();
    let p = params();
    let mut r = rng(15);
    let base = smooth_pair(&mut r, N, 6, 1.0);
    let f = smooth_field_with_mean(&mut r, N, 6, 0.0, 1.0);
    let deltas = [1e-3, 5e-4, 2.5e-4];
    let errs: Vec<f64> = deltas
        .iter()
        .map(|&d| {
            let u = base.scale(d);
            let pe = f.scale(d);
            let nl = nonlinear_rhs(&u, Some(&pe), &p, &cfg).unwrap();
            let li = linear_rhs(&u, Some(&pe), &p);
            nl.sub(&li).h0_norm()
        })
        .collect();
    let slope = loglog_slope(&deltas, &errs);
    assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
}

#[test]
fn rhs_preserves_reality_and_mean() {
    let cfg = DnoConfig::default();
    let mut r = rng(16);
    let u = smooth_pair(&mut r, N, 8, 0.05);
    let out = nonlinear_rhs(&u, None, &params(), &cfg).unwrap();
    assert!(out.eta.is_real() && out.psi.is_real());
    assert!(out.eta.mean().norm() < 1e-15);
}

#[test]
fn flat_diagonal_variable_examples() {
    let p = PhysParams {
        g: 2.0,
        sigma: 0.5,
        depth: Depth::Infinite,
    };
    let mut r = rng(17);
    let psi = smooth_field_with_mean(&mut r, N, 8, 0.0, 1.0);
    let w = flat_diagonal_variable(&StatePair::new(Field::zeros(N), psi.clone()), &p);
    assert!((&w - &psi).max_abs_coeff() < 1e-15);
    let eta = Field::cos_mode(N, 1, 1.0);
    let w = flat_diagonal_variable(&StatePair::new(eta.clone(), Field::zeros(N)), &p);
    let expected = eta.scale_c(-I * (p.g + p.sigma).sqrt());
    assert!((&w - &expected).max_abs_coeff() < 1e-14);
    for depth in [Depth::Infinite, Depth::Finite(0.8)] {
        let p = PhysParams { depth, ..p };
        let u = smooth_pair(&mut r, N, 12, 1.0);
        let back = from_flat_diagonal_variable(&flat_diagonal_variable(&u, &p), &p);
        assert!(back.sub(&u).h0_norm() < 1e-12 * u.h0_norm());
    }
}
