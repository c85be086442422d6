use hydroctrl_core::pair::{pair_norm, StatePair};
use hydroctrl_core::spectral::{g0_symbol, Depth, Field, GridSpec, SobolevKind, C64, I};
use proptest::prelude::*;

const N: usize = 32;

fn close(a: &Field, b: &Field, tol: f64) -> bool {
    (a - b).max_abs_coeff() <= tol
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
fn grid_spec_rejects_bad_sizes() {
    assert!(GridSpec::new(6, Depth::Infinite).is_err());
    assert!(GridSpec::new(9, Depth::Infinite).is_err());
    assert!(GridSpec::new(16, Depth::Finite(-1.0)).is_err());
    assert!(GridSpec::new(16, Depth::Finite(2.0)).is_ok());
}

#[test]
fn abs_d_on_single_mode_scales_by_wavenumber() {
    let f = Field::exp_mode(N, 3, c(1.0, 0.0));
    let out = f.multiplier(|k| c((k as f64).abs(), 0.0)).unwrap();
    assert!(close(&out, &f.scale(3.0), 1e-15));
}

#[test]
fn abs_d_power_kills_constants() {
    for alpha in [-1.5, 0.5, 1.0, 2.5] {
        assert_eq!(
            Field::constant(N, 1.0).abs_d_pow(alpha).max_abs_coeff(),
            0.0
        );
    }
}

#[test]
fn finite_depth_flat_operator_on_cos() {
    let f = Field::cos_mode(N, 1, 1.0);
    let out = f.g0(Depth::Finite(1.0));
    assert!(close(&out, &f.scale(1f64.tanh()), 1e-15));
    assert!((g0_symbol(1, Depth::Finite(1.0)) - 0.761594).abs() < 1e-6);
}

#[test]
fn multiplier_rejects_non_finite_symbol() {
    let f = Field::cos_mode(N, 1, 1.0);
    assert!(f
        .multiplier(|k| if k == 2 {
            c(f64::NAN, 0.0)
        } else {
            c(1.0, 0.0)
        })
        .is_err());
}

#[test]
fn multiplier_tracks_reality() {
    let f = Field::cos_mode(N, 2, 1.0);
    assert!(f
        .multiplier(|k| c((k as f64).powi(2), 0.0))
        .unwrap()
        .is_real());
    assert!(!f.multiplier(|k| c(k as f64, 0.0)).unwrap().is_real());
    assert!(f.multiplier(|k| I * k as f64).unwrap().is_real());
}

#[test]
fn hilbert_examples() {
    assert_eq!(Field::constant(N, 1.0).hilbert().max_abs_coeff(), 0.0);
    let e = Field::exp_mode(N, 1, c(1.0, 0.0));
    assert!(close(&e.hilbert(), &e.scale_c(-I), 1e-15));
    assert!(close(
        &Field::cos_mode(N, 2, 1.0).hilbert(),
        &Field::sin_mode(N, 2, 1.0),
        1e-15
    ));
}

#[test]
fn antiderivative_examples() {
    let e = Field::exp_mode(N, 2, c(1.0, 0.0));
    assert!(close(
        &e.antiderivative(),
        &e.scale_c(c(1.0, 0.0) / (I * 2.0)),
        1e-15
    ));
    assert_eq!(
        Field::constant(N, 1.0).antiderivative().max_abs_coeff(),
        0.0
    );
    assert!(close(
        &Field::cos_mode(N, 1, 1.0).antiderivative(),
        &Field::sin_mode(N, 1, 1.0),
        1e-15
    ));
}

#[test]
fn sobolev_norm_examples() {
    let f = Field::exp_mode(N, 2, c(1.0, 0.0));
    for s in [-1.0, 0.0, 0.5, 3.0] {
        assert!((f.sobolev_norm(s, SobolevKind::Homogeneous) - 2f64.powf(s)).abs() < 1e-14);
    }
    assert_eq!(
        Field::zeros(N).sobolev_norm(2.0, SobolevKind::Homogeneous),
        0.0
    );
    let g = &Field::exp_mode(N, 1, c(1.0, 0.0)) + &Field::exp_mode(N, 3, c(1.0, 0.0));
    assert!((g.sobolev_norm(1.0, SobolevKind::Homogeneous) - 10f64.sqrt()).abs() < 1e-14);
}

#[test]
fn smoothing_projector_examples() {
    let e5 = Field::exp_mode(N, 5, c(1.0, 0.0));
    assert_eq!(e5.smoothing_projector(2).max_abs_coeff(), 0.0);
    assert_eq!(e5.smoothing_projector(3), e5);
    let one = Field::constant(N, 1.0);
    assert_eq!(one.smoothing_projector(0), one);
}

#[test]
fn pair_norm_is_euclidean() {
    let u = StatePair::new(
        Field::exp_mode(N, 1, c(1.0, 0.0)),
        Field::exp_mode(N, 2, c(1.0, 0.0)),
    );
    let expected = 2f64.sqrt();
    assert!((pair_norm(&u, 0.0) - expected).abs() < 1e-14);
    assert!((u.h0_norm() - expected).abs() < 1e-14);
}

#[test]
fn dealiased_product_of_cosines() {
    let a = Field::cos_mode(N, 3, 1.0);
    let out = a.product(&a);
    let expected = &Field::constant(N, 0.5) + &Field::cos_mode(N, 6, 0.5);
    assert!(close(&out, &expected, 1e-15));
}

#[test]
fn padded_sampling_interpolates() {
    let f = &Field::cos_mode(N, 3, 0.7) + &Field::sin_mode(N, 5, -0.2);
    let m = 48;
    let samples = f.sample_on(m);
    for (j, v) in samples.iter().enumerate() {
        let x = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
        let exact = 0.7 * (3.0 * x).cos() - 0.2 * (5.0 * x).sin();
        assert!((v.re - exact).abs() < 1e-14 && v.im.abs() < 1e-14);
        assert!((f.eval_at(x).re - exact).abs() < 1e-13);
    }
}

fn field_strategy(real: bool) -> impl Strategy<Value = Field> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), N).prop_map(move |v| {
        let coeffs: Vec<C64> = v.into_iter().map(|(a, b)| c(a, b)).collect();
        let mut f = Field::from_coeffs(coeffs).unwrap();
        // Nyquist-free fields make products and multipliers exactly adjoint.
        f.set_coeff((N / 2) as i64, c(0.0, 0.0));
        if real {
            f = f.to_real();
        }
        f
    })
}

proptest! {
    #[test]
    fn grid_round_trip(f in field_strategy(false)) {
        let back = Field::from_grid_complex(&f.to_grid());
        prop_assert!((&back - &f).l2_norm() <= 1e-12 * f.l2_norm().max(1.0));
    }

    #[test]
    fn real_round_trip_and_flag(f in field_strategy(true)) {
        prop_assert!(f.is_real());
        let grid = f.to_grid();
        prop_assert!(grid.iter().all(|v| v.im.abs() < 1e-12));
        let back = Field::from_grid_real(&f.to_grid_real());
        prop_assert!((&back - &f).l2_norm() <= 1e-12 * f.l2_norm().max(1.0));
    }

    #[test]
    fn parseval(f in field_strategy(false), g in field_strategy(false)) {
        let a = f.to_grid();
        let b = g.to_grid();
        let grid: C64 = a.iter().zip(&b).map(|(x, y)| x * y.conj()).sum::<C64>() / N as f64;
        let spectral = f.inner(&g);
        prop_assert!((grid - spectral).norm() <= 1e-12 * (1.0 + spectral.norm()));
    }

    #[test]
    fn multiplier_composition(f in field_strategy(false), p in 0.0f64..3.0, q in -2.0f64..2.0) {
        let s1 = |k: i64| c((k as f64).abs().powf(p), k as f64);
        let s2 = |k: i64| c(1.0 + (k as f64).powi(2) * q, 0.5);
        let lhs = f.multiplier(s1).unwrap().multiplier(s2).unwrap();
        let rhs = f.multiplier(|k| s1(k) * s2(k)).unwrap();
        prop_assert!((&lhs - &rhs).max_abs_coeff() <= 1e-15 * (1.0 + rhs.max_abs_coeff()));
    }

    #[test]
    fn derivative_inverts_antiderivative(f in field_strategy(false)) {
        let mf = f.without_mean();
        prop_assert!((&mf.antiderivative().dx() - &mf).max_abs_coeff() <= 1e-15);
    }

    #[test]
    fn hilbert_squared_is_minus_identity(f in field_strategy(false)) {
        let mf = f.without_mean();
        prop_assert!((&f.hilbert().hilbert() + &mf).max_abs_coeff() <= 1e-15);
    }

    #[test]
    fn projector_idempotent_and_contracting(f in field_strategy(false), j in 0u32..5, s in -1.0f64..3.0) {
        let once = f.smoothing_projector(j);
        prop_assert_eq!(once.smoothing_projector(j), once.clone());
        for kind in [SobolevKind::Homogeneous, SobolevKind::Inhomogeneous] {
            prop_assert!(once.sobolev_norm(s, kind) <= f.sobolev_norm(s, kind) + 1e-15);
        }
    }

    #[test]
    fn product_is_self_adjoint_multiplication(a in field_strategy(true), f in field_strategy(false), g in field_strategy(false)) {
        let lhs = a.product(&f).inner(&g);
        let rhs = f.inner(&a.product(&g));
        prop_assert!((lhs - rhs).norm() <= 1e-13);
    }
}
