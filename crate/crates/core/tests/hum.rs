mod common;

use std::f64::consts::PI;

use common::{rng, smooth_pair};
use hydroctrl_core::dno::DnoConfig;
use hydroctrl_core::evolution::{
    default_dt, solve_nonlinear, LinearizedSystem, StepperConfig, Trajectory,
};
use hydroctrl_core::hum::*;
use hydroctrl_core::hydro::PhysParams;
use hydroctrl_core::spectral::{Field, C64};
use hydroctrl_core::{Error, StatePair};
use proptest::prelude::*;

fn params() -> PhysParams {
    PhysParams::default()
}

fn problem(horizon: f64, omega: Vec<(f64, f64)>) -> ControlProblem {
    ControlProblem {
        horizon,
        omega,
        ..ControlProblem::default()
    }
}

fn wavy(n: usize, amp: f64, horizon: f64, dt: f64) -> Trajectory {
    let mut r = rng(11);
    let u0 = smooth_pair(&mut r, n, 3, amp);
    solve_nonlinear(
        &u0,
        None,
        horizon,
        &params(),
        &DnoConfig::default(),
        &StepperConfig { dt },
    )
    .unwrap()
}

fn cos_mode(n: usize, k: i64, eta: f64, psi: f64) -> StatePair {
    let mut e = Field::zeros(n);
    let mut p = Field::zeros(n);
    e.set_coeff(k, C64::new(0.5 * eta, 0.0));
    e.set_coeff(-k, C64::new(0.5 * eta, 0.0));
    p.set_coeff(k, C64::new(0.5 * psi, 0.0));
    p.set_coeff(-k, C64::new(0.5 * psi, 0.0));
    StatePair::new(e, p)
}

#[test]
fn problem_validation() {
    assert!(ControlProblem::default().validate().is_ok());
    let bad = [
        problem(0.0, vec![(0.0, 1.0)]),
        problem(1.0, vec![]),
        problem(1.0, vec![(1.0, 0.5)]),
        problem(1.0, vec![(0.0, 0.05)]),
        ControlProblem {
            cg_tol: 1.0,
            ..ControlProblem::default()
        },
        ControlProblem {
            newton_tol: 0.0,
            ..ControlProblem::default()
        },
        ControlProblem {
            cg_maxiter: 0,
            ..ControlProblem::default()
        },
    ];
    for p in bad {
        assert!(
            matches!(p.validate(), Err(Error::InvalidConfig(_))),
            "{p:?}"
        );
    }
}

#[test]
fn cutoff_shape() {
    let w = 2.0 * PI / 64.0;
    let arc = [(0.0, PI / 2.0)];
    assert_eq!(cutoff_value(PI / 4.0, &arc, w), 1.0);
    assert_eq!(cutoff_value(PI, &arc, w), 0.0);
    assert_eq!(cutoff_value(0.0, &arc, w), 0.0);
    assert!((cutoff_value(0.5 * w, &arc, w) - 0.5).abs() < 1e-12);
    assert_eq!(cutoff_value(3.0, &[(0.0, 2.0 * PI)], w), 1.0);
    // arcs wrap around the circle
    assert_eq!(cutoff_value(0.1, &[(6.0, 6.0 + PI / 2.0)], w), 1.0);
    let chi = cutoff(64, &arc, w);
    assert!(chi
        .to_grid_real()
        .iter()
        .all(|&v| (-1e-14..=1.0 + 1e-14).contains(&v)));
}

#[test]
fn ingham_single_mode_gives_horizon() {
    let p = params();
    let freqs = ingham_frequencies(6, 1.0, &p);
    let gram = ingham_gram(&freqs, 0.5, 24).unwrap();
    for n0 in 0..=6 {
        let mut w = vec![C64::new(0.0, 0.0); 7];
        w[n0] = C64::new(0.3, -0.7);
        assert!((ingham_quotient(&gram, &w) - 0.5).abs() <= 1e-12);
    }
}

#[test]
fn ingham_two_modes_match_closed_form() {
    let p = params();
    let horizon = 0.5;
    let freqs = ingham_frequencies(2, 1.0, &p);
    let gram = ingham_gram(&freqs, horizon, 20).unwrap();
    let w = vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
    let delta = freqs[2] - freqs[1];
    let cross = (C64::from_polar(1.0, delta * horizon) - 1.0) / C64::new(0.0, delta);
    let expected = (2.0 * horizon + 2.0 * cross.re) / 2.0;
    assert!((ingham_quotient(&gram, &w) - expected).abs() <= 1e-10);
}

#[test]
fn ingham_frequencies_follow_dispersion() {
    let p = PhysParams {
        g: 2.0,
        sigma: 0.5,
        ..params()
    };
    let f = ingham_frequencies(3, 1.5, &p);
    assert_eq!(f[0], 0.0);
    assert!((f[3] - (1.5f64 * 3.0 * (2.0 + 0.5 * 81.0)).sqrt()).abs() < 1e-12);
}

#[test]
fn ingham_rejects_coarse_quadrature() {
    let freqs = ingham_frequencies(4, 1.0, &params());
    assert!(matches!(
        ingham_gram(&freqs, 0.5, 19),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn ingham_minimum_is_positive_and_deterministic() {
    let p = params();
    let a = ingham_ratio(0.5, 20, 50, 1.0, &p, 20, 7).unwrap();
    let b = ingham_ratio(0.5, 20, 50, 1.0, &p, 20, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.min_ratio > 0.0);
    assert!(a.ratios.iter().all(|&r| r >= a.min_ratio));
}

#[test]
fn gramian_of_zero_is_zero() {
    let sys = LinearizedSystem::flat(32, &params(), 0.2, 0.005).unwrap();
    let g = gramian_apply(&sys, &StatePair::zeros(32), &problem(0.2, vec![(0.0, PI)])).unwrap();
    assert!(g.is_zero());
}

#[test]
fn gramian_is_symmetric_along_a_trajectory() {
    let traj = wavy(32, 0.03, 0.2, 0.005);
    let sys = LinearizedSystem::along(&traj, &params(), &DnoConfig::default()).unwrap();
    let prob = problem(0.2, vec![(0.5, 2.5)]);
    let gram = Gramian::new(&sys, &prob).unwrap();
    let data = random_terminal_data(32, 4, 5);
    for pair in data.windows(2) {
        let (f, g) = (&pair[0], &pair[1]);
        let lhs = gram.apply(f).unwrap().h0_inner(g).re;
        let rhs = f.h0_inner(&gram.apply(g).unwrap()).re;
        assert!(
            (lhs - rhs).abs() <= 1e-9 * f.h0_norm() * g.h0_norm(),
            "{lhs} vs {rhs}"
        );
        assert!(gram.apply(f).unwrap().h0_inner(f).re >= 0.0);
    }
}

/// `∫_0^T ‖e^{L*s} v‖²` per cosine mode for the flat adjoint flow.
fn flat_mode_integral(k: i64, v: (f64, f64), horizon: f64, p: &PhysParams) -> f64 {
    let a = k.abs() as f64;
    let b = p.restoring_symbol(k);
    let k3 = a.powi(3);
    let om = (a * b).sqrt();
    let w = (-b * v.1 / (k3 * om), a * k3 * v.0 / om);
    let dot = |x: (f64, f64), y: (f64, f64)| k3 * x.0 * y.0 + x.1 * y.1;
    let s2 = (2.0 * om * horizon).sin() / (4.0 * om);
    (horizon / 2.0 + s2) * dot(v, v)
        + (horizon / 2.0 - s2) * dot(w, w)
        + 2.0 * (om * horizon).sin().powi(2) / (2.0 * om) * dot(v, w)
}

#[test]
fn full_torus_observability_matches_per_mode_integral() {
    let p = params();
    let sys = LinearizedSystem::flat(32, &p, 0.5, 1e-3).unwrap();
    let chi = cutoff(32, &[(0.0, 2.0 * PI)], 0.1);
    for k in 1..=3 {
        for v in [(1.0, 0.0), (0.0, 1.0), (0.4, -0.7)] {
            let y = cos_mode(32, k, v.0, v.1);
            let got = observability_ratios(&sys, &chi, std::slice::from_ref(&y)).ratios[0];
            let norm = (k as f64).powi(3) * v.0 * v.0 + v.1 * v.1;
            let expected = flat_mode_integral(k, v, 0.5, &p) / norm;
            assert!(
                (got - expected).abs() <= 1e-6 * expected,
                "k={k} {got} vs {expected}"
            );
        }
    }
}

#[test]
fn full_torus_gramian_is_diagonal_and_positive_per_mode() {
    let p = params();
    let n = 32;
    let prob = problem(0.5, vec![(0.0, 2.0 * PI)]);
    let mut mins = Vec::new();
    for dt in [4e-3, 2e-3] {
        let sys = LinearizedSystem::flat(n, &p, 0.5, dt).unwrap();
        let gram = Gramian::new(&sys, &prob).unwrap();
        let mut smallest = f64::INFINITY;
        for k in 1..=(n as i64 / 4) {
            let cols: Vec<StatePair> = [(1.0, 0.0), (0.0, 1.0)]
                .iter()
                .map(|v| cos_mode(n, k, v.0, v.1))
                .collect();
            let images: Vec<StatePair> = cols.iter().map(|c| gram.apply(c).unwrap()).collect();
            for img in &images {
                for j in 0..=(n as i64 / 2) {
                    if j != k {
                        assert!(img.eta.coeff(j).norm() + img.psi.coeff(j).norm() <= 1e-12);
                    }
                }
            }
            // 2x2 block in the ℋ⁰-orthonormal basis
            let scale = [cols[0].h0_norm(), cols[1].h0_norm()];
            let m = |i: usize, j: usize| images[j].h0_inner(&cols[i]).re / (scale[i] * scale[j]);
            let (a, b, c) = (m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), m(1, 1));
            let lam = 0.5 * (a + c) - (0.25 * (a - c).powi(2) + b * b).sqrt();
            assert!(lam > 0.0, "k={k} eigenvalue {lam}");
            smallest = smallest.min(lam);
        }
        mins.push(smallest);
    }
    assert!((mins[0] - mins[1]).abs() <= 0.05 * mins[1], "{mins:?}");
}

#[test]
fn mode_zero_observability_is_cutoff_average() {
    let p = params();
    let sys = LinearizedSystem::flat(64, &p, 0.7, 0.01).unwrap();
    let chi = cutoff(64, &[(0.0, PI / 2.0)], 2.0 * PI / 64.0);
    let y = StatePair::new(Field::zeros(64), Field::constant(64, 1.0));
    let got = observability_ratios(&sys, &chi, &[y]).ratios[0];
    let mean_sq = chi.to_grid_real().iter().map(|v| v * v).sum::<f64>() / 64.0;
    assert!(
        (got - 0.7 * mean_sq).abs() <= 1e-12,
        "{got} vs {}",
        0.7 * mean_sq
    );
}

#[test]
fn partial_observability_is_positive() {
    let p = params();
    let sys = LinearizedSystem::flat(32, &p, 0.5, default_dt(32, &p, 0.5)).unwrap();
    let prob = problem(0.5, vec![(0.0, PI / 2.0)]);
    let rep = observability_estimate(&sys, &prob, 8, 3).unwrap();
    assert!(rep.min_ratio > 0.0);
    assert_eq!(rep.ratios_before_weight.len(), 8);
}

#[test]
fn zero_data_needs_no_control() {
    let sys = LinearizedSystem::flat(32, &params(), 0.3, 0.01).unwrap();
    let z = StatePair::zeros(32);
    let res = hum_control(&sys, &z, &z, None, &problem(0.3, vec![(0.0, PI)])).unwrap();
    assert_eq!(res.gramian_iters, 0);
    assert!(res.control.iter().all(|c| c.max_abs_coeff() == 0.0));
    assert!(res.states.iter().all(StatePair::is_zero));
}

#[test]
fn flat_control_reaches_rest() {
    let p = params();
    let n = 64;
    let horizon = 1.0;
    let sys = LinearizedSystem::flat(n, &p, horizon, default_dt(n, &p, horizon)).unwrap();
    let prob = ControlProblem {
        cg_tol: 1e-10,
        ..problem(horizon, vec![(0.0, PI / 2.0)])
    };
    let h_in = random_terminal_data(n, 1, 21).remove(0);
    let z = StatePair::zeros(n);
    let res = hum_control(&sys, &h_in, &z, None, &prob).unwrap();
    let fresh = LinearizedSystem::flat(n, &p, horizon, default_dt(n, &p, horizon)).unwrap();
    let err = certify_linear(&fresh, &h_in, &res.control, None, &z).unwrap();
    assert!(err <= 1e-6, "final error {err:e}");
    assert!((err - res.final_error_h0).abs() <= 1e-12);
    assert!(res.forcing().iter().all(|f| f.eta.max_abs_coeff() == 0.0));
    let chi = cutoff(n, &prob.omega, prob.transition);
    assert!(res.tail_outside(&chi) <= 1e-10);
    assert!(res.control_constant().is_finite() && res.control_constant() > 0.0);
}

#[test]
fn control_with_forcing_and_target() {
    let p = params();
    let n = 32;
    let horizon = 0.5;
    let dt = default_dt(n, &p, horizon);
    let sys = LinearizedSystem::flat(n, &p, horizon, dt).unwrap();
    let prob = ControlProblem {
        cg_tol: 1e-11,
        ..problem(horizon, vec![(1.0, 4.0)])
    };
    let mut data = random_terminal_data(n, 3, 8);
    let (h_in, h_end, q0) = (data.remove(0), data.remove(0).scale(0.5), data.remove(0));
    let q: Vec<StatePair> = (0..=2 * sys.steps())
        .map(|s| q0.scale((s as f64 * 0.1).sin()))
        .collect();
    let res = hum_control(&sys, &h_in, &h_end, Some(&q), &prob).unwrap();
    let err = certify_linear(&sys, &h_in, &res.control, Some(&q), &h_end).unwrap();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn control_constant_is_stable_under_refinement() {
    let p = params();
    let n = 32;
    let horizon = 0.5;
    let prob = ControlProblem {
        cg_tol: 1e-11,
        ..problem(horizon, vec![(0.0, PI)])
    };
    let h_in = random_terminal_data(n, 1, 2).remove(0);
    let z = StatePair::zeros(n);
    let dt = default_dt(n, &p, horizon);
    let consts: Vec<f64> = [dt, dt / 2.0]
        .iter()
        .map(|&d| {
            let sys = LinearizedSystem::flat(n, &p, horizon, d).unwrap();
            hum_control(&sys, &h_in, &z, None, &prob)
                .unwrap()
                .control_constant()
        })
        .collect();
    assert!(
        (consts[0] - consts[1]).abs() <= 0.2 * consts[1],
        "{consts:?}"
    );
}

#[test]
fn exhausted_budget_reports_history() {
    let p = params();
    let sys = LinearizedSystem::flat(32, &p, 0.5, default_dt(32, &p, 0.5)).unwrap();
    let prob = ControlProblem {
        cg_tol: 1e-12,
        cg_maxiter: 2,
        ..problem(0.5, vec![(0.0, 1.0)])
    };
    let h_in = random_terminal_data(32, 1, 4).remove(0);
    match hum_control(&sys, &h_in, &StatePair::zeros(32), None, &prob) {
        Err(Error::Budget { history, .. }) => assert_eq!(history.len(), 2),
        other => panic!("expected budget error, got {other:?}"),
    }
}

#[test]
fn nonlinear_zero_data_takes_no_iterations() {
    let z = StatePair::zeros(32);
    let prob = problem(0.5, vec![(0.0, PI)]);
    let res = nonlinear_control(
        &z,
        &z,
        &prob,
        &params(),
        &DnoConfig::default(),
        &StepperConfig { dt: 0.01 },
    )
    .unwrap();
    assert_eq!(res.iterations(), 0);
    assert!(res.pext.iter().all(|f| f.max_abs_coeff() == 0.0));
    assert!(res.trajectory.states.iter().all(StatePair::is_zero));
}

#[test]
fn nonlinear_control_rejects_large_data() {
    let mut r = rng(1);
    let u = smooth_pair(&mut r, 32, 3, 0.5);
    let prob = problem(0.5, vec![(0.0, PI)]);
    let res = nonlinear_control(
        &u,
        &StatePair::zeros(32),
        &prob,
        &params(),
        &DnoConfig::default(),
        &StepperConfig { dt: 0.01 },
    );
    assert!(matches!(res, Err(Error::Guard { .. })));
}

#[test]
fn nonlinear_control_converges_for_small_data() {
    let p = params();
    let n = 32;
    let horizon = 1.0;
    let delta = 1e-3;
    let mut r = rng(6);
    let u_in = smooth_pair(&mut r, n, 3, delta);
    let prob = ControlProblem {
        newton_tol: 1e-3 * delta,
        cg_tol: 1e-10,
        ..problem(horizon, vec![(0.0, PI)])
    };
    let stepper = StepperConfig {
        dt: default_dt(n, &p, horizon),
    };
    let res = nonlinear_control(
        &u_in,
        &StatePair::zeros(n),
        &prob,
        &p,
        &DnoConfig::default(),
        &stepper,
    )
    .unwrap();
    assert!(res.iterations() <= 8);
    assert!(
        res.certified_error <= 1e-3 * delta,
        "{:e}",
        res.certified_error
    );
    let hist = res.error_history();
    assert!(hist.windows(2).all(|w| w[1] < w[0]), "{hist:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cutoff_lies_in_unit_interval(a in 0.0..6.0f64, len in 0.3..6.0f64, x in -10.0..10.0f64) {
        let v = cutoff_value(x, &[(a, a + len)], 0.1);
        prop_assert!((0.0..=1.0).contains(&v));
        let d = (x - a).rem_euclid(2.0 * PI);
        if d >= len {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn ingham_quotient_is_bounded_by_gram_spectrum(seed in 0u64..1000) {
        let freqs = ingham_frequencies(5, 1.0, &params());
        let gram = ingham_gram(&freqs, 0.5, 20).unwrap();
        let rep = ingham_ratio(0.5, 5, 5, 1.0, &params(), 20, seed).unwrap();
        // Gershgorin bound on the Hermitian Gram matrix
        let bound = gram.iter().map(|r| r.iter().map(|c| c.norm()).sum::<f64>()).fold(0.0, f64::max);
        for r in rep.ratios {
            prop_assert!(r > 0.0 && r <= bound + 1e-12);
        }
    }
}
