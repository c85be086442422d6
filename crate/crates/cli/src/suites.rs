//! Property suites behind `verify`.

use hydroctrl_core::dno::{dn_apply, shape_derivative};
use hydroctrl_core::evolution::{solve_nonlinear, LinearizedSystem, StepperConfig, Trajectory};
use hydroctrl_core::hum::{ingham_frequencies, ingham_gram, ingham_quotient, ingham_ratio};
use hydroctrl_core::hydro::{elastic_force, elastic_force_curvature, elastic_linearization};
use hydroctrl_core::reduction::{
    default_probes, reduction_report, ClosureReport, CoeffTable, StageDiagnostics,
};
use hydroctrl_core::spectral::map_fine;
use hydroctrl_core::{Field, StatePair, C64};
use serde_json::json;

use crate::config::RunConfig;
use crate::data::{rng, smooth_field, smooth_pair};
use crate::failure::Failure;
use crate::report::{Check, SuiteReport};

pub const SUITES: [&str; 5] = ["shape", "elastic", "reduction", "adjoint", "ingham"];

const SHAPE_TRIALS: usize = 20;
const SHAPE_STEPS: [f64; 3] = [1e-2, 1e-3, 1e-4];
const SHAPE_SLOPE: (f64, f64) = (1.8, 2.2);
/// `‖η‖_{H⁶}` of the random surfaces in the shape and elastic suites.
const SURFACE_SIZE: f64 = 0.1;
const ELASTIC_TRIALS: usize = 5;
const ELASTIC_FORMS_TOL: f64 = 1e-10;
const ELASTIC_COEFF_TOL: f64 = 1e-11;
const CLOSURE_TOL: f64 = 1e-12;
const ALPHA_BETA_TOL: f64 = 1e-9;
const DUALITY_TOL: f64 = 1e-6;
const DUALITY_TRIALS: u64 = 3;
const REFINEMENT_BAND: f64 = 0.2;
const INGHAM_BAND: f64 = 0.1;
const INGHAM_EXACT_TOL: f64 = 1e-10;

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

pub fn run_suite(name: &str, cfg: &RunConfig, inject_fault: bool) -> Result<SuiteReport, Failure> {
    if inject_fault && name != "reduction" {
        return Err(Failure::config(format!(
            "fault injection is only available for the reduction suite, not {name}"
        )));
    }
    match name {
        "shape" => shape_suite(cfg),
        "elastic" => elastic_suite(cfg),
        "reduction" => reduction_suite(cfg, inject_fault),
        "adjoint" => adjoint_suite(cfg),
        "ingham" => ingham_suite(cfg),
        other => Err(Failure::config(format!(
            "unknown suite {other:?}; expected one of {SUITES:?}"
        ))),
    }
}

fn shape_suite(cfg: &RunConfig) -> Result<SuiteReport, Failure> {
    let n = cfg.grid.n;
    let dno = cfg.dno();
    let depth = cfg.depth();
    let mut r = rng(cfg.seed);
    let mut rep = SuiteReport::new("shape", cfg.seed);
    let mut slopes = Vec::new();
    for trial in 0..SHAPE_TRIALS {
        let eta = smooth_field(&mut r, n, 3, 6.0, SURFACE_SIZE);
        let psi = smooth_pair(&mut r, n, 4, 1.0).psi;
        let dir = smooth_field(&mut r, n, 3, 0.0, 1.0);
        let exact = shape_derivative(&eta, &psi, &dir, depth, &dno)?;
        let mut errs = Vec::new();
        for &e in &SHAPE_STEPS {
            let plus = dn_apply(&eta.axpy(e, &dir), &psi, depth, &dno)?;
            let minus = dn_apply(&eta.axpy(-e, &dir), &psi, depth, &dno)?;
            errs.push((&(&plus - &minus).scale(0.5 / e) - &exact).l2_norm());
        }
        let slope = loglog_slope(&SHAPE_STEPS, &errs);
        rep.push(Check::within(
            format!("difference_slope_{trial:02}"),
            slope,
            Some(SHAPE_SLOPE.0),
            Some(SHAPE_SLOPE.1),
        ));
        slopes.push(json!({ "trial": trial, "errors": errs, "slope": slope }));
    }
    rep.detail("trials", slopes);
    rep.detail("n", n);
    Ok(rep)
}

fn elastic_suite(cfg: &RunConfig) -> Result<SuiteReport, Failure> {
    let n = cfg.grid.n;
    let p = cfg.params();
    let mut rep = SuiteReport::new("elastic", cfg.seed);
    let flat = Field::zeros(n);
    rep.push(Check::at_most(
        "force_at_rest",
        elastic_force(&flat, &p)?.l2_norm(),
        0.0,
    ));
    let rest = elastic_linearization(&flat)?;
    let unit = Field::constant(n, 1.0);
    let rest_defect =
        (&rest.e4 - &unit).l2_norm() + rest.e3.l2_norm() + rest.e2.l2_norm() + rest.e1.l2_norm();
    rep.push(Check::at_most(
        "linearization_at_rest",
        rest_defect,
        ELASTIC_COEFF_TOL,
    ));
    let mut r = rng(cfg.seed);
    for trial in 0..ELASTIC_TRIALS {
        let kmax = (n as i64 / 12).clamp(1, 10);
        let eta = smooth_field(&mut r, n, kmax, 6.0, SURFACE_SIZE);
        let forms = (&elastic_force(&eta, &p)? - &elastic_force_curvature(&eta, &p)?).l2_norm();
        rep.push(Check::at_most(
            format!("forms_agree_{trial}"),
            forms,
            ELASTIC_FORMS_TOL,
        ));
        let coeffs = elastic_linearization(&eta)?;
        let closed = map_fine(&[&eta.dx(), &eta.dxn(2)], |v| {
            -10.0 * v[0] * v[1] / (1.0 + v[0] * v[0]).powf(3.5)
        });
        rep.push(Check::at_most(
            format!("third_coefficient_{trial}"),
            (&coeffs.e3 - &closed).l2_norm(),
            ELASTIC_COEFF_TOL,
        ));
        let twice = coeffs.e4.dx().scale(2.0);
        rep.push(Check::at_most(
            format!("third_is_twice_fourth_derivative_{trial}"),
            (&coeffs.e3 - &twice).l2_norm(),
            ELASTIC_COEFF_TOL,
        ));
    }
    rep.detail("n", n);
    Ok(rep)
}

/// Trajectory for the reduction suite: stored file or a fresh simulation.
pub fn reduction_trajectory(cfg: &RunConfig) -> Result<Trajectory, Failure> {
    match &cfg.reduction.trajectory {
        Some(path) => {
            let forcing = path.with_file_name("forcing.csv");
            let forcing = forcing.exists().then_some(forcing);
            crate::io::read_trajectory(path, forcing.as_deref(), cfg.grid.n)
        }
        None => {
            let u0 = crate::commands::initial_state(cfg)?;
            Ok(solve_nonlinear(
                &u0,
                None,
                cfg.horizon,
                &cfg.params(),
                &cfg.dno(),
                &cfg.stepper(),
            )?)
        }
    }
}

pub fn stage_json(d: &StageDiagnostics) -> serde_json::Value {
    json!({
        "stage": d.stage,
        "ceiling": d.ceiling,
        "fitted_slope": d.fitted_slope,
        "probe_k": d.probe_k,
        "residual": d.residual,
        "reference": d.reference,
    })
}

pub struct ReductionAnalysis {
    pub table: CoeffTable,
    pub closure: ClosureReport,
    pub stages: Vec<StageDiagnostics>,
    pub sample: usize,
}

/// Coefficient table, closure report and stage diagnostics for a config.
pub fn reduction_analysis(
    cfg: &RunConfig,
    inject_fault: bool,
) -> Result<ReductionAnalysis, Failure> {
    let traj = reduction_trajectory(cfg)?;
    let mut tbl = CoeffTable::build(&traj, &cfg.params(), &cfg.dno())?;
    if inject_fault {
        tbl.inject_fault(cfg.reduction.fault);
    }
    let closure = tbl.closure(&traj)?;
    let sample = cfg.reduction.sample.unwrap_or(tbl.samples() / 2);
    if sample >= tbl.samples() {
        return Err(Failure::config(format!(
            "reduction sample {sample} is past the last sample {}",
            tbl.samples() - 1
        )));
    }
    let stages = reduction_report(&tbl, sample, &default_probes(cfg.grid.n))?;
    Ok(ReductionAnalysis {
        table: tbl,
        closure,
        stages,
        sample,
    })
}

fn reduction_suite(cfg: &RunConfig, inject_fault: bool) -> Result<SuiteReport, Failure> {
    let ReductionAnalysis {
        closure,
        stages,
        sample,
        ..
    } = reduction_analysis(cfg, inject_fault)?;
    let mut rep = SuiteReport::new("reduction", cfg.seed);
    for (i, v) in closure.eq.iter().enumerate() {
        rep.push(Check::at_most(
            format!("eq{}_residual", i + 1),
            *v,
            CLOSURE_TOL,
        ));
    }
    rep.push(Check::at_most(
        "time_change_residual",
        closure.alpha_beta,
        ALPHA_BETA_TOL,
    ));
    rep.push(Check::at_most("a31_mean", closure.a31_mean, CLOSURE_TOL));
    rep.push(Check::at_most(
        "gamma0_imaginary_part",
        closure.gamma0_imag,
        CLOSURE_TOL,
    ));
    for d in &stages {
        rep.push(Check::optional_at_most(
            format!("stage{}_slope", d.stage),
            d.fitted_slope,
            d.ceiling,
        ));
    }
    rep.detail("sample", sample);
    rep.detail("injected_fault", inject_fault);
    rep.detail(
        "closure",
        json!({
            "alpha_end": closure.alpha_end,
            "beta_slope": closure.beta_slope,
            "third_order": closure.third_order,
        }),
    );
    rep.detail("stages", stages.iter().map(stage_json).collect::<Vec<_>>());
    Ok(rep)
}

fn duality_defect(sys: &LinearizedSystem, n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let h0 = smooth_pair(&mut r, n, 10.min(n as i64 / 4), 1.0);
    let g1 = smooth_pair(&mut r, n, 10.min(n as i64 / 4), 1.0);
    let fwd = sys.solve(None, &h0).expect("sizes match");
    let adj = sys.solve_adjoint(&g1);
    let end = fwd.last().expect("nodes");
    let lhs = end.h0_inner(&g1);
    let rhs = h0.h0_inner(&adj.nodes[0]);
    (lhs - rhs).norm() / (end.h0_norm() * g1.h0_norm())
}

/// `sup‖h‖ / (‖h0‖ + sup‖f‖)` for a fixed forced run along `traj`.
fn energy_constant(traj: &Trajectory, cfg: &RunConfig, seed: u64) -> Result<f64, Failure> {
    let n = cfg.grid.n;
    let sys = LinearizedSystem::along(traj, &cfg.params(), &cfg.dno())?;
    let h0 = smooth_pair(&mut rng(seed), n, 8.min(n as i64 / 4), 1.0);
    let forcing: Vec<StatePair> = sys
        .sample_times()
        .iter()
        .map(|t| StatePair::new(Field::zeros(n), Field::cos_mode(n, 3, (2.0 * t).cos())))
        .collect();
    let sup_f = forcing.iter().map(StatePair::h0_norm).fold(0.0, f64::max);
    let out = sys.solve(Some(&forcing), &h0)?;
    let sup_u = out.iter().map(StatePair::h0_norm).fold(0.0, f64::max);
    Ok(sup_u / (h0.h0_norm() + sup_f))
}

fn adjoint_suite(cfg: &RunConfig) -> Result<SuiteReport, Failure> {
    let n = cfg.grid.n;
    let p = cfg.params();
    let dt = cfg.step();
    let mut rep = SuiteReport::new("adjoint", cfg.seed);
    let flat = LinearizedSystem::flat(n, &p, cfg.horizon, dt)?;
    let u0 = crate::commands::initial_state(cfg)?;
    let traj = solve_nonlinear(
        &u0,
        None,
        cfg.horizon,
        &p,
        &cfg.dno(),
        &StepperConfig { dt },
    )?;
    let background = LinearizedSystem::along(&traj, &p, &cfg.dno())?;
    for k in 0..DUALITY_TRIALS {
        let seed = cfg.seed.wrapping_add(k);
        rep.push(Check::at_most(
            format!("flat_duality_{k}"),
            duality_defect(&flat, n, seed),
            DUALITY_TOL,
        ));
        rep.push(Check::at_most(
            format!("duality_{k}"),
            duality_defect(&background, n, seed),
            DUALITY_TOL,
        ));
    }
    let half = solve_nonlinear(
        &u0,
        None,
        cfg.horizon,
        &p,
        &cfg.dno(),
        &StepperConfig { dt: dt / 2.0 },
    )?;
    let c1 = energy_constant(&traj, cfg, cfg.seed)?;
    let c2 = energy_constant(&half, cfg, cfg.seed)?;
    rep.push(Check::positive("energy_constant", c1));
    rep.push(Check::at_most(
        "energy_constant_refinement_change",
        (c1 - c2).abs() / c1,
        REFINEMENT_BAND,
    ));
    rep.detail("background_is_flat", background.is_flat());
    rep.detail("dt", dt);
    rep.detail("energy_constants", [c1, c2]);
    Ok(rep)
}

fn ingham_suite(cfg: &RunConfig) -> Result<SuiteReport, Failure> {
    let ic = &cfg.ingham;
    let p = cfg.params();
    let t = cfg.horizon;
    let mut rep = SuiteReport::new("ingham", cfg.seed);
    let base = ingham_ratio(
        t,
        ic.n_max,
        ic.trials,
        ic.m,
        &p,
        ic.points_per_period,
        cfg.seed,
    )?;
    let doubled = ingham_ratio(
        t,
        2 * ic.n_max,
        ic.trials,
        ic.m,
        &p,
        ic.points_per_period,
        cfg.seed,
    )?;
    rep.push(Check::positive("min_ratio", base.min_ratio));
    let change = (doubled.min_ratio - base.min_ratio).abs() / base.min_ratio;
    rep.push(Check::at_most(
        "doubling_relative_change",
        change,
        INGHAM_BAND,
    ));
    let freqs = ingham_frequencies(ic.n_max, ic.m, &p);
    let gram = ingham_gram(&freqs, t, ic.points_per_period)?;
    let single = (0..freqs.len())
        .map(|n0| {
            let mut w = vec![C64::new(0.0, 0.0); freqs.len()];
            w[n0] = C64::new(1.0, 0.0);
            (ingham_quotient(&gram, &w) - t).abs()
        })
        .fold(0.0, f64::max);
    rep.push(Check::at_most(
        "single_mode_equals_horizon",
        single,
        INGHAM_EXACT_TOL,
    ));
    let mut pair = vec![C64::new(0.0, 0.0); freqs.len()];
    pair[1] = C64::new(1.0, 0.0);
    let two_mode = if freqs.len() > 2 {
        pair[2] = C64::new(1.0, 0.0);
        let delta = freqs[2] - freqs[1];
        let cross = (C64::from_polar(1.0, delta * t) - 1.0) / C64::new(0.0, delta);
        (ingham_quotient(&gram, &pair) - (t + cross.re)).abs()
    } else {
        0.0
    };
    rep.push(Check::at_most(
        "two_mode_closed_form",
        two_mode,
        INGHAM_EXACT_TOL,
    ));
    rep.detail("min_ratio", base.min_ratio);
    rep.detail("min_ratio_doubled", doubled.min_ratio);
    rep.detail("ratios", &base.ratios);
    Ok(rep)
}
