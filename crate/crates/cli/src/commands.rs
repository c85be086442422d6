//! Subcommand implementations; each writes its artifacts under `cfg.out`.

use hydroctrl_core::dno::SLOPE_LIMIT;
use hydroctrl_core::evolution::{solve_nonlinear, LinearizedSystem, StepperConfig, Trajectory};
use hydroctrl_core::hum::{
    certify_linear, cutoff, first_iterate_error, hum_control, ingham_ratio, nonlinear_control,
    random_terminal_data,
};
use hydroctrl_core::pair::pair_norm;
use hydroctrl_core::StatePair;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::data::random_state;
use crate::failure::{Failure, EXIT_ASSERTION, EXIT_OK};
use crate::io::{
    forcing_csv, half_times, read_state, trajectory_csv, write_atomic, write_json, write_table,
};
use crate::suites::{reduction_analysis, run_suite, stage_json, ReductionAnalysis};

/// Exit code plus a one-line summary for the terminal.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub code: u8,
    pub summary: String,
}

impl Outcome {
    fn new(ok: bool, summary: String) -> Self {
        Outcome {
            code: if ok { EXIT_OK } else { EXIT_ASSERTION },
            summary,
        }
    }
}

/// Cap on the pressure outside the cutoff region.
pub const TAIL_LIMIT: f64 = 1e-10;

/// Initial state from the configured file, else seeded random data of size `amplitude`.
pub fn initial_state(cfg: &RunConfig) -> Result<StatePair, Failure> {
    match &cfg.initial_state {
        Some(p) => read_state(p, cfg.grid.n),
        None => Ok(random_state(
            cfg.grid.n,
            cfg.mode_cutoff,
            cfg.amplitude,
            cfg.control.smallness_index,
            cfg.seed,
        )),
    }
}

fn target_state(cfg: &RunConfig) -> Result<StatePair, Failure> {
    match &cfg.target_state {
        Some(p) => read_state(p, cfg.grid.n),
        None => Ok(StatePair::zeros(cfg.grid.n)),
    }
}

fn max_slope(u: &StatePair) -> f64 {
    u.eta.dx().sup_norm()
}

fn simulate_run(cfg: &RunConfig, u0: &StatePair, dt: f64) -> Result<Trajectory, Failure> {
    Ok(solve_nonlinear(
        u0,
        None,
        cfg.horizon,
        &cfg.params(),
        &cfg.dno(),
        &StepperConfig { dt },
    )?)
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let u0 = initial_state(cfg)?;
    let dt = cfg.step();
    let traj = simulate_run(cfg, &u0, dt)?;
    let rows: Vec<Vec<f64>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, u)| {
            let slope = max_slope(u);
            vec![
                t,
                u.h0_norm(),
                pair_norm(u, 1.0),
                u.eta.sup_norm(),
                slope,
                SLOPE_LIMIT - slope,
            ]
        })
        .collect();
    write_table(
        &cfg.out.join("norms.csv"),
        &["t", "h0", "h1", "eta_sup", "slope", "guard_margin"],
        &rows,
    )?;
    write_atomic(
        &cfg.out.join("trajectory.csv"),
        trajectory_csv(&traj).as_bytes(),
    )?;
    write_atomic(
        &cfg.out.join("forcing.csv"),
        forcing_csv(&half_times(&traj), &traj.forcing).as_bytes(),
    )?;
    let order = if cfg.check_order {
        let b = simulate_run(cfg, &u0, dt / 2.0)?;
        let c = simulate_run(cfg, &u0, dt / 4.0)?;
        let (ab, bc) = (
            traj.final_state().sub(b.final_state()).h0_norm(),
            b.final_state().sub(c.final_state()).h0_norm(),
        );
        Some((ab / bc).log2()).filter(|o| o.is_finite())
    } else {
        None
    };
    let last = traj.final_state();
    let min_margin = rows.iter().map(|r| r[5]).fold(f64::INFINITY, f64::min);
    let summary = json!({
        "n": cfg.grid.n,
        "horizon": cfg.horizon,
        "dt": traj.dt(),
        "steps": traj.steps(),
        "final": {
            "h0": last.h0_norm(),
            "h1": pair_norm(last, 1.0),
            "eta_l2": last.eta.l2_norm(),
            "psi_l2": last.psi.l2_norm(),
        },
        "max_slope": SLOPE_LIMIT - min_margin,
        "guard_margin": min_margin,
        "convergence_order": order,
    });
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(Outcome::new(
        true,
        format!(
            "simulated {} steps, final h0 norm {:.6e}",
            traj.steps(),
            last.h0_norm()
        ),
    ))
}

pub fn verify(cfg: &RunConfig, suite: &str, inject_fault: bool) -> Result<Outcome, Failure> {
    let rep = run_suite(suite, cfg, inject_fault)?;
    write_json(&cfg.out.join(format!("verify_{suite}.json")), &rep)?;
    let failed: Vec<&str> = rep.failures().iter().map(|c| c.name.as_str()).collect();
    let summary = if failed.is_empty() {
        format!("{suite}: {} checks passed", rep.checks.len())
    } else {
        format!(
            "{suite}: {} of {} checks failed: {}",
            failed.len(),
            rep.checks.len(),
            failed.join(", ")
        )
    };
    Ok(Outcome::new(rep.passed, summary))
}

fn linear_background(cfg: &RunConfig, dt: f64) -> Result<LinearizedSystem, Failure> {
    let p = cfg.params();
    if cfg.control.nonflat_background {
        let traj = simulate_run(cfg, &initial_state(cfg)?, dt)?;
        Ok(LinearizedSystem::along(&traj, &p, &cfg.dno())?)
    } else {
        Ok(LinearizedSystem::flat(cfg.grid.n, &p, cfg.horizon, dt)?)
    }
}

pub fn control_linear(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let n = cfg.grid.n;
    let prob = cfg.problem();
    let dt = cfg.step();
    let sys = linear_background(cfg, dt)?;
    let fresh = linear_background(cfg, dt)?;
    let refined = if cfg.control.check_refinement {
        Some(linear_background(cfg, dt / 2.0)?)
    } else {
        None
    };
    let h_end = target_state(cfg)?;
    let starts = match (&cfg.initial_state, cfg.control.nonflat_background) {
        (Some(_), false) => vec![initial_state(cfg)?],
        _ => random_terminal_data(n, cfg.control.targets, cfg.seed),
    };
    let chi = cutoff(n, &prob.omega, prob.transition);
    let mut ok = true;
    let mut runs = Vec::new();
    for (i, h_in) in starts.iter().enumerate() {
        let res = hum_control(&sys, h_in, &h_end, None, &prob)?;
        let certified = certify_linear(&fresh, h_in, &res.control, None, &h_end)?;
        let tail = res.tail_outside(&chi);
        let eta_zero = res.forcing().iter().all(|f| f.eta.max_abs_coeff() == 0.0);
        let refined_constant = match &refined {
            Some(s) => Some(hum_control(s, h_in, &h_end, None, &prob)?.control_constant()),
            None => None,
        };
        let stable = refined_constant.is_none_or(|c| (c - res.control_constant()).abs() <= 0.2 * c);
        let passed =
            certified <= cfg.control.certify_tol && tail <= TAIL_LIMIT && eta_zero && stable;
        ok &= passed;
        if i == 0 {
            write_atomic(
                &cfg.out.join("control_linear.csv"),
                forcing_csv(&sys.sample_times(), &res.control).as_bytes(),
            )?;
        }
        runs.push(json!({
            "target": i,
            "passed": passed,
            "certified_error": certified,
            "final_error_h0": res.final_error_h0,
            "final_error_h1": res.final_error_h1,
            "tail_outside": tail,
            "eta_component_zero": eta_zero,
            "control_norm": res.control_norm,
            "control_constant": res.control_constant(),
            "control_constant_half_step": refined_constant,
            "gramian_iters": res.gramian_iters,
            "cg_residuals": res.cg_history,
        }));
    }
    let worst = runs
        .iter()
        .filter_map(|r| r["certified_error"].as_f64())
        .fold(0.0, f64::max);
    write_json(
        &cfg.out.join("control_linear.json"),
        &json!({ "n": n, "horizon": cfg.horizon, "dt": sys.dt(), "certify_tol": cfg.control.certify_tol, "passed": ok, "runs": runs }),
    )?;
    Ok(Outcome::new(
        ok,
        format!(
            "linear control: {} targets, worst certified error {worst:.3e}",
            starts.len()
        ),
    ))
}

pub fn control_nonlinear(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let prob = cfg.problem();
    let p = cfg.params();
    let dno = cfg.dno();
    let stepper = cfg.stepper();
    let u_in = initial_state(cfg)?;
    let u_end = target_state(cfg)?;
    let res = nonlinear_control(&u_in, &u_end, &prob, &p, &dno, &stepper)?;
    let history = res.error_history();
    let decreasing = history.windows(2).all(|w| w[1] < w[0]);
    let mut sweep = Vec::new();
    for &delta in &cfg.control.delta_sweep {
        let u = random_state(
            cfg.grid.n,
            cfg.mode_cutoff,
            delta,
            prob.smallness_index,
            cfg.seed,
        );
        let first = first_iterate_error(&u, &u_end, &prob, &p, &dno, &stepper)?;
        sweep.push(json!({ "delta": delta, "first_iterate_error": first, "ratio": first / (delta * delta) }));
    }
    let ok = res.certified_error <= prob.newton_tol && decreasing;
    let steps: Vec<Value> = res
        .steps
        .iter()
        .map(|s| json!({ "smoothing_level": s.smoothing_level, "damping": s.damping, "cg_iters": s.cg_iters, "error": s.error }))
        .collect();
    write_atomic(
        &cfg.out.join("control_nonlinear.csv"),
        forcing_csv(&half_times(&res.trajectory), &res.pext).as_bytes(),
    )?;
    write_json(
        &cfg.out.join("control_nonlinear.json"),
        &json!({
            "n": cfg.grid.n,
            "horizon": cfg.horizon,
            "newton_tol": prob.newton_tol,
            "iterations": res.iterations(),
            "error_history": history,
            "strictly_decreasing": decreasing,
            "steps": steps,
            "certified_error": res.certified_error,
            "passed": ok,
            "sweep": sweep,
        }),
    )?;
    Ok(Outcome::new(
        ok,
        format!(
            "nonlinear control: {} iterations, certified error {:.3e}",
            res.iterations(),
            res.certified_error
        ),
    ))
}

pub fn ingham_sweep(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let ic = &cfg.ingham;
    let p = cfg.params();
    let a = ingham_ratio(
        cfg.horizon,
        ic.n_max,
        ic.trials,
        ic.m,
        &p,
        ic.points_per_period,
        cfg.seed,
    )?;
    let b = ingham_ratio(
        cfg.horizon,
        2 * ic.n_max,
        ic.trials,
        ic.m,
        &p,
        ic.points_per_period,
        cfg.seed,
    )?;
    let rows: Vec<Vec<f64>> = a
        .ratios
        .iter()
        .zip(&b.ratios)
        .enumerate()
        .map(|(i, (x, y))| vec![i as f64, *x, *y])
        .collect();
    write_table(
        &cfg.out.join("ingham_sweep.csv"),
        &["trial", "ratio", "ratio_doubled"],
        &rows,
    )?;
    let change = (b.min_ratio - a.min_ratio).abs() / a.min_ratio;
    write_json(
        &cfg.out.join("ingham_sweep.json"),
        &json!({
            "horizon": cfg.horizon,
            "n_max": ic.n_max,
            "trials": ic.trials,
            "min_ratio": a.min_ratio,
            "min_ratio_doubled": b.min_ratio,
            "relative_change": change,
        }),
    )?;
    Ok(Outcome::new(
        true,
        format!(
            "min ratio {:.6} (n_max {}), {:.6} (n_max {})",
            a.min_ratio,
            ic.n_max,
            b.min_ratio,
            2 * ic.n_max
        ),
    ))
}

pub fn reduce_report(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let ReductionAnalysis {
        table: tbl,
        closure,
        stages,
        sample,
    } = reduction_analysis(cfg, false)?;
    let rows: Vec<Vec<f64>> = stages
        .iter()
        .flat_map(|d| {
            d.probe_k
                .iter()
                .zip(d.residual.iter().zip(&d.reference))
                .map(move |(k, (r, f))| vec![d.stage as f64, *k as f64, *r, *f])
        })
        .collect();
    write_table(
        &cfg.out.join("reduction_residuals.csv"),
        &["stage", "k", "residual", "reference"],
        &rows,
    )?;
    let within = stages.iter().all(|d| d.within_ceiling());
    write_json(
        &cfg.out.join("reduction_report.json"),
        &json!({
            "sample": sample,
            "time": tbl.times[sample],
            "m": tbl.m,
            "leading": tbl.leading(),
            "closure": {
                "eq": closure.eq,
                "alpha_beta": closure.alpha_beta,
                "alpha_end": closure.alpha_end,
                "beta_slope": closure.beta_slope,
                "third_order": closure.third_order,
                "a31_mean": closure.a31_mean,
                "gamma0_imag": closure.gamma0_imag,
            },
            "stages": stages.iter().map(stage_json).collect::<Vec<_>>(),
            "all_within_ceiling": within,
        }),
    )?;
    Ok(Outcome::new(
        true,
        format!("reduction report at sample {sample}; ceilings respected: {within}"),
    ))
}
