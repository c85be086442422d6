//! Ingham sums, observability, HUM control of the linearized system and the
//! smoothed Newton loop for the nonlinear one.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dno::DnoConfig;
use crate::error::{Error, Result};
use crate::evolution::{solve_nonlinear, LinearizedSystem, StepperConfig, Trajectory};
use crate::hydro::PhysParams;
use crate::pair::{pair_norm, StatePair};
use crate::spectral::{grid_points, Field, C64};

/// Everything a control run needs besides the dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlProblem {
    pub horizon: f64,
    /// Open arcs `(a, b)` of the circle, `0 <= a < b <= a + 2π`.
    pub omega: Vec<(f64, f64)>,
    /// Width of the raised-cosine transition of the cutoff.
    pub transition: f64,
    pub cg_tol: f64,
    pub cg_maxiter: usize,
    pub newton_tol: f64,
    pub newton_maxiter: usize,
    /// `j0` in the smoothing schedule `j(n) = n + j0`.
    pub smoothing_offset: u32,
    /// Add `1e-12·I` to the Gramian.
    pub tikhonov: bool,
    /// Bound on `‖u_in‖ + ‖u_end‖` in `ℋ^s` with `s = smallness_index`.
    pub smallness: f64,
    pub smallness_index: f64,
}

impl Default for ControlProblem {
    fn default() -> Self {
        ControlProblem {
            horizon: 1.0,
            omega: vec![(0.0, PI / 2.0)],
            transition: 2.0 * PI / 64.0,
            cg_tol: 1e-10,
            cg_maxiter: 500,
            newton_tol: 1e-6,
            newton_maxiter: 8,
            smoothing_offset: 3,
            tikhonov: false,
            smallness: 0.1,
            smallness_index: 1.0,
        }
    }
}

const TIKHONOV_SHIFT: f64 = 1e-12;

impl ControlProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("horizon must be positive"));
        }
        if self.omega.is_empty() {
            return Err(Error::config("control region is empty"));
        }
        for &(a, b) in &self.omega {
            if !(a.is_finite() && b.is_finite() && b > a && b - a <= 2.0 * PI + 1e-12) {
                return Err(Error::config(format!("bad control arc ({a}, {b})")));
            }
            if b - a < 2.0 * PI - 1e-12 && !(2.0 * self.transition < b - a) {
                return Err(Error::config(format!(
                    "arc ({a}, {b}) is narrower than two transition widths"
                )));
            }
        }
        if !(self.transition > 0.0 && self.transition.is_finite()) {
            return Err(Error::config("transition width must be positive"));
        }
        for (name, v) in [("cg_tol", self.cg_tol), ("newton_tol", self.newton_tol)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.cg_maxiter == 0 || self.newton_maxiter == 0 {
            return Err(Error::config("iteration budgets must be positive"));
        }
        if !(self.smallness > 0.0) {
            return Err(Error::config("smallness bound must be positive"));
        }
        Ok(())
    }
}

fn raised_cosine(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        0.5 * (1.0 - (PI * s).cos())
    }
}

/// Value of the smoothed indicator of the arcs at `x`.
pub fn cutoff_value(x: f64, omega: &[(f64, f64)], transition: f64) -> f64 {
    let mut best: f64 = 0.0;
    for &(a, b) in omega {
        let len = b - a;
        if len >= 2.0 * PI - 1e-12 {
            return 1.0;
        }
        let d = (x - a).rem_euclid(2.0 * PI);
        if d < len {
            best =
                best.max(raised_cosine(d / transition).min(raised_cosine((len - d) / transition)));
        }
    }
    best
}

/// Smoothed indicator of the control region sampled on the grid.
pub fn cutoff(n: usize, omega: &[(f64, f64)], transition: f64) -> Field {
    let vals: Vec<f64> = grid_points(n)
        .iter()
        .map(|&x| cutoff_value(x, omega, transition))
        .collect();
    Field::from_grid_real(&vals)
}

/// Flat dispersion frequencies `𝔱(n) = (m n (g + σn⁴))^{1/2}`, `n = 0..=n_max`.
pub fn ingham_frequencies(n_max: usize, m: f64, p: &PhysParams) -> Vec<f64> {
    (0..=n_max)
        .map(|n| (m * n as f64 * p.restoring_symbol(n as i64)).sqrt())
        .collect()
}

/// Gram matrix `Q_{nm} = ∫_0^T e^{-i(𝔱_n − 𝔱_m)t} dt` by composite Gauss-Legendre
/// with panels one shortest period long.
pub fn ingham_gram(freqs: &[f64], horizon: f64, points_per_period: usize) -> Result<Vec<Vec<C64>>> {
    if points_per_period < 20 {
        return Err(Error::config(
            "at least 20 quadrature points per period are required",
        ));
    }
    if !(horizon > 0.0) || freqs.is_empty() {
        return Err(Error::config(
            "Ingham sums need a positive horizon and at least one frequency",
        ));
    }
    let top = freqs.iter().cloned().fold(0.0, f64::max);
    let panels = if top > 0.0 {
        (horizon * top / (2.0 * PI)).ceil().max(1.0) as usize
    } else {
        1
    };
    let width = horizon / panels as f64;
    let rule = GaussLegendre::new(NonZeroUsize::new(points_per_period).expect("positive"));
    let nodes = rule.as_node_weight_pairs().to_vec();
    let dim = freqs.len();
    const CHUNK: usize = 32;
    let chunks = panels.div_ceil(CHUNK);
    let partials: Vec<Vec<C64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut q = vec![C64::new(0.0, 0.0); dim * dim];
            let mut e = vec![C64::new(0.0, 0.0); dim];
            for panel in c * CHUNK..((c + 1) * CHUNK).min(panels) {
                let a = panel as f64 * width;
                for &(x, w) in &nodes {
                    let t = a + 0.5 * width * (x + 1.0);
                    let wt = 0.5 * width * w;
                    for (ei, f) in e.iter_mut().zip(freqs) {
                        *ei = C64::from_polar(1.0, -f * t);
                    }
                    for i in 0..dim {
                        let wi = e[i] * wt;
                        for j in 0..dim {
                            q[i * dim + j] += wi * e[j].conj();
                        }
                    }
                }
            }
            q
        })
        .collect();
    let mut total = vec![C64::new(0.0, 0.0); dim * dim];
    for part in &partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    Ok(total.chunks(dim).map(|r| r.to_vec()).collect())
}

/// `∫|Σ w_n e^{-i𝔱_n t}|² dt / Σ|w_n|²` from a Gram matrix.
pub fn ingham_quotient(gram: &[Vec<C64>], w: &[C64]) -> f64 {
    let mut num = C64::new(0.0, 0.0);
    for (i, row) in gram.iter().enumerate() {
        for (j, q) in row.iter().enumerate() {
            num += w[i] * w[j].conj() * q;
        }
    }
    num.re / w.iter().map(|c| c.norm_sqr()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct InghamReport {
    pub min_ratio: f64,
    pub ratios: Vec<f64>,
}

/// Ratios of the Ingham sum for `trials` seeded random coefficient vectors.
pub fn ingham_ratio(
    horizon: f64,
    n_max: usize,
    trials: usize,
    m: f64,
    p: &PhysParams,
    points_per_period: usize,
    seed: u64,
) -> Result<InghamReport> {
    if n_max == 0 || trials == 0 {
        return Err(Error::config("n_max and trials must be at least 1"));
    }
    let freqs = ingham_frequencies(n_max, m, p);
    let gram = ingham_gram(&freqs, horizon, points_per_period)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<Vec<C64>> = (0..trials)
        .map(|_| {
            (0..=n_max)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    let ratios: Vec<f64> = weights
        .par_iter()
        .map(|w| ingham_quotient(&gram, w))
        .collect();
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(InghamReport { min_ratio, ratios })
}

/// Gramian of the control-to-final-state map in the ℋ⁰ geometry.
#[derive(Clone, Debug)]
pub struct Gramian<'a> {
    sys: &'a LinearizedSystem,
    chi: Field,
    tikhonov: bool,
}

impl<'a> Gramian<'a> {
    pub fn new(sys: &'a LinearizedSystem, prob: &ControlProblem) -> Result<Self> {
        prob.validate()?;
        Ok(Gramian {
            sys,
            chi: cutoff(sys.n(), &prob.omega, prob.transition),
            tikhonov: prob.tikhonov,
        })
    }

    pub fn cutoff(&self) -> &Field {
        &self.chi
    }

    /// Pressure samples `χ λ̃_ψ` driven by the backward solution from `y`.
    pub fn control_from(&self, y: &StatePair) -> Vec<Field> {
        let sol = self.sys.solve_adjoint(y);
        self.sys
            .adjoint_samples(&sol)
            .iter()
            .map(|lam| self.chi.grid_product(&lam.psi.to_real()))
            .collect()
    }

    pub fn apply(&self, y: &StatePair) -> Result<StatePair> {
        let control = self.control_from(y);
        let mut out = final_state(
            self.sys,
            &forcing_pairs(&control),
            &StatePair::zeros(self.sys.n()),
        )?;
        if self.tikhonov {
            out = out.axpy(TIKHONOV_SHIFT, y);
        }
        Ok(out)
    }
}

/// `G y` along a linearized system.
pub fn gramian_apply(
    sys: &LinearizedSystem,
    y: &StatePair,
    prob: &ControlProblem,
) -> Result<StatePair> {
    Gramian::new(sys, prob)?.apply(y)
}

/// Pairs `(0, P)` from pressure samples.
pub fn forcing_pairs(control: &[Field]) -> Vec<StatePair> {
    control
        .iter()
        .map(|c| StatePair {
            eta: Field::zeros(c.n()),
            psi: c.clone(),
        })
        .collect()
}

fn final_state(sys: &LinearizedSystem, forcing: &[StatePair], h0: &StatePair) -> Result<StatePair> {
    Ok(sys
        .solve(Some(forcing), h0)?
        .pop()
        .expect("at least one node"))
}

fn h0_dot(a: &StatePair, b: &StatePair) -> f64 {
    a.h0_inner(b).re
}

/// Conjugate gradients for `G y = b` in the ℋ⁰ inner product.
fn conjugate_gradient(
    g: &Gramian,
    b: &StatePair,
    tol: f64,
    maxiter: usize,
) -> Result<(StatePair, Vec<f64>)> {
    let bnorm = h0_dot(b, b).sqrt();
    let mut x = StatePair::zeros(b.n());
    let mut history = Vec::new();
    if bnorm == 0.0 {
        return Ok((x, history));
    }
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rs = h0_dot(&r, &r);
    for _ in 0..maxiter {
        let gd = g.apply(&d)?;
        let curv = h0_dot(&d, &gd);
        if !(curv > 0.0) {
            return Err(Error::Budget {
                detail: "Gramian lost positivity".into(),
                history,
            });
        }
        let step = rs / curv;
        x = x.axpy(step, &d);
        r = r.axpy(-step, &gd);
        let rs_new = h0_dot(&r, &r);
        history.push(rs_new.sqrt() / bnorm);
        if rs_new.sqrt() <= tol * bnorm {
            return Ok((x, history));
        }
        d = r.axpy(rs_new / rs, &d);
        rs = rs_new;
    }
    Err(Error::Budget {
        detail: format!("conjugate gradients did not reach {tol:e} in {maxiter} iterations"),
        history,
    })
}

/// Output of a linear control synthesis.
#[derive(Clone, Debug)]
pub struct ControlResult {
    /// Pressure on the half-step grid; the elevation forcing is identically zero.
    pub control: Vec<Field>,
    /// Controlled linearized states at the nodes.
    pub states: Vec<StatePair>,
    pub final_error_h0: f64,
    pub final_error_h1: f64,
    pub gramian_iters: usize,
    pub cg_history: Vec<f64>,
    /// `max_t ‖(0, P(t))‖_{ℋ⁰}`.
    pub control_norm: f64,
    /// `‖h_in‖ + ‖h_end‖ + max_t ‖q(t)‖` in ℋ⁰.
    pub data_norm: f64,
}

impl ControlResult {
    pub fn forcing(&self) -> Vec<StatePair> {
        forcing_pairs(&self.control)
    }

    /// `control_norm / data_norm`.
    pub fn control_constant(&self) -> f64 {
        if self.data_norm == 0.0 {
            0.0
        } else {
            self.control_norm / self.data_norm
        }
    }

    /// Largest grid value of the pressure where the cutoff vanishes.
    pub fn tail_outside(&self, chi: &Field) -> f64 {
        let mask = chi.to_grid_real();
        self.control
            .iter()
            .flat_map(|c| {
                c.to_grid()
                    .into_iter()
                    .zip(mask.iter().copied())
                    .collect::<Vec<_>>()
            })
            .filter(|(_, m)| m.abs() <= 1e-14)
            .map(|(v, _)| v.norm())
            .fold(0.0, f64::max)
    }
}

/// Drive `h_in` to `h_end` under the linearized dynamics with forcing `q`.
pub fn hum_control(
    sys: &LinearizedSystem,
    h_in: &StatePair,
    h_end: &StatePair,
    q: Option<&[StatePair]>,
    prob: &ControlProblem,
) -> Result<ControlResult> {
    let gram = Gramian::new(sys, prob)?;
    let n = sys.n();
    let samples = 2 * sys.steps() + 1;
    if let Some(q) = q {
        if q.len() != samples {
            return Err(Error::input(format!(
                "forcing has {} samples, expected {samples}",
                q.len()
            )));
        }
    }
    let free = match q {
        Some(q) => final_state(sys, q, h_in)?,
        None => sys.solve(None, h_in)?.pop().expect("nodes"),
    };
    let target = h_end.sub(&free);
    let (y, history) = conjugate_gradient(&gram, &target, prob.cg_tol, prob.cg_maxiter)?;
    let control = if history.is_empty() {
        vec![Field::zeros(n); samples]
    } else {
        gram.control_from(&y)
    };
    let mut forcing = forcing_pairs(&control);
    if let Some(q) = q {
        for (f, qs) in forcing.iter_mut().zip(q) {
            *f = f.add(qs);
        }
    }
    let states = sys.solve(Some(&forcing), h_in)?;
    let miss = states.last().expect("nodes").sub(h_end);
    let q_norm = q.map_or(0.0, |q| {
        q.iter().map(StatePair::h0_norm).fold(0.0, f64::max)
    });
    Ok(ControlResult {
        control_norm: control.iter().map(Field::l2_norm).fold(0.0, f64::max),
        control,
        final_error_h0: miss.h0_norm(),
        final_error_h1: pair_norm(&miss, 1.0),
        gramian_iters: history.len(),
        cg_history: history,
        data_norm: h_in.h0_norm() + h_end.h0_norm() + q_norm,
        states,
    })
}

/// Final ℋ⁰ miss of `h_in` driven by `control` (plus `q`), from a fresh forward solve.
pub fn certify_linear(
    sys: &LinearizedSystem,
    h_in: &StatePair,
    control: &[Field],
    q: Option<&[StatePair]>,
    h_end: &StatePair,
) -> Result<f64> {
    let mut forcing = forcing_pairs(control);
    if let Some(q) = q {
        for (f, qs) in forcing.iter_mut().zip(q) {
            *f = f.add(qs);
        }
    }
    Ok(final_state(sys, &forcing, h_in)?.sub(h_end).h0_norm())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityReport {
    /// Localization applied after the `|D|^{3/2}` weight.
    pub ratios: Vec<f64>,
    /// Localization applied before the weight.
    pub ratios_before_weight: Vec<f64>,
    pub min_ratio: f64,
}

fn localized_sq(chi: &Field, u: &StatePair, before: bool) -> f64 {
    let eta = if before {
        chi.grid_product(&u.eta).abs_d_pow(1.5)
    } else {
        chi.grid_product(&u.eta.abs_d_pow(1.5))
    };
    eta.l2_norm().powi(2) + chi.grid_product(&u.psi).l2_norm().powi(2)
}

/// `∫‖λ(t)‖²_{ℋ⁰(ω)} dt / ‖λ_T‖²_{ℋ⁰}` for given terminal data of the backward problem.
pub fn observability_ratios(
    sys: &LinearizedSystem,
    chi: &Field,
    data: &[StatePair],
) -> ObservabilityReport {
    let weights = sys.quadrature_weights();
    let pairs: Vec<(f64, f64)> = data
        .par_iter()
        .map(|y| {
            let lam = sys.adjoint_samples(&sys.solve_adjoint(y));
            let norm = y.h0_norm().powi(2);
            let mut after = 0.0;
            let mut before = 0.0;
            for (l, w) in lam.iter().zip(&weights) {
                let l = l.to_real();
                after += w * localized_sq(chi, &l, false);
                before += w * localized_sq(chi, &l, true);
            }
            (after / norm, before / norm)
        })
        .collect();
    let ratios: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    ObservabilityReport {
        ratios,
        ratios_before_weight: pairs.iter().map(|p| p.1).collect(),
        min_ratio,
    }
}

/// Seeded random terminal data with modes `|k| <= n/4`, balanced in ℋ⁰.
pub fn random_terminal_data(n: usize, trials: usize, seed: u64) -> Vec<StatePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kmax = (n / 4) as i64;
    (0..trials)
        .map(|_| {
            let mut eta = Field::zeros(n);
            let mut psi = Field::zeros(n);
            for k in 1..=kmax {
                let w = (k as f64).powf(-1.5);
                let a = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w;
                let b = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                eta.set_coeff(k, a);
                eta.set_coeff(-k, a.conj());
                psi.set_coeff(k, b);
                psi.set_coeff(-k, b.conj());
            }
            psi.set_coeff(0, C64::new(rng.gen_range(-1.0..1.0), 0.0));
            let y = StatePair::new(eta.to_real(), psi.to_real());
            y.scale(1.0 / y.h0_norm())
        })
        .collect()
}

/// Lower-bound estimate of the observability constant over random data.
pub fn observability_estimate(
    sys: &LinearizedSystem,
    prob: &ControlProblem,
    trials: usize,
    seed: u64,
) -> Result<ObservabilityReport> {
    prob.validate()?;
    if trials == 0 {
        return Err(Error::config("at least one trial is required"));
    }
    let chi = cutoff(sys.n(), &prob.omega, prob.transition);
    Ok(observability_ratios(
        sys,
        &chi,
        &random_terminal_data(sys.n(), trials, seed),
    ))
}

/// One line of the Newton log.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonStep {
    pub smoothing_level: u32,
    pub damping: f64,
    pub cg_iters: usize,
    pub error: f64,
}

#[derive(Clone, Debug)]
pub struct NonlinearControl {
    pub trajectory: Trajectory,
    /// Pressure on the half-step grid.
    pub pext: Vec<Field>,
    pub initial_error: f64,
    pub steps: Vec<NewtonStep>,
    /// Final miss from an independent re-simulation with `pext`.
    pub certified_error: f64,
}

impl NonlinearControl {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// Errors after each iterate, starting with the uncontrolled run.
    pub fn error_history(&self) -> Vec<f64> {
        std::iter::once(self.initial_error)
            .chain(self.steps.iter().map(|s| s.error))
            .collect()
    }
}

fn smooth_pair(u: &StatePair, j: u32) -> StatePair {
    StatePair {
        eta: u.eta.smoothing_projector(j),
        psi: u.psi.smoothing_projector(j),
    }
}

/// Steer the nonlinear system from `u_in` to `u_end` with pressure supported in ω.
pub fn nonlinear_control(
    u_in: &StatePair,
    u_end: &StatePair,
    prob: &ControlProblem,
    p: &PhysParams,
    cfg: &DnoConfig,
    stepper: &StepperConfig,
) -> Result<NonlinearControl> {
    prob.validate()?;
    u_in.validate()?;
    u_end.validate()?;
    let size = pair_norm(u_in, prob.smallness_index) + pair_norm(u_end, prob.smallness_index);
    if size > prob.smallness {
        return Err(Error::guard(
            0.0,
            format!(
                "data size {size:.3e} exceeds smallness bound {:.3e}",
                prob.smallness
            ),
        ));
    }
    let n = u_in.n();
    let mut traj = solve_nonlinear(u_in, None, prob.horizon, p, cfg, stepper)?;
    let mut pext = vec![Field::zeros(n); traj.forcing.len()];
    let mut err = traj.final_state().sub(u_end).h0_norm();
    let initial_error = err;
    let mut steps = Vec::new();
    let mut history = vec![err];
    while err > prob.newton_tol {
        if steps.len() >= prob.newton_maxiter {
            return Err(Error::Budget {
                detail: format!(
                    "Newton iteration stopped at error {err:.3e} after {} steps",
                    steps.len()
                ),
                history,
            });
        }
        let level = steps.len() as u32 + prob.smoothing_offset;
        let sys = LinearizedSystem::along(&traj, p, cfg)?;
        let target = smooth_pair(&traj.final_state().sub(u_end), level).scale(-1.0);
        let lin = hum_control(&sys, &StatePair::zeros(n), &target, None, prob)?;
        let mut damping = 1.0;
        let mut accepted = None;
        for _ in 0..6 {
            let trial: Vec<Field> = pext
                .iter()
                .zip(&lin.control)
                .map(|(a, b)| a.axpy(damping, b))
                .collect();
            let t = solve_nonlinear(u_in, Some(&trial), prob.horizon, p, cfg, stepper)?;
            let e = t.final_state().sub(u_end).h0_norm();
            if e < err {
                accepted = Some((trial, t, e));
                break;
            }
            damping *= 0.5;
        }
        let Some((trial, t, e)) = accepted else {
            return Err(Error::Budget {
                detail: format!("no decrease from error {err:.3e}"),
                history,
            });
        };
        pext = trial;
        traj = t;
        err = e;
        history.push(err);
        steps.push(NewtonStep {
            smoothing_level: level,
            damping,
            cg_iters: lin.gramian_iters,
            error: err,
        });
    }
    let check = solve_nonlinear(u_in, Some(&pext), prob.horizon, p, cfg, stepper)?;
    let certified_error = check.final_state().sub(u_end).h0_norm();
    Ok(NonlinearControl {
        trajectory: traj,
        pext,
        initial_error,
        steps,
        certified_error,
    })
}

/// Final-state error after a single Newton step from zero pressure.
pub fn first_iterate_error(
    u_in: &StatePair,
    u_end: &StatePair,
    prob: &ControlProblem,
    p: &PhysParams,
    cfg: &DnoConfig,
    stepper: &StepperConfig,
) -> Result<f64> {
    let one = ControlProblem {
        newton_maxiter: 1,
        newton_tol: f64::MIN_POSITIVE,
        ..prob.clone()
    };
    match nonlinear_control(u_in, u_end, &one, p, cfg, stepper) {
        Ok(res) => Ok(res.error_history().last().copied().unwrap_or(0.0)),
        Err(Error::Budget { history, .. }) if history.len() == 2 => Ok(history[1]),
        Err(e) => Err(e),
    }
}
