//! Fourth-order exponential time differencing (Cox-Matthews ETDRK4) with the
//! flat linear operator integrated exactly, for the nonlinear, linearized and
//! adjoint problems.
//!
//! Per mode the flat generator is `L_k = [[0, a_k], [-b_k, 0]]` with
//! `a_k = G0(k)` and `b_k = g + σk⁴`, so `L_k² = -ω_k² I`. Any analytic
//! function of `c·h·L_k` is `Re F(iθ) I + (Im F(iθ)/θ)·c·h·L_k` with `θ = c·h·ω_k`.
//!
//! Forcing and variable-coefficient corrections are sampled on the half-step
//! grid `t_s = s·h/2`, `s = 0..=2M`.

use rayon::prelude::*;

use crate::dno::DnoConfig;
use crate::error::{Error, Result};
use crate::hydro::{linear_rhs, nonlinear_rhs, PhysParams};
use crate::linearization::{flat_apply, h0_weights, pprime_apply, DenseOp, TimeSlice};
use crate::pair::StatePair;
use crate::spectral::{g0_symbol, wavenumber, Field, C64};

/// Time step choice for every solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
}

/// Default step `min(0.5/max(1, 𝔱(N/2))·20, T/200)` with `𝔱` at m = 1.
pub fn default_dt(n: usize, p: &PhysParams, horizon: f64) -> f64 {
    let k = (n / 2) as i64;
    let top = ((k as f64) * p.restoring_symbol(k)).sqrt();
    (0.5 / top.max(1.0) * 20.0).min(horizon / 200.0)
}

/// Number of uniform steps covering `[0, horizon]` with steps no longer than `dt`.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && horizon.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("horizon and dt must be positive"));
    }
    Ok(((horizon / dt) - 1e-9).ceil().max(1.0) as usize)
}

/// Per-mode representation `α I + β L_k` of a function of the flat generator.
#[derive(Clone, Debug)]
struct ModeFn {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl ModeFn {
    fn combine(parts: &[(f64, &ModeFn)]) -> ModeFn {
        let n = parts[0].1.alpha.len();
        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        for (c, f) in parts {
            for i in 0..n {
                alpha[i] += c * f.alpha[i];
                beta[i] += c * f.beta[i];
            }
        }
        ModeFn { alpha, beta }
    }
}

/// Coefficients `c_n` of `φ_j(z) = Σ c_n z^n` (`φ_0 = exp`).
fn phi_series_coeff(j: usize, n: usize) -> f64 {
    let mut f = 1.0;
    for i in 1..=(n + j) {
        f *= i as f64;
    }
    1.0 / f
}

/// `(Re φ_j(iθ), Im φ_j(iθ)/θ)`, the second entry continuous at θ = 0.
fn phi_parts(j: usize, theta: f64) -> (f64, f64) {
    if theta.abs() <= 1.0 {
        let mut re = 0.0;
        let mut im = 0.0;
        for n in (0..40).rev() {
            let c = phi_series_coeff(j, n);
            let sign = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
            if n % 2 == 0 {
                re += c * sign * theta.powi(n as i32);
            } else {
                im += c * sign * theta.powi(n as i32 - 1);
            }
        }
        return (re, im);
    }
    let z = C64::new(0.0, theta);
    let e = z.exp();
    let val = match j {
        0 => e,
        1 => (e - 1.0) / z,
        2 => (e - 1.0 - z) / (z * z),
        3 => (e - 1.0 - z - z * z * 0.5) / (z * z * z),
        _ => unreachable!("only φ_0..φ_3 are used"),
    };
    (val.re, val.im / theta)
}

/// Flat symbols and the ETDRK4 coefficient functions for one step size.
#[derive(Clone, Debug)]
pub struct FlatPropagator {
    a: Vec<f64>,
    b: Vec<f64>,
    w: Vec<f64>,
    e_full: ModeFn,
    e_half: ModeFn,
    q_half: ModeFn,
    f1: ModeFn,
    f2: ModeFn,
    f3: ModeFn,
    h: f64,
}

impl FlatPropagator {
    pub fn new(n: usize, p: &PhysParams, h: f64) -> Self {
        let ks: Vec<i64> = (0..n).map(|i| wavenumber(i, n)).collect();
        // The Nyquist mode is inert: zero symbols make every function of L the identity there.
        let nyq = (n / 2) as i64;
        let a: Vec<f64> = ks
            .iter()
            .map(|&k| if k == nyq { 0.0 } else { g0_symbol(k, p.depth) })
            .collect();
        let b: Vec<f64> = ks
            .iter()
            .map(|&k| if k == nyq { 0.0 } else { p.restoring_symbol(k) })
            .collect();
        let omega: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x * y).sqrt()).collect();
        let func = |j: usize, c: f64| {
            let mut alpha = vec![0.0; n];
            let mut beta = vec![0.0; n];
            for i in 0..n {
                let (re, im_over) = phi_parts(j, c * h * omega[i]);
                alpha[i] = re;
                beta[i] = im_over * c * h;
            }
            ModeFn { alpha, beta }
        };
        let e_full = func(0, 1.0);
        let e_half = func(0, 0.5);
        let q_half = ModeFn::combine(&[(0.5 * h, &func(1, 0.5))]);
        let p1 = func(1, 1.0);
        let p2 = func(2, 1.0);
        let p3 = func(3, 1.0);
        let f1 = ModeFn::combine(&[(h, &p1), (-3.0 * h, &p2), (4.0 * h, &p3)]);
        let f2 = ModeFn::combine(&[(h, &p2), (-2.0 * h, &p3)]);
        let f3 = ModeFn::combine(&[(-h, &p2), (4.0 * h, &p3)]);
        let w = h0_weights(n)[..n].to_vec();
        FlatPropagator {
            a,
            b,
            w,
            e_full,
            e_half,
            q_half,
            f1,
            f2,
            f3,
            h,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    fn apply(&self, f: &ModeFn, u: &StatePair) -> StatePair {
        let n = self.a.len();
        let (e, s) = (u.eta.coeffs(), u.psi.coeffs());
        let mut eta = Vec::with_capacity(n);
        let mut psi = Vec::with_capacity(n);
        for i in 0..n {
            eta.push(e[i] * f.alpha[i] + s[i] * (f.beta[i] * self.a[i]));
            psi.push(s[i] * f.alpha[i] - e[i] * (f.beta[i] * self.b[i]));
        }
        StatePair {
            eta: Field::with_flag(eta, u.eta.is_real() && u.psi.is_real()),
            psi: Field::with_flag(psi, u.eta.is_real() && u.psi.is_real()),
        }
    }

    /// Adjoint of `apply` in the ℋ⁰ inner product.
    fn apply_adj(&self, f: &ModeFn, u: &StatePair) -> StatePair {
        let n = self.a.len();
        let (e, s) = (u.eta.coeffs(), u.psi.coeffs());
        let mut eta = Vec::with_capacity(n);
        let mut psi = Vec::with_capacity(n);
        for i in 0..n {
            let w = self.w[i];
            if w > 0.0 {
                eta.push(e[i] * f.alpha[i] - s[i] * (f.beta[i] * self.b[i] / w));
                psi.push(s[i] * f.alpha[i] + e[i] * (f.beta[i] * self.a[i] * w));
            } else {
                eta.push(C64::new(0.0, 0.0));
                psi.push(s[i] * f.alpha[i]);
            }
        }
        let real = u.eta.is_real() && u.psi.is_real();
        StatePair {
            eta: Field::with_flag(eta, real),
            psi: Field::with_flag(psi, real),
        }
    }

    /// Exact flat evolution over one full step.
    pub fn propagate(&self, u: &StatePair) -> StatePair {
        self.apply(&self.e_full, u)
    }

    /// One ETDRK4 step. `nonlinear(v, s)` evaluates the non-stiff part at
    /// half-grid offset `s ∈ {0, 1, 2}` from the start of the step.
    pub fn step<F>(&self, u: &StatePair, mut nonlinear: F) -> Result<StatePair>
    where
        F: FnMut(&StatePair, usize) -> Result<StatePair>,
    {
        let eu = self.apply(&self.e_half, u);
        let na = nonlinear(u, 0)?;
        let a = eu.add(&self.apply(&self.q_half, &na));
        let nb = nonlinear(&a, 1)?;
        let b = eu.add(&self.apply(&self.q_half, &nb));
        let nc = nonlinear(&b, 1)?;
        let c = self
            .apply(&self.e_half, &a)
            .add(&self.apply(&self.q_half, &nc.scale(2.0).sub(&na)));
        let nd = nonlinear(&c, 2)?;
        let out = self
            .apply(&self.e_full, u)
            .add(&self.apply(&self.f1, &na))
            .add(&self.apply(&self.f2, &nb.add(&nc)).scale(2.0))
            .add(&self.apply(&self.f3, &nd));
        Ok(out)
    }
}

/// Time-sampled solution of the nonlinear system.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StatePair>,
    /// External pressure on the half-step grid (`2M+1` samples).
    pub forcing: Vec<Field>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    pub fn n(&self) -> usize {
        self.states[0].n()
    }

    pub fn final_state(&self) -> &StatePair {
        self.states.last().expect("non-empty trajectory")
    }

    /// Forcing at node `i`.
    pub fn node_forcing(&self, i: usize) -> &Field {
        &self.forcing[2 * i]
    }

    pub fn is_flat(&self) -> bool {
        self.states.iter().all(StatePair::is_zero)
    }

    /// Trajectory at rest with no forcing.
    pub fn rest(n: usize, horizon: f64, dt: f64) -> Result<Self> {
        let m = step_count(horizon, dt)?;
        let h = horizon / m as f64;
        Ok(Trajectory {
            times: (0..=m).map(|i| i as f64 * h).collect(),
            states: vec![StatePair::zeros(n); m + 1],
            forcing: vec![Field::zeros(n); 2 * m + 1],
        })
    }

    /// Check the structural invariants (uniform grid, sizes, real states).
    pub fn validate(&self) -> Result<()> {
        let m = self.times.len();
        if m < 2 || self.states.len() != m || self.forcing.len() != 2 * m - 1 {
            return Err(Error::input("trajectory sample counts are inconsistent"));
        }
        let dt = self.dt();
        for (i, t) in self.times.iter().enumerate() {
            if (t - i as f64 * dt).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(Error::input(
                    "trajectory times must be uniform and start at 0",
                ));
            }
        }
        for s in &self.states {
            s.validate()?;
        }
        Ok(())
    }
}

/// Solve the nonlinear system from `u0` with pressure sampled on the half-step
/// grid of `step_count(horizon, dt)` steps (`None` means no forcing).
pub fn solve_nonlinear(
    u0: &StatePair,
    pext: Option<&[Field]>,
    horizon: f64,
    p: &PhysParams,
    cfg: &DnoConfig,
    stepper: &StepperConfig,
) -> Result<Trajectory> {
    p.validate()?;
    cfg.validate()?;
    u0.validate()?;
    let m = step_count(horizon, stepper.dt)?;
    let h = horizon / m as f64;
    let n = u0.n();
    let forcing: Vec<Field> = match pext {
        Some(f) if f.len() == 2 * m + 1 => f.to_vec(),
        Some(f) => {
            return Err(Error::input(format!(
                "forcing has {} samples, expected {}",
                f.len(),
                2 * m + 1
            )));
        }
        None => vec![Field::zeros(n); 2 * m + 1],
    };
    let prop = FlatPropagator::new(n, p, h);
    let mut states = Vec::with_capacity(m + 1);
    states.push(u0.clone());
    let mut u = u0.clone();
    for step in 0..m {
        let t0 = step as f64 * h;
        u = prop.step(&u, |v, s| {
            let t = t0 + 0.5 * h * s as f64;
            let full =
                nonlinear_rhs(v, Some(&forcing[2 * step + s]), p, cfg).map_err(|e| e.at_time(t))?;
            Ok(full.sub(&linear_rhs(v, None, p)))
        })?;
        u = StatePair {
            eta: u.eta.to_real().without_mean(),
            psi: u.psi.to_real(),
        }
        .without_nyquist();
        states.push(u.clone());
    }
    Ok(Trajectory {
        times: (0..=m).map(|i| i as f64 * h).collect(),
        states,
        forcing,
    })
}

/// States on the half-step grid: nodes plus cubic Hermite midpoints.
pub fn half_grid_states(
    traj: &Trajectory,
    p: &PhysParams,
    cfg: &DnoConfig,
) -> Result<Vec<StatePair>> {
    let h = traj.dt();
    let derivs: Vec<StatePair> = (0..traj.states.len())
        .into_par_iter()
        .map(|i| {
            nonlinear_rhs(&traj.states[i], Some(traj.node_forcing(i)), p, cfg)
                .map_err(|e| e.at_time(traj.times[i]))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(2 * traj.steps() + 1);
    for i in 0..traj.steps() {
        out.push(traj.states[i].clone());
        let mid = traj.states[i]
            .add(&traj.states[i + 1])
            .scale(0.5)
            .add(&derivs[i].sub(&derivs[i + 1]).scale(h / 8.0));
        out.push(mid);
    }
    out.push(traj.final_state().clone());
    Ok(out)
}

/// Linearized dynamics `∂_t ũ + A(t) ũ = f̃` along a trajectory, stored as
/// the flat propagator plus dense corrections `A(t_s) - A0` on the half grid.
#[derive(Clone, Debug)]
pub struct LinearizedSystem {
    n: usize,
    steps: usize,
    prop: FlatPropagator,
    corrections: Option<Vec<DenseOp>>,
    weights: Vec<f64>,
}

/// Output of the backward adjoint solve.
#[derive(Clone, Debug)]
pub struct AdjointSolution {
    /// Cotangent of the state at every node (`λ_0` pairs with the initial datum).
    pub nodes: Vec<StatePair>,
    /// Cotangent of the forcing at every half-grid sample.
    pub forcing_cotangents: Vec<StatePair>,
}

impl LinearizedSystem {
    /// Linearization at rest (no dense corrections).
    pub fn flat(n: usize, p: &PhysParams, horizon: f64, dt: f64) -> Result<Self> {
        let m = step_count(horizon, dt)?;
        let h = horizon / m as f64;
        Ok(LinearizedSystem {
            n,
            steps: m,
            prop: FlatPropagator::new(n, p, h),
            corrections: None,
            weights: h0_weights(n),
        })
    }

    /// Linearization along a trajectory (flat trajectories skip the dense forms).
    pub fn along(traj: &Trajectory, p: &PhysParams, cfg: &DnoConfig) -> Result<Self> {
        let n = traj.n();
        let m = traj.steps();
        let h = traj.dt();
        let mut sys = LinearizedSystem {
            n,
            steps: m,
            prop: FlatPropagator::new(n, p, h),
            corrections: None,
            weights: h0_weights(n),
        };
        if traj.is_flat() {
            return Ok(sys);
        }
        let states = half_grid_states(traj, p, cfg)?;
        let corrections: Vec<DenseOp> = states
            .par_iter()
            .enumerate()
            .map(|(s, u)| {
                let slice = TimeSlice::new(0.5 * h * s as f64, u, p, cfg)?;
                Ok(DenseOp::from_map(n, |v| {
                    pprime_apply(&slice, p, v).sub(&flat_apply(p, v))
                }))
            })
            .collect::<Result<_>>()?;
        sys.corrections = Some(corrections);
        Ok(sys)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.prop.h
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_flat(&self) -> bool {
        self.corrections.is_none()
    }

    /// Half-grid sample times `s·h/2`.
    pub fn sample_times(&self) -> Vec<f64> {
        (0..=2 * self.steps)
            .map(|s| 0.5 * self.prop.h * s as f64)
            .collect()
    }

    /// Simpson weights `h/6·[1, 4, 2, 4, …, 4, 1]` on the half grid.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let h = self.prop.h;
        (0..=2 * self.steps)
            .map(|s| {
                if s == 0 || s == 2 * self.steps {
                    h / 6.0
                } else if s % 2 == 1 {
                    4.0 * h / 6.0
                } else {
                    2.0 * h / 6.0
                }
            })
            .collect()
    }

    fn correction(&self, s: usize, v: &StatePair) -> Option<StatePair> {
        self.corrections.as_ref().map(|c| c[s].apply(v))
    }

    fn correction_adj(&self, s: usize, v: &StatePair) -> Option<StatePair> {
        self.corrections
            .as_ref()
            .map(|c| c[s].adjoint_apply(v, &self.weights))
    }

    /// Forward solve from `h0` with forcing on the half grid; returns node values.
    pub fn solve(&self, forcing: Option<&[StatePair]>, h0: &StatePair) -> Result<Vec<StatePair>> {
        if let Some(f) = forcing {
            if f.len() != 2 * self.steps + 1 {
                return Err(Error::input(format!(
                    "forcing has {} samples, expected {}",
                    f.len(),
                    2 * self.steps + 1
                )));
            }
        }
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(h0.clone());
        let mut u = h0.clone();
        for step in 0..self.steps {
            u = self.prop.step(&u, |v, s| {
                let idx = 2 * step + s;
                let mut val = match self.correction(idx, v) {
                    Some(r) => r.scale(-1.0),
                    None => StatePair::zeros(self.n),
                };
                if let Some(f) = forcing {
                    val = val.add(&f[idx]);
                }
                Ok(val)
            })?;
            out.push(u.clone());
        }
        Ok(out)
    }

    /// Exact discrete adjoint of [`Self::solve`] in the ℋ⁰ geometry, run
    /// backward from the terminal cotangent.
    pub fn solve_adjoint(&self, terminal: &StatePair) -> AdjointSolution {
        let n = self.n;
        let pr = &self.prop;
        let zero = StatePair::zeros(n);
        let mut fbar = vec![zero.clone(); 2 * self.steps + 1];
        let mut nodes = vec![zero.clone(); self.steps + 1];
        let mut ubar_next = terminal.clone();
        nodes[self.steps] = terminal.clone();
        let neg_corr = |s: usize, v: &StatePair| -> StatePair {
            match self.correction_adj(s, v) {
                Some(r) => r.scale(-1.0),
                None => zero.clone(),
            }
        };
        for step in (0..self.steps).rev() {
            let (s0, s1, s2) = (2 * step, 2 * step + 1, 2 * step + 2);
            let nd_bar = pr.apply_adj(&pr.f3, &ubar_next);
            let f2u = pr.apply_adj(&pr.f2, &ubar_next).scale(2.0);
            let mut nb_bar = f2u.clone();
            let mut nc_bar = f2u;
            let mut na_bar = pr.apply_adj(&pr.f1, &ubar_next);
            let mut ubar = pr.apply_adj(&pr.e_full, &ubar_next);
            // c = E2 a + Q(2Nc - Na), Nd = N(c)
            let c_bar = neg_corr(s2, &nd_bar);
            fbar[s2] = fbar[s2].add(&nd_bar);
            let mut a_bar = pr.apply_adj(&pr.e_half, &c_bar);
            let qc = pr.apply_adj(&pr.q_half, &c_bar);
            nc_bar = nc_bar.add(&qc.scale(2.0));
            na_bar = na_bar.sub(&qc);
            // Nc = N(b)
            let b_bar = neg_corr(s1, &nc_bar);
            fbar[s1] = fbar[s1].add(&nc_bar);
            // b = E2 u + Q Nb
            ubar = ubar.add(&pr.apply_adj(&pr.e_half, &b_bar));
            nb_bar = nb_bar.add(&pr.apply_adj(&pr.q_half, &b_bar));
            // Nb = N(a)
            a_bar = a_bar.add(&neg_corr(s1, &nb_bar));
            fbar[s1] = fbar[s1].add(&nb_bar);
            // a = E2 u + Q Na
            ubar = ubar.add(&pr.apply_adj(&pr.e_half, &a_bar));
            na_bar = na_bar.add(&pr.apply_adj(&pr.q_half, &a_bar));
            // Na = N(u)
            ubar = ubar.add(&neg_corr(s0, &na_bar));
            fbar[s0] = fbar[s0].add(&na_bar);
            nodes[step] = ubar.clone();
            ubar_next = ubar;
        }
        AdjointSolution {
            nodes,
            forcing_cotangents: fbar,
        }
    }

    /// Adjoint values on the half grid: forcing cotangents divided by the
    /// quadrature weights, approximating the continuous backward solution.
    pub fn adjoint_samples(&self, sol: &AdjointSolution) -> Vec<StatePair> {
        sol.forcing_cotangents
            .iter()
            .zip(self.quadrature_weights())
            .map(|(c, w)| c.scale(1.0 / w))
            .collect()
    }
}

/// Forward linearized solve along a trajectory (convenience wrapper).
pub fn solve_linearized(
    traj: &Trajectory,
    forcing: Option<&[StatePair]>,
    h0: &StatePair,
    p: &PhysParams,
    cfg: &DnoConfig,
) -> Result<Vec<StatePair>> {
    LinearizedSystem::along(traj, p, cfg)?.solve(forcing, h0)
}

/// Backward adjoint solve along a trajectory (convenience wrapper).
pub fn solve_adjoint_backward(
    traj: &Trajectory,
    terminal: &StatePair,
    p: &PhysParams,
    cfg: &DnoConfig,
) -> Result<AdjointSolution> {
    Ok(LinearizedSystem::along(traj, p, cfg)?.solve_adjoint(terminal))
}
