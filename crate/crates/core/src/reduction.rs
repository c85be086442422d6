//! Reduction of the linearized operator to constant coefficients plus a
//! bounded remainder, and numerical checks that every conjugation drops the
//! order of what is left over.
//!
//! Stages, each acting on pairs and indexed 0..=8:
//! 0. good unknown `𝒵`;
//! 1. space change `ℬh = h(x + β)`;
//! 2. time change `𝒜`, a relabeling `τ = t + α(t)` on the stored samples;
//! 3. `ℒ3 = P⁻¹ℒ2Q` with `P = diag(a12, a9)`, `Q = diag(a12/a9, 1)`;
//! 4. symmetrizer `S = diag(1, √m Λ)`;
//! 5. `M` removing the order-1/2 off-diagonal mismatch;
//! 6. translation `𝒯h = h(z + p(τ))`;
//! 7. the unitary `𝒪` diagonalizing the skew part;
//! 8. Fourier integral operators, one per branch.
//!
//! Remainders are never formed symbolically: each stage's remainder is
//! `X⁻¹(c X_τ h + K_prev X h) − K h` evaluated on probes.

use rayon::prelude::*;

use crate::dno::{check_slope, DnoConfig};
use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::hydro::PhysParams;
use crate::linearization::{
    build_slices, good_unknown, l0_apply, pprime_apply, time_derivative, Direction, TimeSlice,
};
use crate::pair::StatePair;
use crate::spectral::{g0_symbol, grid_points, map_fine, Field, C64, I};

/// Number of conjugation stages.
pub const STAGE_COUNT: usize = 9;
/// Number of stored coefficient slots (`a[0]` is unused, `a[1]..a[33]`).
pub const COEFF_SLOTS: usize = 34;
/// Largest admissible `sup |β_x|`.
pub const WARP_SLOPE_LIMIT: f64 = 0.5;
/// Largest admissible FIO amplitude correction.
pub const FIO_CORRECTION_LIMIT: f64 = 0.5;

const FIXED_POINT_TOL: f64 = 1e-12;
const NEUMANN_TOL: f64 = 1e-14;
const MAX_SERIES_TERMS: usize = 200;
/// Probes whose residual sits below this fraction of `‖K h‖` are roundoff.
pub const NOISE_FLOOR: f64 = 1e-11;

/// Declared order of the remainder left after each stage.
pub fn stage_ceiling(stage: usize) -> f64 {
    match stage {
        0..=2 => 2.5,
        3 => 1.5,
        4 => 0.5,
        _ => 0.0,
    }
}

/// Time and space change of variables.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSpaceChange {
    pub m: f64,
    pub alpha: Vec<f64>,
    /// `α'(t)` at the samples.
    pub alpha_rate: Vec<f64>,
    pub beta: Vec<Field>,
}

/// Mean over `x` of `√(1+η_x²)` on the grid, with the slope guard.
fn arclength_mean(eta: &Field) -> Result<f64> {
    check_slope(eta)?;
    let g = eta.dx().to_grid_real();
    Ok(g.iter().map(|s| (1.0 + s * s).sqrt()).sum::<f64>() / g.len() as f64)
}

/// Cumulative trapezoid rule, starting from 0.
pub fn cumulative_trapezoid<T>(values: &[T], grid: &[f64]) -> Vec<T>
where
    T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let mut out = Vec::with_capacity(values.len());
    let mut acc = T::default();
    out.push(acc);
    for i in 1..values.len() {
        acc = acc + (values[i] + values[i - 1]) * (0.5 * (grid[i] - grid[i - 1]));
        out.push(acc);
    }
    out
}

/// `m`, `α` and `β` along a trajectory.
pub fn compute_time_space_change(traj: &Trajectory) -> Result<TimeSpaceChange> {
    traj.validate()?;
    let times = &traj.times;
    let lens: Vec<f64> = traj
        .states
        .iter()
        .zip(times)
        .map(|(u, &t)| arclength_mean(&u.eta).map_err(|e| e.at_time(t)))
        .collect::<Result<_>>()?;
    let f: Vec<f64> = lens.iter().map(|l| l.powf(-2.5)).collect();
    let horizon = traj.horizon();
    let mean_f = cumulative_trapezoid(&f, times)
        .last()
        .copied()
        .unwrap_or(0.0)
        / horizon;
    let m = mean_f * mean_f;
    let alpha_rate: Vec<f64> = f.iter().map(|v| v / mean_f - 1.0).collect();
    let alpha = cumulative_trapezoid(&alpha_rate, times);
    let scale = m.powf(0.2);
    let mut beta = Vec::with_capacity(times.len());
    for ((u, &t), &ar) in traj.states.iter().zip(times).zip(&alpha_rate) {
        let c = scale * (1.0 + ar).powf(0.4);
        let g = u.eta.dx().to_grid_real();
        let integrand: Vec<f64> = g.iter().map(|s| c * (1.0 + s * s).sqrt() - 1.0).collect();
        let b = Field::from_grid_real(&integrand).antiderivative();
        let slope = b.dx().sup_norm();
        if slope > WARP_SLOPE_LIMIT {
            return Err(Error::guard(
                t,
                format!("space change slope {slope:.3e} exceeds {WARP_SLOPE_LIMIT}"),
            ));
        }
        beta.push(b);
    }
    Ok(TimeSpaceChange {
        m,
        alpha,
        alpha_rate,
        beta,
    })
}

/// Pointwise defect of `m^{1/5}(1+α')^{2/5}(1+η_x²)^{1/2} = 1 + β_x` over all samples.
pub fn alpha_beta_residual(traj: &Trajectory, tsc: &TimeSpaceChange) -> f64 {
    let scale = tsc.m.powf(0.2);
    let mut worst: f64 = 0.0;
    for ((u, b), ar) in traj.states.iter().zip(&tsc.beta).zip(&tsc.alpha_rate) {
        let c = scale * (1.0 + ar).powf(0.4);
        let ex = u.eta.dx().to_grid_real();
        let bx = b.dx().to_grid_real();
        for (s, d) in ex.iter().zip(&bx) {
            worst = worst.max((c * (1.0 + s * s).sqrt() - (1.0 + d)).abs());
        }
    }
    worst
}

/// The space change `ℬh(x) = h(x + β(x))` at one instant.
#[derive(Clone, Debug)]
pub struct Warp {
    forward_points: Vec<f64>,
    inverse_points: Vec<f64>,
}

impl Warp {
    pub fn new(beta: &Field) -> Result<Self> {
        let slope = beta.dx().sup_norm();
        if !(slope <= WARP_SLOPE_LIMIT) {
            return Err(Error::input(format!(
                "space change slope {slope:.3e} exceeds {WARP_SLOPE_LIMIT}"
            )));
        }
        let beta = beta.to_real();
        let at = |x: f64| beta.eval_at(x).re;
        let grid = grid_points(beta.n());
        let forward_points = grid.iter().map(|&x| x + at(x)).collect();
        let mut inverse_points = Vec::with_capacity(grid.len());
        for &y in &grid {
            let mut x = y;
            let mut converged = false;
            for _ in 0..MAX_SERIES_TERMS {
                let next = y - at(x);
                let step = (next - x).abs();
                x = next;
                if step <= FIXED_POINT_TOL {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::input("space change inverse did not converge"));
            }
            inverse_points.push(x);
        }
        Ok(Warp {
            forward_points,
            inverse_points,
        })
    }

    pub fn apply(&self, h: &Field, dir: Direction) -> Field {
        let pts = match dir {
            Direction::Forward => &self.forward_points,
            Direction::Inverse => &self.inverse_points,
        };
        if h.is_real() {
            Field::from_grid_real(&pts.iter().map(|&x| h.eval_at(x).re).collect::<Vec<_>>())
        } else {
            Field::from_grid_complex(&pts.iter().map(|&x| h.eval_at(x)).collect::<Vec<_>>())
        }
    }

    fn apply_pair(&self, h: &StatePair, dir: Direction) -> StatePair {
        StatePair {
            eta: self.apply(&h.eta, dir),
            psi: self.apply(&h.psi, dir),
        }
    }
}

/// One-shot `ℬ` or `ℬ⁻¹`.
pub fn space_change_apply(h: &Field, beta: &Field, dir: Direction) -> Result<Field> {
    Ok(Warp::new(beta)?.apply(h, dir))
}

/// Inputs of the `M` equations.
#[derive(Clone, Debug)]
pub struct MInputs {
    pub a19: Field,
    pub a20: Field,
    pub a21: Field,
    pub a22: Field,
    pub a26: Field,
    pub a27: Field,
}

#[derive(Clone, Debug)]
pub struct MSolution {
    pub ell1: Field,
    pub v1: Field,
    pub v2: Field,
    pub a28: Field,
    pub a29: Field,
    pub a30: Field,
}

/// Closed-form solution of the `M` equations with `a29 = 0`.
pub fn solve_m_coefficients(inp: &MInputs, m: f64, sigma: f64) -> MSolution {
    let k = (m * sigma).sqrt();
    let n = inp.a19.n();
    let a28 = (&inp.a19 + &inp.a27).scale(0.5);
    let ell1 = (&inp.a19 - &inp.a27).scale(0.5 / k);
    let v1 = inp.a20.clone();
    let twist = (&inp.a20.dx().scale(2.5) - &inp.a20.product(&inp.a20)).scale(k);
    let v2 = (&inp.a26 + &twist).scale(0.5 / k);
    let a30 = (&inp.a26 - &twist).scale(0.5);
    MSolution {
        ell1,
        v1,
        v2,
        a28,
        a29: Field::zeros(n),
        a30,
    }
}

/// L² residuals of the five `M` equations.
pub fn m_equation_residuals(inp: &MInputs, sol: &MSolution, m: f64, sigma: f64) -> [f64; 5] {
    let k = (m * sigma).sqrt();
    let eq1 = &(&inp.a19 - &sol.a28) - &sol.ell1.scale(k);
    let eq2 = &(&sol.v1 - &inp.a20).scale(k) - &sol.a29;
    let eq3 = (&(&sol.v1.dx().scale(2.5) - &sol.v2) - &inp.a20.product(&sol.v1))
        .scale(k)
        .axpy(1.0, &sol.a30);
    let eq4 = &(&(&sol.a30 - &sol.a29.product(&sol.v1)) + &sol.v2.scale(k)) - &inp.a26;
    let eq5 = (&inp.a27 - &sol.a28).axpy(k, &sol.ell1);
    [
        eq1.l2_norm(),
        eq2.l2_norm(),
        eq3.l2_norm(),
        eq4.l2_norm(),
        eq5.l2_norm(),
    ]
}

/// Consistency of the third-order coefficient with the `M` closure:
/// `√(mσ)(a21 − v1) = a29`.
pub fn third_order_consistency(inp: &MInputs, sol: &MSolution, m: f64, sigma: f64) -> f64 {
    let k = (m * sigma).sqrt();
    (&(&inp.a21 - &sol.v1).scale(k) - &sol.a29).l2_norm()
}

/// Sign branch of the FIO stage: component 1 carries `−`, component 2 `+`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Minus,
    Plus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Minus => -1.0,
            Branch::Plus => 1.0,
        }
    }

    fn index(self) -> usize {
        match self {
            Branch::Minus => 0,
            Branch::Plus => 1,
        }
    }
}

/// All reduction coefficients along a trajectory.
#[derive(Clone, Debug)]
pub struct CoeffTable {
    pub params: PhysParams,
    pub m: f64,
    pub times: Vec<f64>,
    pub tau: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_rate: Vec<f64>,
    pub beta: Vec<Field>,
    pub beta_t: Vec<Field>,
    pub b_t: Vec<Field>,
    /// `a[sample][j]` holds `a_j`; slot 0 is unused.
    pub a: Vec<Vec<Field>>,
    pub c_tau: Vec<Field>,
    pub ell1: Vec<Field>,
    pub v1: Vec<Field>,
    pub v2: Vec<Field>,
    pub ell1_rate: Vec<Field>,
    pub v1_rate: Vec<Field>,
    pub v2_rate: Vec<Field>,
    pub pshift: Vec<f64>,
    pub pshift_rate: Vec<f64>,
    /// Phase `γ0` per branch (index 0 is `Minus`).
    pub gamma0: [Vec<C64>; 2],
    pub gamma0_rate: [Vec<C64>; 2],
    /// `∂⁻¹a31`, from which the order −1/2 amplitude `−i s κ ∂⁻¹a31` is built.
    pub a31_primitive: Vec<Field>,
    pub a31_primitive_rate: Vec<Field>,
    /// Order −1 amplitudes on positive (index 1) and negative (index 0) frequencies.
    pub amp_m2: [Vec<Field>; 2],
    pub amp_m2_rate: [Vec<Field>; 2],
    slices: Vec<TimeSlice>,
}

fn recip(f: &Field) -> Field {
    map_fine(&[f], |v| 1.0 / v[0])
}

/// Three-point derivative on a possibly nonuniform grid at node `i`.
fn fd_stencil(grid: &[f64], i: usize) -> ([usize; 3], [f64; 3]) {
    let m = grid.len();
    let idx = if i == 0 {
        [0, 1, 2]
    } else if i == m - 1 {
        [m - 3, m - 2, m - 1]
    } else {
        [i - 1, i, i + 1]
    };
    let x = grid[i];
    let [x0, x1, x2] = [grid[idx[0]], grid[idx[1]], grid[idx[2]]];
    let w = [
        (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2)),
        (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2)),
        (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1)),
    ];
    (idx, w)
}

/// Derivative of per-sample fields along a nonuniform time grid.
pub fn nonuniform_derivative(fields: &[Field], grid: &[f64]) -> Result<Vec<Field>> {
    if fields.len() < 3 || fields.len() != grid.len() {
        return Err(Error::input(
            "at least 3 matching samples are needed to difference in time",
        ));
    }
    Ok((0..fields.len())
        .map(|i| {
            let (idx, w) = fd_stencil(grid, i);
            fields[idx[0]]
                .scale(w[0])
                .axpy(w[1], &fields[idx[1]])
                .axpy(w[2], &fields[idx[2]])
        })
        .collect())
}

impl CoeffTable {
    pub fn build(traj: &Trajectory, p: &PhysParams, cfg: &DnoConfig) -> Result<Self> {
        p.validate()?;
        traj.validate()?;
        if traj.times.len() < 3 {
            return Err(Error::input(
                "at least 3 time samples are needed for the reduction",
            ));
        }
        let n = traj.n();
        let tsc = compute_time_space_change(traj)?;
        let dt = traj.dt();
        let mut slices = build_slices(&traj.times, &traj.states, p, cfg)?;
        let bs: Vec<Field> = slices.iter().map(|s| s.b.clone()).collect();
        let b_t = time_derivative(&bs, dt)?;
        for (s, bt) in slices.iter_mut().zip(&b_t) {
            s.set_taylor_coefficient(bt, p.g);
        }
        let beta_t = time_derivative(&tsc.beta, dt)?;
        let tau: Vec<f64> = traj
            .times
            .iter()
            .zip(&tsc.alpha)
            .map(|(t, a)| t + a)
            .collect();
        let m = tsc.m;
        let sigma = p.sigma;
        let k_lead = (m * sigma).sqrt();

        // a1..a17 and c = a12/a9.
        let mut a: Vec<Vec<Field>> = (0..slices.len())
            .into_par_iter()
            .map(|i| -> Result<Vec<Field>> {
                let s = &slices[i];
                let beta = &tsc.beta[i];
                let warp = Warp::new(beta).map_err(|e| Error::guard(s.t, e.to_string()))?;
                let inv = |f: &Field| warp.apply(f, Direction::Inverse);
                let b1 = beta.dx().axpy(1.0, &Field::constant(n, 1.0));
                let bxx = beta.dxn(2);
                let bxxx = beta.dxn(3);
                let bxxxx = beta.dxn(4);
                let e = &s.ecoeffs;
                let mut row = vec![Field::zeros(n); COEFF_SLOTS];
                row[1] = inv(&(&beta_t[i] + &s.v.product(&b1)));
                row[2] = inv(&s.v.dx());
                row[3] = inv(&b1);
                row[4] = inv(&map_fine(&[&e.e4, &b1], |v| v[0] * v[1].powi(4)));
                row[5] = inv(&map_fine(&[&e.e4, &e.e3, &b1, &bxx], |v| {
                    6.0 * v[0] * v[2] * v[2] * v[3] + v[1] * v[2].powi(3)
                }));
                row[6] = inv(&map_fine(&[&e.e4, &e.e3, &e.e2, &b1, &bxx, &bxxx], |v| {
                    v[0] * (4.0 * v[3] * v[5] + 3.0 * v[4] * v[4])
                        + 3.0 * v[1] * v[3] * v[4]
                        + v[2] * v[3] * v[3]
                }));
                row[7] = inv(&map_fine(
                    &[&e.e4, &e.e3, &e.e2, &e.e1, &b1, &bxx, &bxxx, &bxxxx],
                    |v| v[0] * v[7] + v[1] * v[6] + v[2] * v[5] + v[3] * v[4],
                ));
                row[8] = inv(s.a.as_ref().expect("Taylor coefficient installed"));
                row[9] = Field::constant(n, 1.0 + tsc.alpha_rate[i]);
                for j in 1..=8 {
                    row[j + 9] = row[j].clone();
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        let c: Vec<Field> = a
            .iter()
            .map(|row| row[12].scale(1.0 / row[9].mean().re))
            .collect();
        let c_tau = nonuniform_derivative(&c, &tau)?;

        // a18..a27 and the M solution.
        let sols: Vec<(Vec<Field>, MSolution)> = a
            .par_iter()
            .zip(&c)
            .zip(&c_tau)
            .map(|((row, c), c_t)| {
                let r = row[9].mean().re;
                let cd: Vec<Field> = (0..=4).map(|j| c.dxn(j)).collect();
                let scale = 1.0 / (m * r);
                let mut extra = vec![Field::zeros(n); COEFF_SLOTS];
                extra[18] = row[10].scale(1.0 / r);
                extra[19] = (&(&c_t.scale(r) + &row[10].product(&cd[1]))
                    + &row[11].product(&cd[0]))
                    .product(&recip(&row[12]));
                extra[21] = row[13]
                    .product(&cd[1])
                    .scale(4.0)
                    .axpy(1.0, &row[14].product(&cd[0]))
                    .scale(scale);
                extra[22] = row[13]
                    .product(&cd[2])
                    .scale(6.0)
                    .axpy(3.0, &row[14].product(&cd[1]))
                    .axpy(1.0, &row[15].product(&cd[0]))
                    .scale(scale);
                extra[23] = row[13]
                    .product(&cd[3])
                    .scale(4.0)
                    .axpy(3.0, &row[14].product(&cd[2]))
                    .axpy(2.0, &row[15].product(&cd[1]))
                    .axpy(1.0, &row[16].product(&cd[0]))
                    .scale(scale);
                let elastic = &(&row[13].product(&cd[4]) + &row[14].product(&cd[3]))
                    + &(&row[15].product(&cd[2]) + &row[16].product(&cd[1]));
                extra[24] = elastic
                    .scale(sigma)
                    .axpy(1.0, &row[17].product(&cd[0]))
                    .scale(scale);
                extra[26] = (&extra[21].dx().scale(1.5) - &extra[22]).scale(k_lead);
                extra[27] = extra[25].axpy(-1.5, &extra[18].dx());
                let inp = MInputs {
                    a19: extra[19].clone(),
                    a20: extra[20].clone(),
                    a21: extra[21].clone(),
                    a22: extra[22].clone(),
                    a26: extra[26].clone(),
                    a27: extra[27].clone(),
                };
                let sol = solve_m_coefficients(&inp, m, sigma);
                (extra, sol)
            })
            .collect();
        let mut ell1 = Vec::with_capacity(sols.len());
        let mut v1 = Vec::with_capacity(sols.len());
        let mut v2 = Vec::with_capacity(sols.len());
        for (row, (extra, sol)) in a.iter_mut().zip(sols) {
            row[18..=27].clone_from_slice(&extra[18..=27]);
            row[28] = sol.a28;
            row[29] = sol.a29;
            row[30] = sol.a30;
            ell1.push(sol.ell1);
            v1.push(sol.v1);
            v2.push(sol.v2);
        }
        let ell1_rate = nonuniform_derivative(&ell1, &tau)?;
        let v1_rate = nonuniform_derivative(&v1, &tau)?;
        let v2_rate = nonuniform_derivative(&v2, &tau)?;

        // Translation.
        let avg18: Vec<f64> = a.iter().map(|row| row[18].mean().re).collect();
        let pshift: Vec<f64> = cumulative_trapezoid(&avg18, &tau)
            .iter()
            .map(|v| -v)
            .collect();
        let pshift_rate: Vec<f64> = avg18.iter().map(|v| -v).collect();
        for (i, row) in a.iter_mut().enumerate() {
            let back = -pshift[i];
            row[31] = row[18]
                .translate(back)
                .axpy(1.0, &Field::constant(n, pshift_rate[i]));
            row[32] = row[28].translate(back);
            row[33] = row[30].translate(back);
        }

        // FIO phase and amplitudes.
        let kappa = 2.0 / (5.0 * k_lead);
        let a31_primitive: Vec<Field> = a.iter().map(|row| row[31].antiderivative()).collect();
        let quad: Vec<Field> = a
            .iter()
            .zip(&a31_primitive)
            .map(|(row, prim)| row[31].product(prim))
            .collect();
        let avg33: Vec<f64> = a.iter().map(|row| row[33].mean().re).collect();
        let mut gamma0_rate: [Vec<C64>; 2] = [Vec::new(), Vec::new()];
        let mut gamma0: [Vec<C64>; 2] = [Vec::new(), Vec::new()];
        for br in [Branch::Minus, Branch::Plus] {
            let s = br.sign();
            let rate: Vec<C64> = quad
                .iter()
                .zip(&avg33)
                .map(|(q, &c)| C64::new(-s * c, 0.0) + I * (s * kappa * q.mean()))
                .collect();
            gamma0[br.index()] = cumulative_trapezoid(&rate, &tau);
            gamma0_rate[br.index()] = rate;
        }
        let mut amp_m2: [Vec<Field>; 2] = [Vec::new(), Vec::new()];
        for (slot, sgn) in [(0usize, -1.0), (1usize, 1.0)] {
            amp_m2[slot] = a
                .iter()
                .zip(&quad)
                .zip(&avg33)
                .map(|((row, q), &c)| {
                    let fluct = row[33].axpy(-1.0, &Field::constant(n, c));
                    q.scale(kappa)
                        .axpy_c(I * sgn, &fluct)
                        .antiderivative()
                        .scale(-kappa)
                })
                .collect();
        }
        let a31_primitive_rate = nonuniform_derivative(&a31_primitive, &tau)?;
        let amp_m2_rate = [
            nonuniform_derivative(&amp_m2[0], &tau)?,
            nonuniform_derivative(&amp_m2[1], &tau)?,
        ];

        Ok(CoeffTable {
            params: *p,
            m,
            times: traj.times.clone(),
            tau,
            alpha: tsc.alpha,
            alpha_rate: tsc.alpha_rate,
            beta: tsc.beta,
            beta_t,
            b_t,
            a,
            c_tau,
            ell1,
            v1,
            v2,
            ell1_rate,
            v1_rate,
            v2_rate,
            pshift,
            pshift_rate,
            gamma0,
            gamma0_rate,
            a31_primitive,
            a31_primitive_rate,
            amp_m2,
            amp_m2_rate,
            slices,
        })
    }

    pub fn samples(&self) -> usize {
        self.times.len()
    }

    pub fn n(&self) -> usize {
        self.a[0][1].n()
    }

    /// `√(mσ)`.
    pub fn leading(&self) -> f64 {
        (self.m * self.params.sigma).sqrt()
    }

    /// Coefficient `a_j` at sample `i`.
    pub fn coeff(&self, i: usize, j: usize) -> &Field {
        &self.a[i][j]
    }

    pub fn m_inputs(&self, i: usize) -> MInputs {
        let r = &self.a[i];
        MInputs {
            a19: r[19].clone(),
            a20: r[20].clone(),
            a21: r[21].clone(),
            a22: r[22].clone(),
            a26: r[26].clone(),
            a27: r[27].clone(),
        }
    }

    pub fn m_solution(&self, i: usize) -> MSolution {
        let r = &self.a[i];
        MSolution {
            ell1: self.ell1[i].clone(),
            v1: self.v1[i].clone(),
            v2: self.v2[i].clone(),
            a28: r[28].clone(),
            a29: r[29].clone(),
            a30: r[30].clone(),
        }
    }

    /// Corrupt `a20` after the `M` equations were solved (for testing the checks).
    pub fn inject_fault(&mut self, amount: f64) {
        for row in &mut self.a {
            let n = row[20].n();
            row[20] = row[20].axpy(amount, &Field::cos_mode(n, 1, 1.0));
        }
    }

    /// Worst closure defects over all samples.
    pub fn closure(&self, traj: &Trajectory) -> Result<ClosureReport> {
        let tsc = TimeSpaceChange {
            m: self.m,
            alpha: self.alpha.clone(),
            alpha_rate: self.alpha_rate.clone(),
            beta: self.beta.clone(),
        };
        if traj.times.len() != self.samples() {
            return Err(Error::input(
                "trajectory does not match the coefficient table",
            ));
        }
        let mut eq = [0.0f64; 5];
        let mut third: f64 = 0.0;
        let mut a31_mean: f64 = 0.0;
        let mut beta_slope: f64 = 0.0;
        for i in 0..self.samples() {
            let inp = self.m_inputs(i);
            let sol = self.m_solution(i);
            let r = m_equation_residuals(&inp, &sol, self.m, self.params.sigma);
            for (e, v) in eq.iter_mut().zip(r) {
                *e = e.max(v);
            }
            third = third.max(third_order_consistency(
                &inp,
                &sol,
                self.m,
                self.params.sigma,
            ));
            a31_mean = a31_mean.max(self.a[i][31].mean().norm());
            beta_slope = beta_slope.max(self.beta[i].dx().sup_norm());
        }
        let gamma0_imag = self
            .gamma0
            .iter()
            .flatten()
            .map(|g| g.im.abs())
            .fold(0.0, f64::max);
        let alpha_end = self
            .alpha
            .first()
            .copied()
            .unwrap_or(0.0)
            .abs()
            .max(self.alpha.last().copied().unwrap_or(0.0).abs());
        Ok(ClosureReport {
            alpha_beta: alpha_beta_residual(traj, &tsc),
            alpha_end,
            beta_slope,
            eq,
            third_order: third,
            a31_mean,
            gamma0_imag,
        })
    }
}

/// Closure defects of a coefficient table.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosureReport {
    pub alpha_beta: f64,
    pub alpha_end: f64,
    pub beta_slope: f64,
    pub eq: [f64; 5],
    /// `√(mσ)(a21 − v1) − a29`, zero only up to discretization.
    pub third_order: f64,
    pub a31_mean: f64,
    pub gamma0_imag: f64,
}

/// `p(τ)` for given averages of `a18` on a τ grid.
pub fn build_translation(avg_a18: &[f64], tau: &[f64]) -> Vec<f64> {
    cumulative_trapezoid(avg_a18, tau)
        .iter()
        .map(|v| -v)
        .collect()
}

/// `A h = (1 + C)Φh` with `Φ = e^{iγ0|D|^{1/2}}` and
/// `C f = p1|D|^{-1/2}f + p2⁺|D|⁻¹P⁺f + p2⁻|D|⁻¹P⁻f`.
#[derive(Clone, Debug)]
pub struct Fio {
    phase: f64,
    phase_rate: f64,
    amp1: Field,
    amp2: [Field; 2],
    amp1_rate: Field,
    amp2_rate: [Field; 2],
}

fn half_line(f: &Field, positive: bool) -> Field {
    f.multiplier(|k| {
        let keep = if positive { k > 0 } else { k < 0 };
        C64::new(if keep { 1.0 } else { 0.0 }, 0.0)
    })
    .expect("finite symbol")
}

impl Fio {
    /// The FIO of `branch` at sample `i`.
    pub fn new(tbl: &CoeffTable, i: usize, branch: Branch) -> Result<Self> {
        let s = branch.sign();
        let kappa = 2.0 / (5.0 * tbl.leading());
        let amp1 = tbl.a31_primitive[i].scale_c(-I * (s * kappa));
        let amp1_rate = tbl.a31_primitive_rate[i].scale_c(-I * (s * kappa));
        let amp2 = [tbl.amp_m2[0][i].clone(), tbl.amp_m2[1][i].clone()];
        let amp2_rate = [tbl.amp_m2_rate[0][i].clone(), tbl.amp_m2_rate[1][i].clone()];
        let size = amp1.sup_norm() + amp2[0].sup_norm() + amp2[1].sup_norm();
        if !(size < FIO_CORRECTION_LIMIT) {
            return Err(Error::guard(
                tbl.times[i],
                format!("FIO amplitude correction {size:.3e} too large"),
            ));
        }
        let b = branch.index();
        Ok(Fio {
            phase: tbl.gamma0[b][i].re,
            phase_rate: tbl.gamma0_rate[b][i].re,
            amp1,
            amp2,
            amp1_rate,
            amp2_rate,
        })
    }

    /// Real part of `γ0` at this sample.
    pub fn phase(&self) -> f64 {
        self.phase
    }

    fn rotate(&self, h: &Field, sign: f64) -> Field {
        let g = self.phase * sign;
        h.multiplier(|k| C64::from_polar(1.0, g * (k.abs() as f64).sqrt()))
            .expect("finite symbol")
    }

    fn correction_with(amp1: &Field, amp2: &[Field; 2], f: &Field) -> Field {
        let first = amp1.product(&f.abs_d_pow(-0.5));
        let inv = f.abs_d_pow(-1.0);
        let plus = amp2[1].product(&half_line(&inv, true));
        let minus = amp2[0].product(&half_line(&inv, false));
        &first + &(&plus + &minus)
    }

    fn correction(&self, f: &Field) -> Field {
        Self::correction_with(&self.amp1, &self.amp2, f)
    }

    pub fn apply(&self, h: &Field) -> Field {
        let r = self.rotate(h, 1.0);
        &r + &self.correction(&r)
    }

    pub fn apply_inverse(&self, g: &Field) -> Result<Field> {
        let scale = g.l2_norm();
        let mut x = g.clone();
        let mut term = g.clone();
        let mut converged = scale == 0.0;
        for _ in 0..MAX_SERIES_TERMS {
            if converged {
                break;
            }
            term = -&self.correction(&term);
            x = &x + &term;
            converged = term.l2_norm() <= NEUMANN_TOL * scale;
        }
        if !converged {
            return Err(Error::input("FIO inverse series did not converge"));
        }
        Ok(self.rotate(&x, -1.0))
    }

    /// `∂_τ A` applied to a time-independent `h`.
    pub fn rate(&self, h: &Field) -> Field {
        let spun = h
            .real_multiplier(|k| (k.abs() as f64).sqrt())
            .scale_c(I * self.phase_rate);
        let r = self.rotate(h, 1.0);
        &self.apply(&spun) + &Self::correction_with(&self.amp1_rate, &self.amp2_rate, &r)
    }
}

/// The FIO of one branch at sample `i`.
pub fn build_fio(tbl: &CoeffTable, i: usize, branch: Branch) -> Result<Fio> {
    Fio::new(tbl, i, branch)
}

/// `𝒪(h1, h2) = (h1 + h2, i(h1 − h2))/√2`.
pub fn unitary_apply(h: &StatePair, dir: Direction) -> StatePair {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    match dir {
        Direction::Forward => StatePair {
            eta: (&h.eta + &h.psi).scale(r),
            psi: (&h.eta - &h.psi).scale_c(I * r),
        },
        Direction::Inverse => StatePair {
            eta: h.eta.axpy_c(-I, &h.psi).scale(r),
            psi: h.eta.axpy_c(I, &h.psi).scale(r),
        },
    }
}

/// Executable conjugators and stage operators at one sample.
pub struct StageOperators<'a> {
    tbl: &'a CoeffTable,
    i: usize,
    warp: Warp,
    recip_a12: Field,
    fio: [Fio; 2],
}

impl<'a> StageOperators<'a> {
    pub fn new(tbl: &'a CoeffTable, i: usize) -> Result<Self> {
        if i >= tbl.samples() {
            return Err(Error::input(format!("sample {i} out of range")));
        }
        Ok(StageOperators {
            tbl,
            i,
            warp: Warp::new(&tbl.beta[i])?,
            recip_a12: recip(&tbl.a[i][12]),
            fio: [
                Fio::new(tbl, i, Branch::Minus)?,
                Fio::new(tbl, i, Branch::Plus)?,
            ],
        })
    }

    fn c(&self, j: usize) -> &Field {
        &self.tbl.a[self.i][j]
    }

    fn p(&self) -> &PhysParams {
        &self.tbl.params
    }

    /// Skew symbol `√m · ((g + σk⁴) G0(k))^{1/2}`.
    fn skew(&self, f: &Field) -> Field {
        let p = *self.p();
        let sm = self.tbl.m.sqrt();
        f.real_multiplier(|k| sm * p.dispersion(k))
    }

    /// `√m Λ` with `Λ = ((g + σk⁴)/G0(k))^{1/2}`, `Λ(0) = 1`.
    fn symmetrizer(&self, f: &Field, inverse: bool) -> Field {
        let p = *self.p();
        let sm = self.tbl.m.sqrt();
        f.real_multiplier(|k| {
            let g0 = g0_symbol(k, p.depth);
            let s = if g0 == 0.0 {
                1.0
            } else {
                sm * (p.restoring_symbol(k) / g0).sqrt()
            };
            if inverse {
                1.0 / s
            } else {
                s
            }
        })
    }

    fn g0(&self, f: &Field) -> Field {
        f.g0(self.p().depth)
    }

    fn k1_like(&self, base: usize, h: &StatePair) -> StatePair {
        let c = |j: usize| self.c(base + j);
        let sigma = self.p().sigma;
        let eta =
            &(&c(1).product(&h.eta.dx()) + &c(2).product(&h.eta)) - &c(3).product(&self.g0(&h.psi));
        let elastic = &(&c(4).product(&h.eta.dxn(4)) + &c(5).product(&h.eta.dxn(3)))
            + &(&c(6).product(&h.eta.dxn(2)) + &c(7).product(&h.eta.dx()));
        let psi =
            &elastic.scale(sigma).axpy(1.0, &c(8).product(&h.eta)) + &c(1).product(&h.psi.dx());
        StatePair { eta, psi }
    }

    fn transport_part(&self, a: usize, b: usize, f: &Field) -> Field {
        &self.c(a).product(&f.dx()) + &self.c(b).product(f)
    }

    fn half_skew(&self, coeff: usize, f: &Field) -> Field {
        &self.skew(f) + &self.c(coeff).product(&f.abs_d_pow(0.5))
    }

    /// Spatial part of the stage-`stage` operator (`ℒ_k = ∂ + K_k`).
    pub fn skeleton(&self, stage: usize, h: &StatePair) -> Result<StatePair> {
        let p = self.p();
        let kl = self.tbl.leading();
        let m = self.tbl.m;
        let slice = &self.tbl.slices[self.i];
        Ok(match stage {
            0 => l0_apply(slice, p, h)?,
            1 => self.k1_like(0, h),
            2 => self.k1_like(9, h),
            3 => {
                let eta = &(&self.transport_part(18, 19, &h.eta) - &self.g0(&h.psi))
                    + &self.c(20).product(&h.psi.hilbert());
                let lower = &(&self.c(21).product(&h.eta.dxn(3))
                    + &self.c(22).product(&h.eta.dxn(2)))
                    + &self.c(23).product(&h.eta.dx());
                let psi = h
                    .eta
                    .dxn(4)
                    .axpy(1.0, &lower)
                    .scale(m * p.sigma)
                    .axpy(m, &self.c(24).product(&h.eta))
                    .axpy(1.0, &self.transport_part(18, 25, &h.psi));
                StatePair { eta, psi }
            }
            4 => {
                let eta = &(&self.transport_part(18, 19, &h.eta) - &self.skew(&h.psi))
                    + &self
                        .c(20)
                        .product(&h.psi.hilbert().abs_d_pow(1.5))
                        .scale(kl);
                let psi = &(&(&self.skew(&h.eta)
                    + &self
                        .c(21)
                        .product(&h.eta.hilbert().abs_d_pow(1.5))
                        .scale(kl))
                    + &self.c(26).product(&h.eta.abs_d_pow(0.5)))
                    + &self.transport_part(18, 27, &h.psi);
                StatePair { eta, psi }
            }
            5 => {
                let c5 = |f: &Field| {
                    &self.half_skew(30, f) + &self.c(29).product(&f.hilbert().abs_d_pow(1.5))
                };
                StatePair {
                    eta: &self.transport_part(18, 28, &h.eta) - &c5(&h.psi),
                    psi: &c5(&h.eta) + &self.transport_part(18, 28, &h.psi),
                }
            }
            6 => StatePair {
                eta: &self.transport_part(31, 32, &h.eta) - &self.half_skew(33, &h.psi),
                psi: &self.half_skew(33, &h.eta) + &self.transport_part(31, 32, &h.psi),
            },
            7 => StatePair {
                eta: self
                    .transport_part(31, 32, &h.eta)
                    .axpy_c(-I, &self.half_skew(33, &h.eta)),
                psi: self
                    .transport_part(31, 32, &h.psi)
                    .axpy_c(I, &self.half_skew(33, &h.psi)),
            },
            8 => StatePair {
                eta: self.skew(&h.eta).scale_c(-I),
                psi: self.skew(&h.psi).scale_c(I),
            },
            _ => return Err(Error::input(format!("no stage {stage}"))),
        })
    }

    /// The operator a stage starts from: `P'(u)` for stage 0, else the previous skeleton.
    pub fn incoming(&self, stage: usize, h: &StatePair) -> Result<StatePair> {
        if stage == 0 {
            Ok(pprime_apply(&self.tbl.slices[self.i], self.p(), h))
        } else {
            self.skeleton(stage - 1, h)
        }
    }

    fn m_apply(&self, h: &StatePair) -> StatePair {
        let i = self.i;
        let t = self.tbl;
        StatePair {
            eta: &h.eta + &t.ell1[i].product(&h.psi.abs_d_pow(-2.5)),
            psi: &h.psi + &self.m_tail(&t.v1[i], &t.v2[i], &h.psi),
        }
    }

    fn m_tail(&self, v1: &Field, v2: &Field, f: &Field) -> Field {
        &v1.product(&f.hilbert().abs_d_pow(-1.0)) + &v2.product(&f.abs_d_pow(-2.0))
    }

    fn m_inverse(&self, g: &StatePair) -> Result<StatePair> {
        let i = self.i;
        let t = self.tbl;
        let scale = g.psi.l2_norm();
        let mut psi = g.psi.clone();
        let mut term = g.psi.clone();
        let mut converged = scale == 0.0;
        for _ in 0..MAX_SERIES_TERMS {
            if converged {
                break;
            }
            term = -&self.m_tail(&t.v1[i], &t.v2[i], &term);
            psi = &psi + &term;
            converged = term.l2_norm() <= NEUMANN_TOL * scale;
        }
        if !converged {
            return Err(Error::input("M inverse series did not converge"));
        }
        let eta = &g.eta - &t.ell1[i].product(&psi.abs_d_pow(-2.5));
        Ok(StatePair { eta, psi })
    }

    /// Stage conjugator `X_k` or its inverse (stage 3 uses `Q`).
    pub fn conjugator(&self, stage: usize, h: &StatePair, dir: Direction) -> Result<StatePair> {
        let i = self.i;
        let t = self.tbl;
        let fwd = dir == Direction::Forward;
        Ok(match stage {
            0 => good_unknown(&t.slices[i].b, h, dir),
            1 => self.warp.apply_pair(h, dir),
            2 => h.clone(),
            3 => {
                let r = t.a[i][9].mean().re;
                let c = t.a[i][12].scale(1.0 / r);
                let eta = if fwd {
                    c.product(&h.eta)
                } else {
                    recip(&c).product(&h.eta)
                };
                StatePair {
                    eta,
                    psi: h.psi.clone(),
                }
            }
            4 => StatePair {
                eta: h.eta.clone(),
                psi: self.symmetrizer(&h.psi, !fwd),
            },
            5 => {
                if fwd {
                    self.m_apply(h)
                } else {
                    self.m_inverse(h)?
                }
            }
            6 => {
                let shift = if fwd { t.pshift[i] } else { -t.pshift[i] };
                StatePair {
                    eta: h.eta.translate(shift),
                    psi: h.psi.translate(shift),
                }
            }
            7 => unitary_apply(h, dir),
            8 => {
                if fwd {
                    StatePair {
                        eta: self.fio[0].apply(&h.eta),
                        psi: self.fio[1].apply(&h.psi),
                    }
                } else {
                    StatePair {
                        eta: self.fio[0].apply_inverse(&h.eta)?,
                        psi: self.fio[1].apply_inverse(&h.psi)?,
                    }
                }
            }
            _ => return Err(Error::input(format!("no stage {stage}"))),
        })
    }

    /// Left factor of the conjugation: `X_k⁻¹`, or `P⁻¹` at stage 3.
    fn left(&self, stage: usize, g: &StatePair) -> Result<StatePair> {
        if stage == 3 {
            let r = self.c(9).mean().re;
            Ok(StatePair {
                eta: self.recip_a12.product(&g.eta),
                psi: g.psi.scale(1.0 / r),
            })
        } else {
            self.conjugator(stage, g, Direction::Inverse)
        }
    }

    /// `∂_t X_k h` (in that stage's time variable) for a time-independent `h`,
    /// scaled by the coefficient of the time derivative.
    pub fn conjugator_rate(&self, stage: usize, h: &StatePair) -> StatePair {
        let i = self.i;
        let t = self.tbl;
        let n = h.n();
        match stage {
            0 => StatePair {
                eta: Field::zeros(n),
                psi: t.b_t[i].product(&h.eta),
            },
            1 => {
                let dx = StatePair {
                    eta: h.eta.dx(),
                    psi: h.psi.dx(),
                };
                let w = self.warp.apply_pair(&dx, Direction::Forward);
                StatePair {
                    eta: t.beta_t[i].product(&w.eta),
                    psi: t.beta_t[i].product(&w.psi),
                }
            }
            3 => {
                let r = t.a[i][9].mean().re;
                StatePair {
                    eta: t.c_tau[i].product(&h.eta).scale(r),
                    psi: Field::zeros(n),
                }
            }
            5 => StatePair {
                eta: t.ell1_rate[i].product(&h.psi.abs_d_pow(-2.5)),
                psi: self.m_tail(&t.v1_rate[i], &t.v2_rate[i], &h.psi),
            },
            6 => {
                let s = t.pshift[i];
                StatePair {
                    eta: h.eta.dx().translate(s).scale(t.pshift_rate[i]),
                    psi: h.psi.dx().translate(s).scale(t.pshift_rate[i]),
                }
            }
            8 => StatePair {
                eta: self.fio[0].rate(&h.eta),
                psi: self.fio[1].rate(&h.psi),
            },
            _ => StatePair::zeros(n),
        }
    }

    /// Remainder `X⁻¹(X_t h + K_prev X h) − K h`.
    pub fn residual(&self, stage: usize, h: &StatePair) -> Result<StatePair> {
        let xh = self.conjugator(stage, h, Direction::Forward)?;
        let inner = self
            .conjugator_rate(stage, h)
            .add(&self.incoming(stage, &xh)?);
        Ok(self.left(stage, &inner)?.sub(&self.skeleton(stage, h)?))
    }
}

/// Probe wavenumbers `8..=N/4`.
pub fn default_probes(n: usize) -> Vec<i64> {
    (8..=(n / 4) as i64).collect()
}

/// Residual sizes of one stage over a range of probe wavenumbers.
#[derive(Clone, Debug, PartialEq)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub ceiling: f64,
    pub probe_k: Vec<i64>,
    /// `max` over the two probe components of `‖residual‖/‖probe‖`.
    pub residual: Vec<f64>,
    /// Same normalization applied to `K h`.
    pub reference: Vec<f64>,
    /// Least-squares slope of `log residual` against `log k` over the points
    /// above the noise floor; `None` when fewer than two remain.
    pub fitted_slope: Option<f64>,
}

impl StageDiagnostics {
    pub fn within_ceiling(&self) -> bool {
        self.fitted_slope.is_none_or(|s| s <= self.ceiling)
    }

    pub fn max_residual(&self) -> f64 {
        self.residual.iter().copied().fold(0.0, f64::max)
    }
}

fn stage_norm(stage: usize, h: &StatePair) -> f64 {
    let eta = if stage <= 3 {
        h.eta.abs_d_pow(1.5).l2_norm()
    } else {
        h.eta.l2_norm()
    };
    eta.hypot(h.psi.l2_norm())
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Residuals of `stage` on the probes `(e^{iky}, 0)` and `(0, e^{iky})`.
pub fn conjugation_residual(
    ops: &StageOperators,
    stage: usize,
    probes: &[i64],
) -> Result<StageDiagnostics> {
    let n = ops.tbl.n();
    let rows: Vec<(f64, f64)> = probes
        .par_iter()
        .map(|&k| -> Result<(f64, f64)> {
            let wave = Field::exp_mode(n, k, C64::new(1.0, 0.0));
            let mut worst = (0.0f64, 0.0f64);
            for h in [
                StatePair {
                    eta: wave.clone(),
                    psi: Field::zeros(n),
                },
                StatePair {
                    eta: Field::zeros(n),
                    psi: wave.clone(),
                },
            ] {
                let size = stage_norm(stage, &h);
                let res = stage_norm(stage, &ops.residual(stage, &h)?) / size;
                let reference = stage_norm(stage, &ops.skeleton(stage, &h)?) / size;
                if res >= worst.0 {
                    worst = (res, reference);
                }
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&k, &(r, reference)) in probes.iter().zip(&rows) {
        if r > NOISE_FLOOR * reference {
            xs.push(k as f64);
            ys.push(r);
        }
    }
    Ok(StageDiagnostics {
        stage,
        ceiling: stage_ceiling(stage),
        probe_k: probes.to_vec(),
        residual: rows.iter().map(|r| r.0).collect(),
        reference: rows.iter().map(|r| r.1).collect(),
        fitted_slope: fit_loglog_slope(&xs, &ys),
    })
}

/// Diagnostics of every stage at sample `i`.
pub fn reduction_report(
    tbl: &CoeffTable,
    i: usize,
    probes: &[i64],
) -> Result<Vec<StageDiagnostics>> {
    let ops = StageOperators::new(tbl, i)?;
    (0..STAGE_COUNT)
        .map(|s| conjugation_residual(&ops, s, probes))
        .collect()
}
