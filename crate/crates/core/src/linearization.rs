//! Linearized operator along a trajectory, the good-unknown change of
//! variables and the dense forms used by adjoints.

use rayon::prelude::*;

use crate::dno::{velocity_trace, DnOperator, DnoConfig};
use crate::error::{Error, Result};
use crate::hydro::{elastic_linearization, ElasticCoeffs, PhysParams};
use crate::pair::{h0_weights_flat, StatePair};
use crate::spectral::{Field, C64};

/// Everything the linearized operator needs at one instant.
#[derive(Clone, Debug)]
pub struct TimeSlice {
    pub t: f64,
    pub u: StatePair,
    pub b: Field,
    pub v: Field,
    /// `g + B_t + V B_x`; `None` until time derivatives are supplied.
    pub a: Option<Field>,
    pub ecoeffs: ElasticCoeffs,
    op: DnOperator,
    /// `g + B V_x`.
    restoring: Field,
}

impl TimeSlice {
    pub fn new(t: f64, u: &StatePair, p: &PhysParams, cfg: &DnoConfig) -> Result<Self> {
        let op = DnOperator::new(&u.eta, p.depth, cfg).map_err(|e| e.at_time(t))?;
        let (b, v) = velocity_trace(&op, &u.eta, &u.psi);
        let ecoeffs = elastic_linearization(&u.eta).map_err(|e| e.at_time(t))?;
        let restoring = b.product(&v.dx()).axpy(1.0, &Field::constant(u.n(), p.g));
        Ok(TimeSlice {
            t,
            u: u.clone(),
            b,
            v,
            a: None,
            ecoeffs,
            op,
            restoring,
        })
    }

    pub fn dn(&self) -> &DnOperator {
        &self.op
    }

    /// Install `a = g + B_t + V B_x` from a time derivative of B.
    pub fn set_taylor_coefficient(&mut self, b_t: &Field, g: f64) {
        let a = &b_t.axpy(1.0, &Field::constant(b_t.n(), g)) + &self.v.product(&self.b.dx());
        self.a = Some(a);
    }
}

/// Spatial part of `P'(u)`, the sign convention being `∂_t ũ + A ũ = f̃`.
pub fn pprime_apply(slice: &TimeSlice, p: &PhysParams, h: &StatePair) -> StatePair {
    let h = h.without_nyquist();
    let eta_t = &h.eta;
    let psi_t = &h.psi;
    let w = slice.op.apply(&(&slice.b.product(eta_t) - psi_t));
    let row1 = &w + &slice.v.product(eta_t).dx();
    let row2 = &(&slice.restoring.product(eta_t) + &slice.b.product(&w))
        + &(&slice.ecoeffs.apply(eta_t).scale(p.sigma) + &slice.v.product(&psi_t.dx()));
    StatePair {
        eta: row1.without_mean().without_nyquist(),
        psi: row2.without_nyquist(),
    }
}

/// Flat operator `A0 = [[0, -G(0)], [g + σ∂⁴, 0]]` (Nyquist mode inert).
pub fn flat_apply(p: &PhysParams, h: &StatePair) -> StatePair {
    StatePair {
        eta: (-&h.psi.g0(p.depth)).without_nyquist(),
        psi: h
            .eta
            .real_multiplier(|k| p.restoring_symbol(k))
            .without_nyquist(),
    }
}

/// Spatial part of `ℒ0 = [[∂_x(V·), -G(η)], [a + σΣE∂^j, V∂_x]]`.
pub fn l0_apply(slice: &TimeSlice, p: &PhysParams, h: &StatePair) -> Result<StatePair> {
    let a = slice
        .a
        .as_ref()
        .ok_or_else(|| Error::input("Taylor coefficient a not assembled for this slice"))?;
    let h = h.without_nyquist();
    let row1 = &slice.v.product(&h.eta).dx() - &slice.op.apply(&h.psi);
    let row2 = &(&a.product(&h.eta) + &slice.ecoeffs.apply(&h.eta).scale(p.sigma))
        + &slice.v.product(&h.psi.dx());
    Ok(StatePair {
        eta: row1.without_mean().without_nyquist(),
        psi: row2.without_nyquist(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Good unknown `𝒵 = [[1,0],[B,1]]` or its inverse.
pub fn good_unknown(b: &Field, h: &StatePair, dir: Direction) -> StatePair {
    let s = match dir {
        Direction::Forward => 1.0,
        Direction::Inverse => -1.0,
    };
    StatePair {
        eta: h.eta.clone(),
        psi: h.psi.axpy(s, &b.product(&h.eta)),
    }
}

/// Row-major dense matrix on the flattened `[η̂; ψ̂]` vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOp {
    dim: usize,
    data: Vec<C64>,
}

impl DenseOp {
    pub fn zeros(dim: usize) -> Self {
        DenseOp {
            dim,
            data: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    /// Build by applying a linear map to every unit vector.
    pub fn from_map<F: Fn(&StatePair) -> StatePair>(n: usize, map: F) -> Self {
        let dim = 2 * n;
        let mut out = DenseOp::zeros(dim);
        let mut unit = vec![C64::new(0.0, 0.0); dim];
        for j in 0..dim {
            unit[j] = C64::new(1.0, 0.0);
            let col = map(&StatePair::from_vec(&unit)).to_vec();
            unit[j] = C64::new(0.0, 0.0);
            for (i, c) in col.into_iter().enumerate() {
                out.data[i * dim + j] = c;
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        self.data
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn apply(&self, h: &StatePair) -> StatePair {
        StatePair::from_vec(&self.matvec(&h.to_vec()))
    }

    /// `A^† x = W⁺ A^H W x` without forming the adjoint.
    pub fn adjoint_matvec(&self, x: &[C64], weights: &[f64]) -> Vec<C64> {
        let dim = self.dim;
        let wx: Vec<C64> = x.iter().zip(weights).map(|(a, w)| a * w).collect();
        let mut out = vec![C64::new(0.0, 0.0); dim];
        for (i, row) in self.data.chunks_exact(dim).enumerate() {
            let xi = wx[i];
            if xi == C64::new(0.0, 0.0) {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * xi;
            }
        }
        out.iter_mut()
            .zip(weights)
            .for_each(|(o, w)| *o = if *w > 0.0 { *o / w } else { C64::new(0.0, 0.0) });
        out
    }

    pub fn adjoint_apply(&self, h: &StatePair, weights: &[f64]) -> StatePair {
        StatePair::from_vec(&self.adjoint_matvec(&h.to_vec(), weights))
    }

    /// Explicit weighted adjoint `W⁺ A^H W`.
    pub fn adjoint(&self, weights: &[f64]) -> DenseOp {
        let dim = self.dim;
        let mut out = DenseOp::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                let v = if weights[i] > 0.0 {
                    self.get(j, i).conj() * weights[j] / weights[i]
                } else {
                    C64::new(0.0, 0.0)
                };
                out.data[i * dim + j] = v;
            }
        }
        out
    }

    pub fn sub(&self, other: &DenseOp) -> DenseOp {
        DenseOp {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// ℋ⁰ weights for the flattened vector of an `n`-mode pair.
pub fn h0_weights(n: usize) -> Vec<f64> {
    h0_weights_flat(n)
}

/// Which spatial operator a slice represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceKind {
    Pprime,
    L0,
}

/// A time-indexed linear operator with compositional and dense forms.
#[derive(Clone, Debug)]
pub struct LinearOperatorSlice {
    pub slice: TimeSlice,
    pub kind: SliceKind,
    pub params: PhysParams,
    pub dense: DenseOp,
}

impl LinearOperatorSlice {
    pub fn apply(&self, h: &StatePair) -> Result<StatePair> {
        match self.kind {
            SliceKind::Pprime => Ok(pprime_apply(&self.slice, &self.params, h)),
            SliceKind::L0 => l0_apply(&self.slice, &self.params, h),
        }
    }
}

/// Time slices at the given samples.
pub fn build_slices(
    times: &[f64],
    states: &[StatePair],
    p: &PhysParams,
    cfg: &DnoConfig,
) -> Result<Vec<TimeSlice>> {
    times
        .par_iter()
        .zip(states.par_iter())
        .map(|(&t, u)| TimeSlice::new(t, u, p, cfg))
        .collect()
}

/// `P'(u)` spatial part at each sample, with dense forms.
pub fn assemble_pprime(
    times: &[f64],
    states: &[StatePair],
    p: &PhysParams,
    cfg: &DnoConfig,
) -> Result<Vec<LinearOperatorSlice>> {
    let slices = build_slices(times, states, p, cfg)?;
    Ok(slices
        .into_par_iter()
        .map(|slice| {
            let dense = DenseOp::from_map(slice.u.n(), |h| pprime_apply(&slice, p, h));
            LinearOperatorSlice {
                slice,
                kind: SliceKind::Pprime,
                params: *p,
                dense,
            }
        })
        .collect())
}

/// Second-order time derivative of per-sample fields on a uniform grid
/// (centered inside, one-sided at the ends).
pub fn time_derivative(fields: &[Field], dt: f64) -> Result<Vec<Field>> {
    let m = fields.len();
    if m < 3 {
        return Err(Error::input(
            "at least 3 time samples are needed to difference in time",
        ));
    }
    Ok((0..m)
        .map(|i| {
            if i == 0 {
                (&fields[1].scale(4.0) - &fields[0].scale(3.0))
                    .axpy(-1.0, &fields[2])
                    .scale(0.5 / dt)
            } else if i == m - 1 {
                (&fields[m - 1].scale(3.0) - &fields[m - 2].scale(4.0))
                    .axpy(1.0, &fields[m - 3])
                    .scale(0.5 / dt)
            } else {
                (&fields[i + 1] - &fields[i - 1]).scale(0.5 / dt)
            }
        })
        .collect())
}

/// Fourth-order centered time derivative (falls back to second order near the ends).
pub fn time_derivative_fourth(fields: &[Field], dt: f64) -> Result<Vec<Field>> {
    let second = time_derivative(fields, dt)?;
    let m = fields.len();
    Ok((0..m)
        .map(|i| {
            if i >= 2 && i + 2 < m {
                let num = &(&fields[i - 2] - &fields[i + 2])
                    + &(&fields[i + 1] - &fields[i - 1]).scale(8.0);
                num.scale(1.0 / (12.0 * dt))
            } else {
                second[i].clone()
            }
        })
        .collect())
}

/// `ℒ0` spatial part at each sample, with `a` from centered differences of B.
pub fn assemble_l0(
    times: &[f64],
    states: &[StatePair],
    p: &PhysParams,
    cfg: &DnoConfig,
) -> Result<Vec<LinearOperatorSlice>> {
    if times.len() < 3 {
        return Err(Error::input(
            "at least 3 time samples are needed to assemble L0",
        ));
    }
    let dt = times[1] - times[0];
    let mut slices = build_slices(times, states, p, cfg)?;
    let bs: Vec<Field> = slices.iter().map(|s| s.b.clone()).collect();
    let b_t = time_derivative(&bs, dt)?;
    for (s, bt) in slices.iter_mut().zip(&b_t) {
        s.set_taylor_coefficient(bt, p.g);
    }
    slices
        .into_par_iter()
        .map(|slice| {
            let dense = DenseOp::from_map(slice.u.n(), |h| {
                l0_apply(&slice, p, h).expect("a assembled")
            });
            Ok(LinearOperatorSlice {
                slice,
                kind: SliceKind::L0,
                params: *p,
                dense,
            })
        })
        .collect()
}

/// Adjoint of a slice's dense form in the ℋ⁰ geometry.
pub fn discrete_adjoint(op: &DenseOp) -> DenseOp {
    op.adjoint(&h0_weights(op.dim() / 2))
}
