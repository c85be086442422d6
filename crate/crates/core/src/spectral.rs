//! Periodic fields on the 2π torus stored as normalized Fourier coefficients.
//!
//! Coefficients live in FFT order: index `i` holds wavenumber `i` for
//! `i <= N/2` and `i - N` above that, so the stored band is `-N/2 < k <= N/2`.
//! The normalization is `f(x) = Σ c_k e^{ikx}`, hence `c_k = (1/N) Σ_j f(x_j) e^{-ikx_j}`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Grid samples to normalized coefficients (same length).
pub fn forward_fft(values: &[C64]) -> Vec<C64> {
    let n = values.len();
    let mut buf = values.to_vec();
    fft_plan(n, false).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Normalized coefficients to grid samples (same length).
pub fn inverse_fft(coeffs: &[C64]) -> Vec<C64> {
    let mut buf = coeffs.to_vec();
    fft_plan(coeffs.len(), true).process(&mut buf);
    buf
}

/// Water depth below the rest level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Depth {
    Finite(f64),
    Infinite,
}

impl Depth {
    pub fn validate(self) -> Result<Self> {
        match self {
            Depth::Finite(h) if !(h.is_finite() && h > 0.0) => {
                Err(Error::config(format!("depth must be positive, got {h}")))
            }
            d => Ok(d),
        }
    }

    /// `tanh(h|k|)`, or 1 for infinite depth (0 at k = 0 in both cases).
    pub fn tanh_factor(self, k: f64) -> f64 {
        if k == 0.0 {
            return 0.0;
        }
        match self {
            Depth::Finite(h) => (h * k.abs()).tanh(),
            Depth::Infinite => 1.0,
        }
    }
}

/// Resolution and depth of the periodic domain (period fixed at 2π).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub n_modes: usize,
    pub depth: Depth,
}

impl GridSpec {
    pub fn new(n_modes: usize, depth: Depth) -> Result<Self> {
        if n_modes < 8 || !n_modes.is_multiple_of(2) {
            return Err(Error::config(format!(
                "n_modes must be even and >= 8, got {n_modes}"
            )));
        }
        Ok(GridSpec {
            n_modes,
            depth: depth.validate()?,
        })
    }

    pub fn grid_points(&self) -> Vec<f64> {
        grid_points(self.n_modes)
    }
}

pub fn grid_points(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect()
}

/// Wavenumber stored at FFT index `i` of an `n`-point transform.
#[inline]
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[inline]
fn index_of(k: i64, n: usize) -> Option<usize> {
    let half = (n / 2) as i64;
    if k > half || k <= -half {
        None
    } else if k >= 0 {
        Some(k as usize)
    } else {
        Some((k + n as i64) as usize)
    }
}

/// `G(0)` symbol `|k| tanh(h|k|)`.
pub fn g0_symbol(k: i64, depth: Depth) -> f64 {
    let kf = k as f64;
    kf.abs() * depth.tanh_factor(kf)
}

/// Homogeneous or inhomogeneous Sobolev weighting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SobolevKind {
    Homogeneous,
    Inhomogeneous,
}

/// Squared Sobolev weight at wavenumber `k`. The homogeneous weight of the
/// zero mode is 1 at `s = 0` and 0 otherwise.
#[inline]
pub fn sobolev_weight_sq(k: i64, s: f64, kind: SobolevKind) -> f64 {
    let kf = k as f64;
    match kind {
        SobolevKind::Homogeneous => {
            if k == 0 {
                if s == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                kf.abs().powf(2.0 * s)
            }
        }
        SobolevKind::Inhomogeneous => (1.0 + kf * kf).powf(s),
    }
}

/// A periodic scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    coeffs: Vec<C64>,
    real: bool,
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 2 && n.is_multiple_of(2), "field length must be even");
        Field {
            coeffs: vec![C64::new(0.0, 0.0); n],
            real: true,
        }
    }

    /// Wrap raw FFT-ordered coefficients; the reality flag is detected.
    pub fn from_coeffs(coeffs: Vec<C64>) -> Result<Self> {
        let n = coeffs.len();
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::input(format!(
                "coefficient count must be even, got {n}"
            )));
        }
        if coeffs
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::input("non-finite coefficient"));
        }
        let mut f = Field {
            coeffs,
            real: false,
        };
        f.real = f.hermitian_defect() == 0.0;
        Ok(f)
    }

    /// Wrap coefficients with an explicit reality flag (caller guarantees it).
    pub(crate) fn with_flag(coeffs: Vec<C64>, real: bool) -> Self {
        Field { coeffs, real }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        let mut f = Field::zeros(n);
        f.coeffs[0] = C64::new(value, 0.0);
        f
    }

    /// `amp · e^{ikx}` (complex, not real unless k = 0 and amp real).
    pub fn exp_mode(n: usize, k: i64, amp: C64) -> Self {
        let mut f = Field::zeros(n);
        f.set_coeff(k, amp);
        f.real = f.hermitian_defect() == 0.0;
        f
    }

    /// `amp · cos(kx)`.
    pub fn cos_mode(n: usize, k: i64, amp: f64) -> Self {
        Field::from_grid_real(
            &grid_points(n)
                .iter()
                .map(|x| amp * (k as f64 * x).cos())
                .collect::<Vec<_>>(),
        )
    }

    /// `amp · sin(kx)`.
    pub fn sin_mode(n: usize, k: i64, amp: f64) -> Self {
        Field::from_grid_real(
            &grid_points(n)
                .iter()
                .map(|x| amp * (k as f64 * x).sin())
                .collect::<Vec<_>>(),
        )
    }

    pub fn from_grid_real(values: &[f64]) -> Self {
        let v: Vec<C64> = values.iter().map(|&x| C64::new(x, 0.0)).collect();
        let mut coeffs = forward_fft(&v);
        enforce_hermitian(&mut coeffs);
        Field { coeffs, real: true }
    }

    pub fn from_grid_complex(values: &[C64]) -> Self {
        let coeffs = forward_fft(values);
        let mut f = Field {
            coeffs,
            real: false,
        };
        f.real = f.hermitian_defect() == 0.0;
        f
    }

    pub fn n(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn coeff(&self, k: i64) -> C64 {
        index_of(k, self.n())
            .map(|i| self.coeffs[i])
            .unwrap_or(C64::new(0.0, 0.0))
    }

    /// Set a single coefficient; clears the reality flag unless it still holds.
    pub fn set_coeff(&mut self, k: i64, v: C64) {
        if let Some(i) = index_of(k, self.n()) {
            self.coeffs[i] = v;
            if self.real {
                let mirror = self.coeff(-k);
                let nyq = k == (self.n() / 2) as i64;
                self.real = if nyq {
                    v.im == 0.0
                } else {
                    (mirror - v.conj()).norm() == 0.0
                };
            }
        }
    }

    /// Largest violation of `c(-k) = conj(c(k))` and `Im c(N/2) = 0`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n();
        let mut d = self.coeffs[0].im.abs().max(self.coeffs[n / 2].im.abs());
        for i in 1..n / 2 {
            d = d.max((self.coeffs[i] - self.coeffs[n - i].conj()).norm());
        }
        d
    }

    /// Project onto real fields (Hermitian part) and set the flag.
    pub fn to_real(&self) -> Field {
        let mut c = self.coeffs.clone();
        enforce_hermitian(&mut c);
        Field {
            coeffs: c,
            real: true,
        }
    }

    pub fn to_grid(&self) -> Vec<C64> {
        inverse_fft(&self.coeffs)
    }

    pub fn to_grid_real(&self) -> Vec<f64> {
        self.to_grid().into_iter().map(|c| c.re).collect()
    }

    /// Samples on an `m`-point grid (`m >= N`) by zero padding. The Nyquist
    /// coefficient is split evenly between `±N/2` so real fields stay real.
    pub fn sample_on(&self, m: usize) -> Vec<C64> {
        let n = self.n();
        assert!(m >= n, "padding target smaller than field");
        if m == n {
            return self.to_grid();
        }
        let mut padded = vec![C64::new(0.0, 0.0); m];
        for i in 0..n {
            let k = wavenumber(i, n);
            if k == (n / 2) as i64 {
                let half = self.coeffs[i] * 0.5;
                padded[n / 2] += half;
                padded[m - n / 2] += half;
            } else {
                let j = if k >= 0 {
                    k as usize
                } else {
                    (m as i64 + k) as usize
                };
                padded[j] += self.coeffs[i];
            }
        }
        inverse_fft(&padded)
    }

    /// Truncate samples on a fine `m`-point grid to `n` modes. The Nyquist mode is dropped.
    pub fn from_fine_samples(values: &[C64], n: usize, real: bool) -> Field {
        let m = values.len();
        let fine = forward_fft(values);
        let mut coeffs = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let k = wavenumber(i, n);
            if k == (n / 2) as i64 {
                continue;
            }
            let j = if k >= 0 {
                k as usize
            } else {
                (m as i64 + k) as usize
            };
            coeffs[i] = fine[j];
        }
        if real {
            enforce_hermitian(&mut coeffs);
        }
        Field { coeffs, real }
    }

    /// Evaluate the trigonometric interpolant at an arbitrary point.
    pub fn eval_at(&self, x: f64) -> C64 {
        let n = self.n();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            let k = wavenumber(i, n);
            if k == (n / 2) as i64 {
                acc += self.coeffs[i] * (k as f64 * x).cos();
            } else {
                acc += self.coeffs[i] * C64::from_polar(1.0, k as f64 * x);
            }
        }
        acc
    }

    /// Apply a Fourier multiplier. At the Nyquist wavenumber the symbol used is
    /// the average of its values at `±N/2`, which keeps real inputs real.
    pub fn multiplier<S: Fn(i64) -> C64>(&self, symbol: S) -> Result<Field> {
        let n = self.n();
        let half = (n / 2) as i64;
        let mut out = Vec::with_capacity(n);
        let mut keeps_real = true;
        for i in 0..n {
            let k = wavenumber(i, n);
            let s = if k == half {
                (symbol(half) + symbol(-half)) * 0.5
            } else {
                symbol(k)
            };
            if !(s.re.is_finite() && s.im.is_finite()) {
                return Err(Error::input(format!("non-finite symbol value at k = {k}")));
            }
            if self.real && keeps_real {
                let mirror = if k == half { s.conj() } else { symbol(-k) };
                keeps_real = (mirror - s.conj()).norm() <= 1e-15 * (1.0 + s.norm());
            }
            out.push(self.coeffs[i] * s);
        }
        let mut f = Field {
            coeffs: out,
            real: self.real && keeps_real,
        };
        if f.real {
            enforce_hermitian(&mut f.coeffs);
        }
        Ok(f)
    }

    /// Multiplier with a real even symbol (never fails on finite symbols).
    pub fn real_multiplier<S: Fn(i64) -> f64>(&self, symbol: S) -> Field {
        let n = self.n();
        let coeffs = (0..n)
            .map(|i| self.coeffs[i] * symbol(wavenumber(i, n)))
            .collect();
        Field {
            coeffs,
            real: self.real,
        }
    }

    /// `∂_x^p`.
    pub fn dxn(&self, p: u32) -> Field {
        if p == 0 {
            return self.clone();
        }
        let n = self.n();
        let half = (n / 2) as i64;
        let coeffs = (0..n)
            .map(|i| {
                let k = wavenumber(i, n);
                if k == half && p % 2 == 1 {
                    C64::new(0.0, 0.0)
                } else {
                    self.coeffs[i] * (I * k as f64).powu(p)
                }
            })
            .collect();
        Field {
            coeffs,
            real: self.real,
        }
    }

    pub fn dx(&self) -> Field {
        self.dxn(1)
    }

    /// `|D|^alpha`; the zero mode is always annihilated.
    pub fn abs_d_pow(&self, alpha: f64) -> Field {
        self.real_multiplier(|k| {
            if k == 0 {
                0.0
            } else {
                (k.abs() as f64).powf(alpha)
            }
        })
    }

    /// `G(0) = |D| tanh(h|D|)`.
    pub fn g0(&self, depth: Depth) -> Field {
        self.real_multiplier(|k| g0_symbol(k, depth))
    }

    /// Hilbert transform with symbol `-i sign(k)`.
    pub fn hilbert(&self) -> Field {
        let n = self.n();
        let half = (n / 2) as i64;
        let coeffs = (0..n)
            .map(|i| {
                let k = wavenumber(i, n);
                if k == 0 || k == half {
                    C64::new(0.0, 0.0)
                } else {
                    self.coeffs[i] * (-I * k.signum() as f64)
                }
            })
            .collect();
        Field {
            coeffs,
            real: self.real,
        }
    }

    /// Mean-free primitive: `c_k / (ik)`, zero at `k = 0` (and at Nyquist).
    pub fn antiderivative(&self) -> Field {
        let n = self.n();
        let half = (n / 2) as i64;
        let coeffs = (0..n)
            .map(|i| {
                let k = wavenumber(i, n);
                if k == 0 || k == half {
                    C64::new(0.0, 0.0)
                } else {
                    self.coeffs[i] / (I * k as f64)
                }
            })
            .collect();
        Field {
            coeffs,
            real: self.real,
        }
    }

    /// Translation `f(x) ↦ f(x + shift)`.
    pub fn translate(&self, shift: f64) -> Field {
        let n = self.n();
        let half = (n / 2) as i64;
        let coeffs = (0..n)
            .map(|i| {
                let k = wavenumber(i, n);
                let phase = if k == half {
                    C64::new((k as f64 * shift).cos(), 0.0)
                } else {
                    C64::from_polar(1.0, k as f64 * shift)
                };
                self.coeffs[i] * phase
            })
            .collect();
        Field {
            coeffs,
            real: self.real,
        }
    }

    /// Keep `|k| <= 2^j`.
    pub fn smoothing_projector(&self, j: u32) -> Field {
        let cutoff = 2f64.powi(j.min(60) as i32);
        let n = self.n();
        let coeffs = (0..n)
            .map(|i| {
                if (wavenumber(i, n).abs() as f64) <= cutoff {
                    self.coeffs[i]
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect();
        Field {
            coeffs,
            real: self.real,
        }
    }

    pub fn sobolev_norm(&self, s: f64, kind: SobolevKind) -> f64 {
        let n = self.n();
        (0..n)
            .map(|i| sobolev_weight_sq(wavenumber(i, n), s, kind) * self.coeffs[i].norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `(1/2π)∫ f ḡ`, equal to `Σ c_k conj(d_k)`.
    pub fn inner(&self, other: &Field) -> C64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b.conj())
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn mean(&self) -> C64 {
        self.coeffs[0]
    }

    /// Zero the Nyquist coefficient (the mode no dynamics acts on).
    pub fn without_nyquist(&self) -> Field {
        let mut f = self.clone();
        let n = f.n();
        f.coeffs[n / 2] = C64::new(0.0, 0.0);
        f
    }

    pub fn without_mean(&self) -> Field {
        let mut f = self.clone();
        f.coeffs[0] = C64::new(0.0, 0.0);
        f
    }

    /// Sup norm of the interpolant sampled on the 3N/2 grid.
    pub fn sup_norm(&self) -> f64 {
        self.sample_on(fine_len(self.n()))
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, a: f64) -> Field {
        Field {
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
            real: self.real,
        }
    }

    pub fn scale_c(&self, a: C64) -> Field {
        Field {
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
            real: self.real && a.im == 0.0,
        }
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: f64, other: &Field) -> Field {
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x + y * a)
            .collect();
        Field {
            coeffs,
            real: self.real && other.real,
        }
    }

    pub fn axpy_c(&self, a: C64, other: &Field) -> Field {
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x + y * a)
            .collect();
        Field {
            coeffs,
            real: self.real && other.real && a.im == 0.0,
        }
    }

    /// Dealiased product (padded to 3N/2, multiplied, truncated; Nyquist dropped).
    pub fn product(&self, other: &Field) -> Field {
        let m = fine_len(self.n());
        let a = self.sample_on(m);
        let b = other.sample_on(m);
        let v: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Field::from_fine_samples(&v, self.n(), self.real && other.real)
    }

    /// Product evaluated on the N-point grid (no padding). Used where the
    /// exact pointwise support of the factor matters.
    pub fn grid_product(&self, other: &Field) -> Field {
        let a = self.to_grid();
        let b = other.to_grid();
        let v: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let mut f = Field::from_grid_complex(&v);
        if self.real && other.real {
            enforce_hermitian(&mut f.coeffs);
            f.real = true;
        }
        f
    }
}

/// Evaluate a real pointwise function of several real fields on the 3N/2
/// grid and truncate back to N modes.
pub fn map_fine<F: Fn(&[f64]) -> f64>(fields: &[&Field], f: F) -> Field {
    let n = fields[0].n();
    let m = fine_len(n);
    let samples: Vec<Vec<C64>> = fields.iter().map(|fl| fl.sample_on(m)).collect();
    let mut args = vec![0.0; fields.len()];
    let v: Vec<C64> = (0..m)
        .map(|j| {
            for (a, s) in args.iter_mut().zip(&samples) {
                *a = s[j].re;
            }
            C64::new(f(&args), 0.0)
        })
        .collect();
    Field::from_fine_samples(&v, n, true)
}

/// Length of the dealiasing grid.
pub fn fine_len(n: usize) -> usize {
    3 * n / 2
}

fn enforce_hermitian(c: &mut [C64]) {
    let n = c.len();
    c[0].im = 0.0;
    c[n / 2].im = 0.0;
    for i in 1..n / 2 {
        let avg = (c[i] + c[n - i].conj()) * 0.5;
        c[i] = avg;
        c[n - i] = avg.conj();
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.axpy(-1.0, rhs)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, a: f64) -> Field {
        self.scale(a)
    }
}
