#![allow(dead_code)]

use hydroctrl_core::spectral::{Field, SobolevKind, C64};
use hydroctrl_core::StatePair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Real mean-free field with modes `1..=kmax`, scaled to the given Sobolev norm.
pub fn smooth_field(rng: &mut ChaCha8Rng, n: usize, kmax: i64, s: f64, norm: f64) -> Field {
    let mut f = Field::zeros(n);
    for k in 1..=kmax {
        let decay = 1.0 / (k * k) as f64;
        let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * decay;
        f.set_coeff(k, c);
        f.set_coeff(-k, c.conj());
    }
    let f = f.to_real();
    let current = f.sobolev_norm(s, SobolevKind::Homogeneous);
    f.scale(norm / current)
}

/// Field with a mean plus `smooth_field`.
pub fn smooth_field_with_mean(
    rng: &mut ChaCha8Rng,
    n: usize,
    kmax: i64,
    s: f64,
    norm: f64,
) -> Field {
    let mean = rng.gen_range(-0.5..0.5);
    &smooth_field(rng, n, kmax, s, norm) + &Field::constant(n, mean * norm)
}

pub fn smooth_pair(rng: &mut ChaCha8Rng, n: usize, kmax: i64, amp: f64) -> StatePair {
    StatePair::new(
        smooth_field(rng, n, kmax, 0.0, amp),
        smooth_field_with_mean(rng, n, kmax, 0.0, amp),
    )
}

/// Least-squares slope of log(err) against log(eps).
pub fn loglog_slope(eps: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}
