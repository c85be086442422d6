//! Seeded synthetic states.

use hydroctrl_core::pair::pair_norm;
use hydroctrl_core::spectral::SobolevKind;
use hydroctrl_core::{Field, StatePair, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Real mean-free field on modes `1..=kmax` with `k⁻²` decay, scaled to a homogeneous `H^s` norm.
pub fn smooth_field(rng: &mut ChaCha8Rng, n: usize, kmax: i64, s: f64, norm: f64) -> Field {
    let mut f = Field::zeros(n);
    for k in 1..=kmax {
        let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / (k * k) as f64;
        f.set_coeff(k, c);
        f.set_coeff(-k, c.conj());
    }
    let f = f.to_real();
    f.scale(norm / f.sobolev_norm(s, SobolevKind::Homogeneous))
}

/// `smooth_field` for both components, the second with a mean.
pub fn smooth_pair(rng: &mut ChaCha8Rng, n: usize, kmax: i64, amp: f64) -> StatePair {
    let eta = smooth_field(rng, n, kmax, 0.0, amp);
    let mean = rng.gen_range(-0.5..0.5) * amp;
    let psi = &smooth_field(rng, n, kmax, 0.0, amp) + &Field::constant(n, mean);
    StatePair::new(eta, psi)
}

/// Seeded state with `pair_norm(u, s) = size`; zero when `size` is 0.
pub fn random_state(n: usize, kmax: i64, size: f64, s: f64, seed: u64) -> StatePair {
    if size == 0.0 {
        return StatePair::zeros(n);
    }
    let u = smooth_pair(&mut rng(seed), n, kmax, 1.0);
    u.scale(size / pair_norm(&u, s))
}
