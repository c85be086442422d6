//! The (η, ψ) state pair and the ℋ^s = H^{s+3/2} × H^s geometry on it.

use crate::error::{Error, Result};
use crate::spectral::{sobolev_weight_sq, wavenumber, Field, SobolevKind, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct StatePair {
    pub eta: Field,
    pub psi: Field,
}

impl StatePair {
    pub fn new(eta: Field, psi: Field) -> Self {
        assert_eq!(eta.n(), psi.n(), "pair components must share a grid");
        StatePair { eta, psi }
    }

    pub fn zeros(n: usize) -> Self {
        StatePair {
            eta: Field::zeros(n),
            psi: Field::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.eta.n()
    }

    /// Check the state invariants: both components real, η mean-free.
    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_real() || !self.psi.is_real() {
            return Err(Error::input("state components must be real fields"));
        }
        if self.eta.mean().norm() > 1e-14 * (1.0 + self.eta.l2_norm()) {
            return Err(Error::input("elevation must have zero mean"));
        }
        Ok(())
    }

    pub fn axpy(&self, a: f64, other: &StatePair) -> StatePair {
        StatePair {
            eta: self.eta.axpy(a, &other.eta),
            psi: self.psi.axpy(a, &other.psi),
        }
    }

    pub fn scale(&self, a: f64) -> StatePair {
        StatePair {
            eta: self.eta.scale(a),
            psi: self.psi.scale(a),
        }
    }

    pub fn add(&self, other: &StatePair) -> StatePair {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &StatePair) -> StatePair {
        self.axpy(-1.0, other)
    }

    pub fn without_nyquist(&self) -> StatePair {
        StatePair {
            eta: self.eta.without_nyquist(),
            psi: self.psi.without_nyquist(),
        }
    }

    pub fn to_real(&self) -> StatePair {
        StatePair {
            eta: self.eta.to_real(),
            psi: self.psi.to_real(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.eta.max_abs_coeff() == 0.0 && self.psi.max_abs_coeff() == 0.0
    }

    /// Flattened `[η̂; ψ̂]` coefficient vector of length 2N.
    pub fn to_vec(&self) -> Vec<C64> {
        let mut v = self.eta.coeffs().to_vec();
        v.extend_from_slice(self.psi.coeffs());
        v
    }

    pub fn from_vec(v: &[C64]) -> StatePair {
        let n = v.len() / 2;
        StatePair {
            eta: Field::with_flag(v[..n].to_vec(), false),
            psi: Field::with_flag(v[n..].to_vec(), false),
        }
    }

    /// `ℋ^s` norm: Euclidean combination of `‖η‖_{s+3/2}` and `‖ψ‖_s`.
    pub fn norm(&self, s: f64, kind: SobolevKind) -> f64 {
        let a = self.eta.sobolev_norm(s + 1.5, kind);
        let b = self.psi.sobolev_norm(s, kind);
        (a * a + b * b).sqrt()
    }

    /// Homogeneous `ℋ⁰` norm, the energy geometry used by adjoints and HUM.
    pub fn h0_norm(&self) -> f64 {
        self.h0_inner(self).re.max(0.0).sqrt()
    }

    /// `⟨u, v⟩ = Σ |k|³ η̂_u conj(η̂_v) + Σ ψ̂_u conj(ψ̂_v)`.
    pub fn h0_inner(&self, other: &StatePair) -> C64 {
        let n = self.n();
        let w = h0_eta_weights(n);
        let a: C64 = (0..n)
            .map(|i| self.eta.coeffs()[i] * other.eta.coeffs()[i].conj() * w[i])
            .sum();
        a + self.psi.inner(&other.psi)
    }
}

/// Homogeneous `ℋ^s` norm of a pair.
pub fn pair_norm(u: &StatePair, s: f64) -> f64 {
    u.norm(s, SobolevKind::Homogeneous)
}

/// ℋ⁰ weights `|k|³` on the η block (FFT order).
pub fn h0_eta_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| sobolev_weight_sq(wavenumber(i, n), 1.5, SobolevKind::Homogeneous))
        .collect()
}

/// Diagonal of the ℋ⁰ Gram matrix on the flattened 2N vector.
pub fn h0_weights_flat(n: usize) -> Vec<f64> {
    let mut w = h0_eta_weights(n);
    w.extend(std::iter::repeat_n(1.0, n));
    w
}
