//! Hydroelastic right-hand side, the elastic force and its linearization.

use crate::dno::{check_slope, DnOperator, DnoConfig};
use crate::error::{Error, Result};
use crate::pair::StatePair;
use crate::spectral::{g0_symbol, map_fine, Depth, Field, I};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysParams {
    pub g: f64,
    pub sigma: f64,
    pub depth: Depth,
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams {
            g: 1.0,
            sigma: 1.0,
            depth: Depth::Infinite,
        }
    }
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::config("g must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma must be positive"));
        }
        self.depth.validate()?;
        Ok(())
    }

    /// Restoring symbol `g + σk⁴`.
    pub fn restoring_symbol(&self, k: i64) -> f64 {
        let kf = k as f64;
        self.g + self.sigma * kf.powi(4)
    }

    /// Flat dispersion `L(k) = ((g+σk⁴) G0(k))^{1/2}`.
    pub fn dispersion(&self, k: i64) -> f64 {
        (self.restoring_symbol(k) * g0_symbol(k, self.depth)).sqrt()
    }
}

/// Coefficients of `∂_x, ∂_x², ∂_x³, ∂_x⁴` in the elastic linearization (σ excluded).
#[derive(Clone, Debug, PartialEq)]
pub struct ElasticCoeffs {
    pub e1: Field,
    pub e2: Field,
    pub e3: Field,
    pub e4: Field,
}

impl ElasticCoeffs {
    /// `Σ E_j ∂_x^j η̃` (multiply by σ for the physical derivative).
    pub fn apply(&self, eta_tilde: &Field) -> Field {
        let t1 = self.e1.product(&eta_tilde.dxn(1));
        let t2 = self.e2.product(&eta_tilde.dxn(2));
        let t3 = self.e3.product(&eta_tilde.dxn(3));
        let t4 = self.e4.product(&eta_tilde.dxn(4));
        &(&t1 + &t2) + &(&t3 + &t4)
    }
}

/// Elastic force in divergence form (the form used by the dynamics).
pub fn elastic_force(eta: &Field, p: &PhysParams) -> Result<Field> {
    check_slope(eta)?;
    let ex = eta.dx();
    let exx = eta.dxn(2);
    let first = map_fine(&[&ex, &exx], |v| v[1] / (1.0 + v[0] * v[0]).powf(2.5)).dxn(2);
    let second = map_fine(&[&ex, &exx], |v| {
        v[0] * v[1] * v[1] / (1.0 + v[0] * v[0]).powf(3.5)
    })
    .dx();
    Ok(first.axpy(2.5, &second).scale(p.sigma))
}

/// Elastic force in curvature form `σ{κ_ss + κ³/2}`, used as an independent check.
pub fn elastic_force_curvature(eta: &Field, p: &PhysParams) -> Result<Field> {
    check_slope(eta)?;
    let ex = eta.dx();
    let exx = eta.dxn(2);
    let curvature = map_fine(&[&ex, &exx], |v| v[1] / (1.0 + v[0] * v[0]).powf(1.5));
    let inner = map_fine(&[&ex, &curvature.dx()], |v| {
        v[1] / (1.0 + v[0] * v[0]).sqrt()
    });
    let outer = map_fine(&[&ex, &inner.dx(), &curvature], |v| {
        v[1] / (1.0 + v[0] * v[0]).sqrt() + 0.5 * v[2] * v[2] * v[2]
    });
    Ok(outer.scale(p.sigma))
}

/// The four coefficient fields of the elastic linearization.
pub fn elastic_linearization(eta: &Field) -> Result<ElasticCoeffs> {
    check_slope(eta)?;
    let ex = eta.dx();
    let exx = eta.dxn(2);
    let e4 = map_fine(&[&ex], |v| (1.0 + v[0] * v[0]).powf(-2.5));
    let e3 = e4.dx().scale(2.0);
    let slope_term = map_fine(&[&ex, &exx], |v| {
        5.0 * v[0] * v[1] / (1.0 + v[0] * v[0]).powf(3.5)
    });
    let curv_term = map_fine(&[&ex, &exx], |v| {
        let w = 1.0 + v[0] * v[0];
        5.0 * (1.0 - 6.0 * v[0] * v[0]) * v[1] * v[1] / (2.0 * w.powf(4.5))
    });
    let e2 = &(&e4.dxn(2) - &slope_term.dx()) + &curv_term;
    let e1 = &curv_term.dx() - &slope_term.dxn(2);
    Ok(ElasticCoeffs { e1, e2, e3, e4 })
}

/// Time derivative of the state under the nonlinear dynamics.
pub fn nonlinear_rhs(
    u: &StatePair,
    pext: Option<&Field>,
    p: &PhysParams,
    cfg: &DnoConfig,
) -> Result<StatePair> {
    let op = DnOperator::new(&u.eta, p.depth, cfg)?;
    nonlinear_rhs_with(&op, u, pext, p)
}

/// `nonlinear_rhs` with a prebuilt Dirichlet-Neumann operator at `u.eta`.
pub fn nonlinear_rhs_with(
    op: &DnOperator,
    u: &StatePair,
    pext: Option<&Field>,
    p: &PhysParams,
) -> Result<StatePair> {
    let g_psi = op.apply(&u.psi);
    let eta_x = u.eta.dx();
    let psi_x = u.psi.dx();
    let quad = map_fine(&[&eta_x, &psi_x, &g_psi], |v| {
        let num = v[0] * v[1] + v[2];
        -0.5 * v[1] * v[1] + 0.5 * num * num / (1.0 + v[0] * v[0])
    });
    let mut psi_t = &quad - &elastic_force(&u.eta, p)?;
    psi_t = psi_t.axpy(-p.g, &u.eta);
    if let Some(f) = pext {
        psi_t = &psi_t + f;
    }
    Ok(StatePair::new(g_psi, psi_t.without_nyquist()))
}

/// Linearization at rest: `η_t = G(0)ψ`, `ψ_t = -(g + σ∂⁴)η + P` (Nyquist mode inert).
pub fn linear_rhs(u: &StatePair, pext: Option<&Field>, p: &PhysParams) -> StatePair {
    let eta_t = u.psi.g0(p.depth).without_nyquist();
    let mut psi_t = -&u.eta.real_multiplier(|k| p.restoring_symbol(k));
    if let Some(f) = pext {
        psi_t = &psi_t + f;
    }
    StatePair::new(eta_t, psi_t.without_nyquist())
}

/// Symbol of `L G(0)^{-1}`, zero at k = 0.
fn diag_symbol(k: i64, p: &PhysParams) -> f64 {
    let g0 = g0_symbol(k, p.depth);
    if g0 == 0.0 {
        0.0
    } else {
        (p.restoring_symbol(k) / g0).sqrt()
    }
}

/// Complex variable `ψ - i L G(0)^{-1} η` diagonalizing the flat dynamics.
pub fn flat_diagonal_variable(u: &StatePair, p: &PhysParams) -> Field {
    let m_eta = u.eta.real_multiplier(|k| diag_symbol(k, p));
    u.psi.axpy_c(-I, &m_eta)
}

/// Inverse of [`flat_diagonal_variable`] for real states.
pub fn from_flat_diagonal_variable(w: &Field, p: &PhysParams) -> StatePair {
    let n = w.n();
    let mut conj_coeffs = Vec::with_capacity(n);
    for i in 0..n {
        let k = crate::spectral::wavenumber(i, n);
        let mirror = if k == (n / 2) as i64 { k } else { -k };
        conj_coeffs.push(w.coeff(mirror).conj());
    }
    let w_bar = Field::from_coeffs(conj_coeffs).expect("finite coefficients");
    let psi = (&w_bar + w).scale(0.5).to_real();
    let m_eta = (w - &w_bar).scale_c(I * 0.5).to_real();
    let eta = m_eta.real_multiplier(|k| {
        let s = diag_symbol(k, p);
        if s == 0.0 {
            0.0
        } else {
            1.0 / s
        }
    });
    StatePair::new(eta, psi)
}
