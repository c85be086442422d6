//! Dirichlet-Neumann operator by Taylor expansion in the surface elevation.
//!
//! The harmonic extension of ψ is written as `Σ_k c_k e^{ikx} cosh(|k|(y+h))/cosh(|k|h)`
//! and the Dirichlet condition `φ(x, η(x)) = ψ(x)` is expanded in powers of η.
//! With `P_j = η^j / j!` and `a_j(D)` the j-th y-derivative symbol at y = 0
//! (`|k|^j`, times `tanh(h|k|)` for odd j), the order-n coefficient solves
//! `c_n = -Σ_{j=1..n} P_j a_j(D) c_{n-j}` and
//! `G_n ψ = Σ_{j=0..n} P_j a_{j+1}(D) c_{n-j} - Σ_{j=1..n} (∂_x P_j) ∂_x a_{j-1}(D) c_{n-j}`.

use crate::error::{Error, Result};
use crate::spectral::{map_fine, Depth, Field};

/// Largest admissible expansion order.
pub const MAX_EXPANSION_ORDER: usize = 8;
/// Bound on `‖η_x‖_∞` inside which the truncated expansion is trusted.
pub const SLOPE_LIMIT: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DnoConfig {
    pub expansion_order: usize,
    pub fd_epsilon: f64,
}

impl Default for DnoConfig {
    fn default() -> Self {
        DnoConfig {
            expansion_order: 4,
            fd_epsilon: 1e-4,
        }
    }
}

impl DnoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.expansion_order > MAX_EXPANSION_ORDER {
            return Err(Error::config(format!(
                "expansion order {} exceeds cap {MAX_EXPANSION_ORDER}",
                self.expansion_order
            )));
        }
        if !(self.fd_epsilon > 0.0 && self.fd_epsilon.is_finite()) {
            return Err(Error::config("fd_epsilon must be positive"));
        }
        Ok(())
    }
}

/// Reject elevations whose slope leaves the trusted region.
pub fn check_slope(eta: &Field) -> Result<()> {
    let slope = eta.dx().sup_norm();
    if !slope.is_finite() || slope > SLOPE_LIMIT {
        return Err(Error::guard(
            0.0,
            format!("surface slope {slope:.4e} exceeds {SLOPE_LIMIT}"),
        ));
    }
    Ok(())
}

/// Symbol of `∂_y^j` of the normalized harmonic extension at the rest level.
fn depth_symbol(j: usize, k: i64, depth: Depth) -> f64 {
    let kf = (k as f64).abs();
    let base = kf.powi(j as i32);
    if j % 2 == 1 {
        base * depth.tanh_factor(kf)
    } else {
        base
    }
}

/// `G(η)` frozen at one elevation, reusable across many potentials.
#[derive(Clone, Debug)]
pub struct DnOperator {
    depth: Depth,
    order: usize,
    /// `η^j / j!` for j = 0..=K.
    powers: Vec<Field>,
    /// `∂_x(η^j / j!)`.
    power_slopes: Vec<Field>,
}

impl DnOperator {
    pub fn new(eta: &Field, depth: Depth, cfg: &DnoConfig) -> Result<Self> {
        cfg.validate()?;
        check_slope(eta)?;
        let order = cfg.expansion_order;
        let mut powers = Vec::with_capacity(order + 1);
        let mut factorial = 1.0;
        for j in 0..=order {
            if j > 0 {
                factorial *= j as f64;
            }
            let scale = 1.0 / factorial;
            let jj = j as i32;
            powers.push(map_fine(&[eta], move |v| v[0].powi(jj) * scale));
        }
        let power_slopes = powers.iter().map(Field::dx).collect();
        Ok(DnOperator {
            depth,
            order,
            powers,
            power_slopes,
        })
    }

    pub fn depth(&self) -> Depth {
        self.depth
    }

    fn sym(&self, j: usize, f: &Field) -> Field {
        let depth = self.depth;
        f.real_multiplier(|k| depth_symbol(j, k, depth))
    }

    fn times_power(&self, j: usize, f: &Field) -> Field {
        if j == 0 {
            f.clone()
        } else {
            self.powers[j].product(f)
        }
    }

    /// Truncated `G(η)ψ = Σ_{n<=K} G_n(η)ψ`, mean removed.
    pub fn apply(&self, psi: &Field) -> Field {
        let k_max = self.order;
        let mut c: Vec<Field> = Vec::with_capacity(k_max + 1);
        c.push(psi.clone());
        for n in 1..=k_max {
            let mut acc = Field::zeros(psi.n());
            for j in 1..=n {
                acc = &acc - &self.times_power(j, &self.sym(j, &c[n - j]));
            }
            c.push(acc);
        }
        let mut out = Field::zeros(psi.n());
        for (m, cm) in c.iter().enumerate() {
            for j in 0..=(k_max - m) {
                out = &out + &self.times_power(j, &self.sym(j + 1, cm));
                if j >= 1 {
                    let grad = self.sym(j - 1, cm).dx();
                    out = &out - &self.power_slopes[j].product(&grad);
                }
            }
        }
        out.without_mean().without_nyquist()
    }
}

/// `G(η)ψ` at expansion order `cfg.expansion_order`.
pub fn dn_apply(eta: &Field, psi: &Field, depth: Depth, cfg: &DnoConfig) -> Result<Field> {
    Ok(DnOperator::new(eta, depth, cfg)?.apply(psi))
}

/// Surface velocity traces `B = (η_xψ_x + Gψ)/(1+η_x²)` and `V = ψ_x - Bη_x`.
pub fn velocity_trace(op: &DnOperator, eta: &Field, psi: &Field) -> (Field, Field) {
    let g_psi = op.apply(psi);
    velocity_trace_with(eta, psi, &g_psi)
}

/// Velocity traces given a precomputed `G(η)ψ`.
pub fn velocity_trace_with(eta: &Field, psi: &Field, g_psi: &Field) -> (Field, Field) {
    let eta_x = eta.dx();
    let psi_x = psi.dx();
    let b = map_fine(&[&eta_x, &psi_x, g_psi], |v| {
        (v[0] * v[1] + v[2]) / (1.0 + v[0] * v[0])
    });
    let v = &psi_x - &b.product(&eta_x);
    (b, v)
}

/// Shape derivative `G'(η)[η̃]ψ = -G(η)(Bη̃) - ∂_x(Vη̃)` with precomputed traces.
pub fn shape_derivative_with(op: &DnOperator, b: &Field, v: &Field, eta_tilde: &Field) -> Field {
    let first = op.apply(&b.product(eta_tilde));
    let second = v.product(eta_tilde).dx();
    (&(-&first) - &second).without_mean()
}

pub fn shape_derivative(
    eta: &Field,
    psi: &Field,
    eta_tilde: &Field,
    depth: Depth,
    cfg: &DnoConfig,
) -> Result<Field> {
    let op = DnOperator::new(eta, depth, cfg)?;
    let (b, v) = velocity_trace(&op, eta, psi);
    Ok(shape_derivative_with(&op, &b, &v, eta_tilde))
}
