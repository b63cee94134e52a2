//! Bose-Einstein equilibria and inversion of (mass, energy) to
//! equilibrium parameters.
//!
//! The stationary states with finite mass are g = m0 delta(x) +
//! sqrt(x) / (exp(beta x + alpha) - 1) in density form, i.e. f(x) =
//! 1 / (exp(beta x + alpha) - 1) with an optional condensate fraction m0
//! at x = 0 when alpha = 0. At fixed alpha the mass scales as beta^(-3/2)
//! and the energy as beta^(-5/2), so the ratio mass / energy^(3/5) is
//! scale-invariant and strictly monotone in alpha; fitting inverts it by
//! bisection. Moments are computed by direct quadrature rather than
//! polylogarithms, which keeps the accuracy auditable against refinement.

use crate::error::{BnError, Result};
use crate::grid::{Distribution, EnergyGrid};
use crate::quad::simpson;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Parameters of a Bose-Einstein equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BEParams {
    /// Chemical-potential parameter, >= 0.
    pub alpha: f64,
    /// Inverse temperature, > 0.
    pub beta: f64,
    /// Condensate mass carried as metadata; nonzero only when alpha = 0.
    pub m0: f64,
    pub supercritical: bool,
}

impl BEParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(BnError::InvalidInput(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(BnError::InvalidInput(format!(
                "beta must be finite and > 0, got {}",
                self.beta
            )));
        }
        if !(self.m0.is_finite() && self.m0 >= 0.0) {
            return Err(BnError::InvalidInput(format!(
                "m0 must be finite and >= 0, got {}",
                self.m0
            )));
        }
        if self.alpha * self.m0 != 0.0 {
            return Err(BnError::InvalidInput(format!(
                "alpha * m0 must vanish (alpha {}, m0 {})",
                self.alpha, self.m0
            )));
        }
        Ok(())
    }
}

/// Pointwise equilibrium value f(x) = 1 / (exp(beta x + alpha) - 1).
#[inline]
pub fn be_value(alpha: f64, beta: f64, x: f64) -> f64 {
    (beta * x + alpha).exp_m1().recip()
}

/// Samples the continuous part of an equilibrium on a grid. The condensate
/// mass m0 stays in the parameters; no Dirac mass is placed on the mesh.
pub fn be_distribution(params: &BEParams, grid: Arc<EnergyGrid>) -> Result<Distribution> {
    params.validate()?;
    let values: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&x| be_value(params.alpha, params.beta, x))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(BnError::InvalidInput(format!(
            "exp(beta x + alpha) - 1 underflows at the first node x_1 = {:.3e}; \
             raise first_node or beta",
            grid.nodes()[0]
        )));
    }
    Distribution::new(grid, values, 0.0)
}

/// Mass and energy of the continuous equilibrium part by high-resolution
/// quadrature: substituting x = u^2 removes the integrable alpha = 0
/// singularity, and the tail is cut where the integrand is below 1e-26
/// relative.
pub fn be_moments(alpha: f64, beta: f64) -> Result<(f64, f64)> {
    if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta > 0.0) {
        return Err(BnError::InvalidInput(format!(
            "be_moments requires alpha >= 0 and beta > 0, got ({alpha}, {beta})"
        )));
    }
    let u_max = (60.0 / beta).sqrt();
    let panels = 8192;
    // u = 0 limits: 2 u^2 f(u^2) -> 2 / beta when alpha = 0, else 0.
    let mass = simpson(
        |u| {
            if u == 0.0 {
                return if alpha == 0.0 { 2.0 / beta } else { 0.0 };
            }
            2.0 * u * u * be_value(alpha, beta, u * u)
        },
        0.0,
        u_max,
        panels,
    );
    let energy = simpson(
        |u| {
            if u == 0.0 {
                return 0.0;
            }
            2.0 * u * u * u * u * be_value(alpha, beta, u * u)
        },
        0.0,
        u_max,
        panels,
    );
    Ok((mass, energy))
}

/// Critical mass of the alpha = 0 equilibrium carrying the given energy.
pub fn critical_mass(energy: f64) -> Result<f64> {
    let (m0, e0) = be_moments(0.0, 1.0)?;
    let beta = (e0 / energy).powf(0.4);
    Ok(m0 * beta.powf(-1.5))
}

const FIT_MAX_ITERS: usize = 200;

/// Inverts (mass, energy) to equilibrium parameters.
///
/// The scale-invariant ratio mass / energy^(3/5) fixes alpha by monotone
/// bisection; when the data demand alpha < 0 the pair is supercritical:
/// alpha is pinned at 0, beta is fitted from the energy, and the mass
/// excess over the critical mass becomes the condensate m0.
pub fn fit_equilibrium(mass: f64, energy: f64) -> Result<BEParams> {
    if !(mass > 0.0 && energy > 0.0 && mass.is_finite() && energy.is_finite()) {
        return Err(BnError::InvalidInput(format!(
            "fit_equilibrium requires positive finite moments, got ({mass}, {energy})"
        )));
    }
    let target = mass / energy.powf(0.6);
    let ratio_at = |alpha: f64| -> Result<f64> {
        let (m, e) = be_moments(alpha, 1.0)?;
        Ok(m / e.powf(0.6))
    };
    let r_critical = ratio_at(0.0)?;

    if target >= r_critical {
        let (_, e1) = be_moments(0.0, 1.0)?;
        let beta = (e1 / energy).powf(0.4);
        let m_crit = critical_mass(energy)?;
        let m0 = (mass - m_crit).max(0.0);
        return Ok(BEParams {
            alpha: 0.0,
            beta,
            m0,
            supercritical: m0 > 0.0,
        });
    }

    // Bracket alpha: the ratio decreases monotonically toward zero.
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut r_hi = ratio_at(hi)?;
    let mut doublings = 0;
    while r_hi > target {
        lo = hi;
        hi *= 2.0;
        r_hi = ratio_at(hi)?;
        doublings += 1;
        if doublings > 60 {
            return Err(BnError::FitFailure(format!(
                "could not bracket alpha: ratio {r_hi:.6e} at alpha {hi:.3e} \
                 still above target {target:.6e}"
            )));
        }
    }
    // Spot-check monotonicity over the bracket before trusting bisection.
    let mut prev = ratio_at(lo)?;
    for step in 1..=4 {
        let a = lo + (hi - lo) * step as f64 / 4.0;
        let r = ratio_at(a)?;
        if r > prev * (1.0 + 1e-12) {
            return Err(BnError::FitFailure(format!(
                "fit ratio not monotone over bracket [{lo:.3e}, {hi:.3e}] near alpha {a:.3e}"
            )));
        }
        prev = r;
    }
    let mut iters = 0;
    while iters < FIT_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= 1e-13 * mid.max(1.0) {
            break;
        }
        if ratio_at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
    }
    if iters >= FIT_MAX_ITERS {
        return Err(BnError::FitFailure(format!(
            "alpha bisection did not converge after {FIT_MAX_ITERS} iterations; \
             bracket [{lo:.17e}, {hi:.17e}], target ratio {target:.17e}"
        )));
    }
    let alpha = 0.5 * (lo + hi);
    let (_, e1) = be_moments(alpha, 1.0)?;
    let beta = (e1 / energy).powf(0.4);
    Ok(BEParams {
        alpha,
        beta,
        m0: 0.0,
        supercritical: false,
    })
}
