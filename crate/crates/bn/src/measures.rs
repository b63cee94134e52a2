//! Desk-scale measure machinery: atomic Radon measures, the exponentially
//! weighted sliding-window norm and its covering bounds, the local
//! existence horizon, and singular initial data.
//!
//! Atoms exist only for norm and bound checks; they never enter the
//! collision operator. Singular-but-integrable data evolve as gridded
//! densities, which matches the conservative, condensate-free solution
//! class the window norm controls.

use crate::diagnostics::{
    density_interval_critical, window_kink_candidates, windowed_integral,
};
use crate::error::{BnError, Result};
use crate::grid::{Distribution, EnergyGrid};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Point mass of a Radon measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: f64,
    pub mass: f64,
}

/// Nonnegative Radon measure: point masses plus an optional gridded
/// density part.
#[derive(Debug, Clone, Default)]
pub struct RadonMeasure {
    pub atoms: Vec<Atom>,
    pub density: Option<Distribution>,
}

impl RadonMeasure {
    pub fn from_atoms(atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            if !(a.position.is_finite() && a.position >= 0.0) {
                return Err(BnError::InvalidInput(format!(
                    "atom position must be finite and nonnegative, got {}",
                    a.position
                )));
            }
            if !(a.mass.is_finite() && a.mass > 0.0) {
                return Err(BnError::InvalidInput(format!(
                    "atom mass must be finite and positive, got {}",
                    a.mass
                )));
            }
        }
        Ok(RadonMeasure {
            atoms,
            density: None,
        })
    }

    pub fn with_density(mut self, density: Distribution) -> Self {
        self.density = Some(density);
        self
    }

    /// Total variation mu(R+): atom masses plus the L1 norm of the density.
    pub fn total_mass(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.mass).sum();
        atoms + self.density.as_ref().map_or(0.0, |d| d.integrate(0.0))
    }

    /// Moment of order p (atoms exactly, density by grid quadrature).
    pub fn moment(&self, p: f64) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.mass * a.position.powf(p)).sum();
        atoms + self.density.as_ref().map_or(0.0, |d| d.integrate(p))
    }
}

const BOUNDARY_EPS: f64 = 1e-12;

/// Sliding-window norm sup_{R > 0} of the integral of e^(beta x) over the
/// open window (R, R+1).
///
/// Candidate origins: every atom position a with a - 1 and the
/// epsilon-shifted variants handling the open-interval boundaries, the
/// density kinks, interior critical points of the density part, and the
/// R -> 0+ limit window (0, 1).
pub fn gbeta_norm_measure(mu: &RadonMeasure, beta: f64) -> f64 {
    assert!(beta > 1.0, "window norm requires beta > 1");
    let mut candidates: Vec<f64> = vec![0.0];
    for a in &mu.atoms {
        for r in [
            a.position,
            a.position - BOUNDARY_EPS,
            a.position + BOUNDARY_EPS,
            a.position - 1.0,
            a.position - 1.0 - BOUNDARY_EPS,
            a.position - 1.0 + BOUNDARY_EPS,
        ] {
            if r >= 0.0 {
                candidates.push(r);
            }
        }
    }
    if let Some(d) = &mu.density {
        candidates.extend(window_kink_candidates(d));
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    let eval = |r: f64| -> f64 {
        let atoms: f64 = mu
            .atoms
            .iter()
            .filter(|a| a.position > r && a.position < r + 1.0)
            .map(|a| a.mass * (beta * a.position).exp())
            .sum();
        atoms
            + mu
                .density
                .as_ref()
                .map_or(0.0, |d| windowed_integral(d, beta, r))
    };

    let mut best = 0.0_f64;
    for &r in &candidates {
        best = best.max(eval(r));
    }
    if let Some(d) = &mu.density {
        for pair in candidates.windows(2) {
            if let Some(root) = density_interval_critical(d, beta, pair[0], pair[1]) {
                best = best.max(eval(root));
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MassBoundCheck {
    pub total_mass: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Covering-argument mass bound: mu(R+) <= 3 ||mu||, valid for beta >= 1.2.
pub fn mass_bound_check(mu: &RadonMeasure, beta: f64) -> Result<MassBoundCheck> {
    if !(beta >= 1.2) {
        return Err(BnError::InvalidInput(format!(
            "mass bound check requires beta >= 1.2, got {beta}"
        )));
    }
    let total_mass = mu.total_mass();
    let bound = 3.0 * gbeta_norm_measure(mu, beta);
    Ok(MassBoundCheck {
        total_mass,
        bound,
        pass: total_mass <= bound * (1.0 + 1e-12),
    })
}

/// Tail moment of order p above a threshold.
pub fn tail_moment(mu: &RadonMeasure, p: f64, threshold: f64) -> f64 {
    let atoms: f64 = mu
        .atoms
        .iter()
        .filter(|a| a.position > threshold)
        .map(|a| a.mass * a.position.powf(p))
        .sum();
    let density: f64 = mu.density.as_ref().map_or(0.0, |d| {
        d.grid()
            .nodes()
            .iter()
            .zip(d.grid().weights())
            .zip(d.values())
            .filter(|((&x, _), _)| x > threshold)
            .map(|((&x, &w), &f)| w * x.powf(p) * f)
            .sum()
    });
    atoms + density
}

/// Exponential tail envelope for moments of order p <= 3/2 under window-norm
/// control: overlapping half-shifted unit windows cover (threshold, inf),
/// each contributing at most kappa, and x^p e^(-beta x/2) stays below 3 for
/// beta > 1. The geometric sum of the window offsets closes the bound
/// 3 kappa e^(-beta threshold / 2) / (1 - e^(-beta/4)).
pub fn tail_moment_bound(kappa: f64, beta: f64, threshold: f64) -> f64 {
    3.0 * kappa * (-beta * threshold / 2.0).exp() / (1.0 - (-beta / 4.0).exp())
}

/// Largest time window on which the evolution-operator bound
/// ||T[f]|| <= ||f0|| + C (T + 1/(m sqrt(beta))) kappa^2 (1 + kappa)
/// keeps the window norm inside kappa:
/// T = (kappa - ||f0||) / (C kappa^2 (1 + kappa)) - 1/(m sqrt(beta)),
/// clamped at zero when no window is guaranteed.
pub fn existence_horizon(
    f0_norm: f64,
    mass: f64,
    beta: f64,
    kappa: f64,
    calib_c: f64,
) -> Result<f64> {
    if !(f0_norm >= 0.0 && kappa > f0_norm) {
        return Err(BnError::InvalidInput(format!(
            "existence horizon requires kappa > ||f0|| >= 0, got kappa {kappa}, norm {f0_norm}"
        )));
    }
    if !(mass > 0.0 && beta > 1.0 && calib_c > 0.0) {
        return Err(BnError::InvalidInput(format!(
            "existence horizon requires mass > 0, beta > 1, calib_c > 0; \
             got ({mass}, {beta}, {calib_c})"
        )));
    }
    let t = (kappa - f0_norm) / (calib_c * kappa * kappa * (1.0 + kappa))
        - 1.0 / (mass * beta.sqrt());
    Ok(t.max(0.0))
}

/// Backs the generic constant of [`existence_horizon`] out of an observed
/// self-mapping window: given data whose run kept the window norm below
/// kappa up to t_observed, the constant that makes the predicted horizon
/// exactly t_observed. Predictions made with it are conservative for data
/// with longer true windows.
pub fn calibrate_existence_constant(
    f0_norm: f64,
    mass: f64,
    beta: f64,
    kappa: f64,
    t_observed: f64,
) -> Result<f64> {
    if !(kappa > f0_norm && f0_norm >= 0.0 && mass > 0.0 && beta > 1.0 && t_observed > 0.0) {
        return Err(BnError::InvalidInput(
            "calibration needs kappa > ||f0|| >= 0, mass > 0, beta > 1, t > 0".into(),
        ));
    }
    Ok((kappa - f0_norm)
        / ((t_observed + 1.0 / (mass * beta.sqrt())) * kappa * kappa * (1.0 + kappa)))
}

/// Integrable singular initial data f(x) = scale x^(-alpha) e^(-decay x),
/// alpha < 1, on a copy of the grid whose leading-cell weight integrates
/// the x^(-alpha) singularity exactly.
pub fn singular_init(
    alpha: f64,
    scale: f64,
    decay: f64,
    grid: &EnergyGrid,
) -> Result<Distribution> {
    if !(alpha < 1.0) {
        return Err(BnError::InvalidInput(format!(
            "singular exponent must satisfy alpha < 1 (integrable class), got {alpha}"
        )));
    }
    if !(alpha > 0.0 && scale > 0.0 && decay > 0.0) {
        return Err(BnError::InvalidInput(format!(
            "singular_init requires alpha in (0,1), scale > 0, decay > 0; \
             got ({alpha}, {scale}, {decay})"
        )));
    }
    let adapted = Arc::new(grid.with_first_cell_exponent(alpha)?);
    Distribution::from_fn(adapted, |x| scale * x.powf(-alpha) * (-decay * x).exp())
}
