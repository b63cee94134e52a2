//! Mild-solution time integration.
//!
//! A step freezes the loss and gain rates and applies the closed-form
//! Duhamel update f -> f exp(-a dt) + J (1 - exp(-a dt)) / a, which is
//! unconditionally positive; the midpoint variant recomputes the rates at
//! a predicted half step. Step sizes adapt to a loss-rate CFL cap and a
//! relative-change cap, and runs stop on t_end, on the sup x f blow-up
//! threshold, on step underflow (the expected exit near blow-up when the
//! threshold is disabled), or on a numeric fault.

use crate::collision::{collision_rates, collision_rhs_from, conservative_remap, CollisionRates};
use crate::diagnostics::{DiagnosticParams, DiagnosticsRecord};
use crate::error::{BnError, Result};
use crate::grid::Distribution;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exponential update with rates frozen at the step start.
    Etd1,
    /// Predictor half step, then the exponential update with midpoint rates.
    EtdMidpoint,
}

/// Adaptive step-control parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControls {
    pub dt_init: f64,
    pub dt_max: f64,
    /// Cap on max_i a_i * dt, in (0, 1].
    pub cfl_loss: f64,
    /// Cap on the predicted max relative change of f per step.
    pub rel_change_cap: f64,
    /// Stop when sup_i x_i f_i exceeds this multiple of its initial value.
    pub blowup_threshold: f64,
    pub t_end: f64,
}

impl StepControls {
    pub fn new(t_end: f64) -> Self {
        StepControls {
            dt_init: 1e-4,
            dt_max: 0.05,
            cfl_loss: 0.5,
            rel_change_cap: 0.2,
            blowup_threshold: 1e4,
            t_end,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = self.dt_init > 0.0
            && self.dt_max > 0.0
            && self.cfl_loss > 0.0
            && self.rel_change_cap > 0.0
            && self.blowup_threshold > 0.0
            && self.t_end > 0.0;
        if !all_positive || self.cfl_loss > 1.0 {
            return Err(BnError::InvalidInput(format!(
                "step controls must be positive with cfl_loss <= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ReachedTEnd,
    BlowupThreshold,
    StepUnderflow,
    NumericFault,
}

/// Time series of snapshots (thinned by a stride) and per-step diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Distribution>,
    pub records: Vec<DiagnosticsRecord>,
    pub stop_reason: StopReason,
    /// Which norm parameters the records were measured with.
    pub params: DiagnosticParams,
}

impl Trajectory {
    pub fn final_state(&self) -> &Distribution {
        self.snapshots.last().expect("trajectory holds the final state")
    }
}

/// Closed-form frozen-rate update. The a -> 0 limit J dt replaces the
/// Duhamel factor once a dt < 1e-8.
pub fn exponential_update(f: &[f64], a: &[f64], gain: &[f64], dt: f64) -> Vec<f64> {
    f.iter()
        .zip(a.iter().zip(gain))
        .map(|(&fi, (&ai, &ji))| {
            let u = ai * dt;
            let decay = (-u).exp();
            let duhamel = if u < 1e-8 { dt } else { (1.0 - decay) / ai };
            fi * decay + ji * duhamel
        })
        .collect()
}

fn step_with_rates(
    dist: &Distribution,
    rates: &CollisionRates,
    dt: f64,
    scheme: Scheme,
) -> Result<Distribution> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(BnError::InvalidInput(format!("step size must be positive, got {dt}")));
    }
    let values = match scheme {
        Scheme::Etd1 => exponential_update(dist.values(), &rates.loss, &rates.gain, dt),
        Scheme::EtdMidpoint => {
            let half = exponential_update(dist.values(), &rates.loss, &rates.gain, dt / 2.0);
            let mid = dist.advanced(half, dist.time() + dt / 2.0);
            let mid_rates = collision_rates(&mid)?;
            exponential_update(dist.values(), &mid_rates.loss, &mid_rates.gain, dt)
        }
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(BnError::NonFinite {
            quantity: "stepped distribution",
            node: i,
            x: dist.grid().nodes()[i],
        });
    }
    Ok(dist.advanced(values, dist.time() + dt))
}

/// Advances one step of size dt with freshly evaluated rates.
pub fn step_exponential(dist: &Distribution, dt: f64, scheme: Scheme) -> Result<Distribution> {
    let rates = collision_rates(dist)?;
    step_with_rates(dist, &rates, dt, scheme)
}

/// Outcome of the step-size controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtChoice {
    Dt(f64),
    /// dt collapsed below 1e-14 t_end; near blow-up this is the expected exit.
    Underflow,
}

/// dt = min(dt_max, 1.5 dt_prev, cfl / max a, rel-change cap), where the
/// predicted relative change uses |Q_i| / max(f_i, 1e-6 max f).
pub fn choose_dt(
    dist: &Distribution,
    rates: &CollisionRates,
    controls: &StepControls,
    dt_prev: f64,
) -> DtChoice {
    let mut dt = controls.dt_max.min(1.5 * dt_prev);
    let max_loss = rates.max_loss();
    if max_loss > 0.0 {
        dt = dt.min(controls.cfl_loss / max_loss);
    }
    let f_max = dist.values().iter().copied().fold(0.0, f64::max);
    if f_max > 0.0 {
        let floor = 1e-6 * f_max;
        let q = collision_rhs_from(dist, rates);
        let rel_rate = dist
            .values()
            .iter()
            .zip(&q)
            .map(|(&fi, &qi)| qi.abs() / fi.max(floor))
            .fold(0.0, f64::max);
        if rel_rate > 0.0 {
            dt = dt.min(controls.rel_change_cap / rel_rate);
        }
    }
    if !(dt > 1e-14 * controls.t_end) || !dt.is_finite() {
        return DtChoice::Underflow;
    }
    DtChoice::Dt(dt)
}

/// Run-level options beyond the step controls.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub scheme: Scheme,
    /// Rescale each accepted step back to the initial mass and energy.
    pub remap_on: bool,
    /// Keep every k-th accepted state (the initial and final states always).
    pub snapshot_stride: usize,
    pub diagnostics: DiagnosticParams,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            scheme: Scheme::EtdMidpoint,
            remap_on: true,
            snapshot_stride: 1,
            diagnostics: DiagnosticParams::default(),
        }
    }
}

/// Advances the initial data to t_end or to a stopping event, recording
/// one diagnostics row per accepted step. Faults are recorded in the stop
/// reason; the partial trajectory is always returned.
pub fn run(initial: &Distribution, controls: &StepControls, opts: &RunOptions) -> Trajectory {
    debug_assert!(controls.validate().is_ok());
    let stride = opts.snapshot_stride.max(1);
    let target_mass = initial.mass();
    let target_energy = initial.energy();
    let remap_active = opts.remap_on && target_mass > 1e-300 && target_energy > 1e-300;
    let sup0 = initial.sup_xf();

    let mut snapshots = vec![initial.clone()];
    let mut records = vec![DiagnosticsRecord::measure(initial, &opts.diagnostics, 0.0)];
    let mut f = initial.clone();
    let mut dt_prev = controls.dt_init / 1.5;
    let mut accepted: usize = 0;
    let mut last_snapshot_step = 0;

    let stop_reason = loop {
        if f.time() >= controls.t_end * (1.0 - 1e-14) {
            break StopReason::ReachedTEnd;
        }
        let rates = match collision_rates(&f) {
            Ok(r) => r,
            Err(_) => break StopReason::NumericFault,
        };
        let mut dt = match choose_dt(&f, &rates, controls, dt_prev) {
            DtChoice::Dt(v) => v,
            DtChoice::Underflow => break StopReason::StepUnderflow,
        };
        dt_prev = dt;
        if f.time() + dt > controls.t_end {
            dt = controls.t_end - f.time();
        }
        let mut next = match step_with_rates(&f, &rates, dt, opts.scheme) {
            Ok(d) => d,
            Err(_) => break StopReason::NumericFault,
        };
        if remap_active {
            match conservative_remap(&next, target_mass, target_energy) {
                Ok(r) => next = r,
                // Refused remap (degenerate moments) leaves the step as is.
                Err(BnError::RemapDegenerate(_)) => {}
                Err(_) => break StopReason::NumericFault,
            }
        }
        f = next;
        accepted += 1;
        records.push(DiagnosticsRecord::measure(&f, &opts.diagnostics, dt));
        if accepted % stride == 0 {
            snapshots.push(f.clone());
            last_snapshot_step = accepted;
        }
        if sup0 > 0.0 && f.sup_xf() >= controls.blowup_threshold * sup0 {
            break StopReason::BlowupThreshold;
        }
    };
    if accepted != last_snapshot_step {
        snapshots.push(f.clone());
    }
    Trajectory {
        snapshots,
        records,
        stop_reason,
        params: opts.diagnostics,
    }
}

/// Fixed-point path of the Picard iteration.
#[derive(Debug, Clone)]
pub struct PicardResult {
    pub path: Vec<Distribution>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Picard iteration of the whole-interval evolution operator
/// T[f](t) = exp(-int_0^t a) f(0) + int_0^t exp(-int_s^t a) J[f](s) ds
/// on a uniform time grid, with the exponents and the Duhamel integral
/// evaluated by the composite trapezoid rule in s. Iterates from the
/// constant-in-time path until the sup-norm update falls below
/// tol (1 + max f). Callers should keep the horizon inside the
/// self-mapping window estimated by [`crate::measures::existence_horizon`].
pub fn picard_mild(
    initial: &Distribution,
    horizon: f64,
    time_levels: usize,
    max_iters: usize,
    tol: f64,
) -> Result<PicardResult> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(BnError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    if time_levels < 2 {
        return Err(BnError::InvalidInput(format!(
            "need at least 2 time levels, got {time_levels}"
        )));
    }
    if max_iters < 1 {
        return Err(BnError::InvalidInput("max_iters must be at least 1".into()));
    }
    let n = initial.grid().len();
    let levels = time_levels;
    let h = horizon / (levels - 1) as f64;
    let f0 = initial.values().to_vec();
    let mut path: Vec<Vec<f64>> = vec![f0.clone(); levels];

    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        iterations += 1;
        // Rates along the current path.
        let mut loss = Vec::with_capacity(levels);
        let mut gain = Vec::with_capacity(levels);
        for (l, values) in path.iter().enumerate() {
            let snap = initial.advanced(values.clone(), initial.time() + l as f64 * h);
            let r = collision_rates(&snap)?;
            loss.push(r.loss);
            gain.push(r.gain);
        }
        // Cumulative exponents A[l][i] = int_0^{t_l} a_i by trapezoid.
        let mut cum = vec![vec![0.0; n]; levels];
        for l in 1..levels {
            for i in 0..n {
                cum[l][i] = cum[l - 1][i] + 0.5 * h * (loss[l - 1][i] + loss[l][i]);
            }
        }
        let mut next: Vec<Vec<f64>> = Vec::with_capacity(levels);
        next.push(f0.clone());
        for l in 1..levels {
            let mut values = vec![0.0; n];
            for i in 0..n {
                let mut duhamel = 0.0;
                for (m, gm) in gain.iter().enumerate().take(l + 1) {
                    let weight = if m == 0 || m == l { 0.5 } else { 1.0 };
                    duhamel += weight * h * (-(cum[l][i] - cum[m][i])).exp() * gm[i];
                }
                values[i] = f0[i] * (-cum[l][i]).exp() + duhamel;
            }
            next.push(values);
        }
        residual = 0.0;
        let mut max_f = 0.0_f64;
        for l in 0..levels {
            for i in 0..n {
                residual = residual.max((next[l][i] - path[l][i]).abs());
                max_f = max_f.max(next[l][i]);
            }
        }
        path = next;
        if residual <= tol * (1.0 + max_f) {
            converged = true;
            break;
        }
    }
    let path = path
        .into_iter()
        .enumerate()
        .map(|(l, values)| initial.advanced(values, initial.time() + l as f64 * h))
        .collect();
    Ok(PicardResult {
        path,
        converged,
        iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::DiagnosticParams;
    use crate::equilibrium::{be_distribution, BEParams};
    use crate::grid::{build_grid, GridSpec};
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<crate::grid::EnergyGrid> {
        Arc::new(build_grid(&GridSpec::power(n, 20.0, 2.0)).unwrap())
    }

    #[test]
    fn frozen_rate_closed_form() {
        // a_i = a, J_i = c, f(0) = 0: f(dt) = c (1 - e^{-a dt}) / a exactly
        let (a, c, dt) = (2.0, 3.0, 0.7);
        let out = exponential_update(&[0.0], &[a], &[c], dt);
        assert_eq!(out[0], c * (1.0 - (-a * dt).exp()) / a);
        // a -> 0 limit
        let out = exponential_update(&[0.5], &[1e-12], &[c], dt);
        assert!((out[0] - (0.5 + c * dt)).abs() < 1e-12);
    }

    #[test]
    fn small_dt_recovers_collision_rhs() {
        let g = grid(24);
        let f = Distribution::from_fn(g, |x| (-(x - 1.0) * (x - 1.0)).exp()).unwrap();
        let q = crate::collision::collision_rhs(&f).unwrap();
        let mut errs = Vec::new();
        for &dt in &[1e-3, 1e-4, 1e-5] {
            let stepped = step_exponential(&f, dt, Scheme::Etd1).unwrap();
            let err = f
                .values()
                .iter()
                .zip(stepped.values())
                .zip(&q)
                .map(|((&f0, &f1), &qi)| ((f1 - f0) / dt - qi).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // first-order Richardson behavior: error shrinks ~10x per decade
        assert!(errs[0] / errs[1] > 5.0, "{errs:?}");
        assert!(errs[1] / errs[2] > 5.0, "{errs:?}");
    }

    #[test]
    fn equilibrium_nearly_fixed() {
        let params = BEParams { alpha: 1.0, beta: 1.0, m0: 0.0, supercritical: false };
        let f = be_distribution(&params, grid(64)).unwrap();
        let stepped = step_exponential(&f, 0.01, Scheme::EtdMidpoint).unwrap();
        let rel = f
            .values()
            .iter()
            .zip(stepped.values())
            .map(|(&a, &b)| (a - b).abs() / a.max(1e-12))
            .fold(0.0, f64::max);
        // stationarity defect of the quadrature at N=64, times dt
        assert!(rel < 1e-3, "relative move {rel:e}");
    }

    #[test]
    fn positivity_preserved() {
        let g = grid(32);
        let f = Distribution::from_fn(g, |x| if x < 2.0 { 1.0 } else { 0.0 }).unwrap();
        let stepped = step_exponential(&f, 0.5, Scheme::EtdMidpoint).unwrap();
        assert!(stepped.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn choose_dt_cap_arithmetic() {
        let g = grid(16);
        let f = Distribution::from_fn(g.clone(), |_| 0.5).unwrap();
        let n = g.len();
        let rates = CollisionRates {
            loss: vec![2.0; n],
            gain: vec![0.0; n],
            source_time: 0.0,
        };
        let mut controls = StepControls::new(10.0);
        controls.dt_max = 5.0;
        controls.cfl_loss = 0.5;
        controls.rel_change_cap = 1e9;
        match choose_dt(&f, &rates, &controls, 100.0) {
            DtChoice::Dt(dt) => assert_eq!(dt, 0.25),
            DtChoice::Underflow => panic!("unexpected underflow"),
        }
    }

    #[test]
    fn choose_dt_zero_rates() {
        let g = grid(16);
        let f = Distribution::zero(g.clone());
        let rates = CollisionRates {
            loss: vec![0.0; 16],
            gain: vec![0.0; 16],
            source_time: 0.0,
        };
        let controls = StepControls::new(10.0);
        match choose_dt(&f, &rates, &controls, 0.01) {
            DtChoice::Dt(dt) => assert_eq!(dt, controls.dt_max.min(1.5 * 0.01)),
            DtChoice::Underflow => panic!("unexpected underflow"),
        }
    }

    #[test]
    fn zero_data_runs_to_t_end() {
        let f = Distribution::zero(grid(16));
        let controls = StepControls::new(1.0);
        let traj = run(&f, &controls, &RunOptions::default());
        assert_eq!(traj.stop_reason, StopReason::ReachedTEnd);
        assert!(traj.final_state().values().iter().all(|&v| v == 0.0));
        assert!(traj
            .records
            .windows(2)
            .all(|p| p[1].time > p[0].time));
    }

    #[test]
    fn run_is_deterministic() {
        let params = BEParams { alpha: 0.5, beta: 1.0, m0: 0.0, supercritical: false };
        let f = be_distribution(&params, grid(32)).unwrap();
        let controls = StepControls::new(0.05);
        let opts = RunOptions {
            diagnostics: DiagnosticParams::default(),
            ..RunOptions::default()
        };
        let t1 = run(&f, &controls, &opts);
        let t2 = run(&f, &controls, &opts);
        assert_eq!(t1.records.len(), t2.records.len());
        for (a, b) in t1.records.iter().zip(&t2.records) {
            assert_eq!(a.mass.to_bits(), b.mass.to_bits());
            assert_eq!(a.gbeta.to_bits(), b.gbeta.to_bits());
        }
        assert_eq!(
            t1.final_state().values(),
            t2.final_state().values()
        );
    }

    #[test]
    fn picard_zero_data_converges_immediately() {
        let f = Distribution::zero(grid(16));
        let r = picard_mild(&f, 0.1, 5, 10, 1e-12).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.path.iter().all(|d| d.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn picard_equilibrium_nearly_fixed() {
        let params = BEParams { alpha: 1.0, beta: 1.0, m0: 0.0, supercritical: false };
        let f = be_distribution(&params, grid(48)).unwrap();
        let r = picard_mild(&f, 0.05, 6, 30, 1e-10).unwrap();
        assert!(r.converged);
        let last = r.path.last().unwrap();
        let rel = f
            .values()
            .iter()
            .zip(last.values())
            .map(|(&a, &b)| (a - b).abs() / a.max(1e-12))
            .fold(0.0, f64::max);
        assert!(rel < 2e-3, "equilibrium drifted {rel:e} over the window");
    }

    #[test]
    fn picard_cross_validates_run() {
        // small data, short horizon: halve both discretizations and compare
        let g = grid(24);
        let f = Distribution::from_fn(g, |x| 1e-3 * (-(x - 1.0) * (x - 1.0)).exp()).unwrap();
        let horizon = 0.1;
        let controls = |dt_max: f64| {
            let mut c = StepControls::new(horizon);
            c.dt_max = dt_max;
            c.dt_init = dt_max;
            c
        };
        let opts = RunOptions {
            scheme: Scheme::Etd1,
            remap_on: false,
            ..RunOptions::default()
        };
        let coarse_gap = gap(
            &run(&f, &controls(horizon / 8.0), &opts),
            &picard_mild(&f, horizon, 9, 50, 1e-13).unwrap(),
        );
        let fine_gap = gap(
            &run(&f, &controls(horizon / 16.0), &opts),
            &picard_mild(&f, horizon, 17, 50, 1e-13).unwrap(),
        );
        assert!(
            fine_gap < coarse_gap,
            "gap did not shrink: {coarse_gap:e} -> {fine_gap:e}"
        );

        fn gap(traj: &Trajectory, picard: &PicardResult) -> f64 {
            let a = traj.final_state().values();
            let b = picard.path.last().unwrap().values();
            a.iter()
                .zip(b)
                .map(|(&x, &y)| (x - y).abs())
                .fold(0.0, f64::max)
        }
    }
}
