//! Energy-axis discretization.
//!
//! The solver works on a truncated energy interval (0, x_max] with a graded
//! node layout that resolves integrable power-law singularities near x = 0.
//! Quadrature weights are composite trapezoid weights on the graded nodes;
//! the leading cell [0, x_1] is closed with a weight that integrates a
//! reference singularity x^(-alpha0) exactly (alpha0 = 0 reduces to the
//! plain rectangle closure).

use crate::error::{BnError, Result};
use std::sync::Arc;

/// Node placement rule for the energy mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grading {
    /// Equally spaced nodes x_k = k * x_max / N.
    Uniform,
    /// Node gaps growing geometrically from `first_node` up to `x_max`.
    Geometric { ratio: f64 },
    /// Power-law clustering at the origin: x_k = x_max * (k/N)^exponent.
    Power { exponent: f64 },
}

/// Mesh construction parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub node_count: usize,
    pub x_max: f64,
    pub grading: Grading,
    /// Smallest nonzero node. Only the geometric grading honors it; the
    /// uniform and power gradings determine x_1 from their formulas.
    pub first_node: f64,
    /// Reference singularity exponent for the leading-cell weight.
    pub first_cell_exponent: f64,
}

impl GridSpec {
    pub fn uniform(node_count: usize, x_max: f64) -> Self {
        GridSpec {
            node_count,
            x_max,
            grading: Grading::Uniform,
            first_node: x_max / node_count as f64,
            first_cell_exponent: 0.0,
        }
    }

    pub fn power(node_count: usize, x_max: f64, exponent: f64) -> Self {
        GridSpec {
            node_count,
            x_max,
            grading: Grading::Power { exponent },
            first_node: x_max * (node_count as f64).powf(-exponent),
            first_cell_exponent: 0.0,
        }
    }

    pub fn geometric(node_count: usize, x_max: f64, first_node: f64, ratio: f64) -> Self {
        GridSpec {
            node_count,
            x_max,
            grading: Grading::Geometric { ratio },
            first_node,
            first_cell_exponent: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count < 8 {
            return Err(BnError::InvalidGrid(format!(
                "node_count must be at least 8, got {}",
                self.node_count
            )));
        }
        if !(self.x_max.is_finite() && self.x_max > 0.0) {
            return Err(BnError::InvalidGrid(format!(
                "x_max must be a positive real, got {}",
                self.x_max
            )));
        }
        if !(self.first_node.is_finite() && self.first_node > 0.0) {
            return Err(BnError::InvalidGrid(format!(
                "first_node must be a positive real, got {}",
                self.first_node
            )));
        }
        if self.first_node >= self.x_max {
            return Err(BnError::InvalidGrid(format!(
                "first_node {} must lie below x_max {}",
                self.first_node, self.x_max
            )));
        }
        match self.grading {
            Grading::Uniform => {}
            Grading::Geometric { ratio } => {
                if !(ratio.is_finite() && ratio > 1.0) {
                    return Err(BnError::InvalidGrid(format!(
                        "geometric ratio must be finite and > 1, got {ratio}"
                    )));
                }
            }
            Grading::Power { exponent } => {
                if !(exponent.is_finite() && exponent > 1.0) {
                    return Err(BnError::InvalidGrid(format!(
                        "power exponent must be finite and > 1, got {exponent}"
                    )));
                }
            }
        }
        if !(self.first_cell_exponent.is_finite() && self.first_cell_exponent < 1.0) {
            return Err(BnError::InvalidGrid(format!(
                "first_cell_exponent must be finite and < 1, got {}",
                self.first_cell_exponent
            )));
        }
        Ok(())
    }

    pub fn grading_label(&self) -> String {
        match self.grading {
            Grading::Uniform => "uniform".to_string(),
            Grading::Geometric { ratio } => format!("geometric({ratio})"),
            Grading::Power { exponent } => format!("power({exponent})"),
        }
    }
}

/// Graded energy mesh with quadrature weights.
///
/// Nodes are strictly increasing and positive; weights are positive and
/// satisfy `sum(w_i * phi(x_i)) ~ integral of phi over (0, x_max]` for
/// grid-resolved phi. Values below x_1 are represented by constant
/// extension of the first node.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    spec: GridSpec,
}

/// Builds the mesh described by `spec`.
pub fn build_grid(spec: &GridSpec) -> Result<EnergyGrid> {
    spec.validate()?;
    let n = spec.node_count;
    let nf = n as f64;
    let mut nodes = Vec::with_capacity(n);
    match spec.grading {
        Grading::Uniform => {
            for k in 1..=n {
                nodes.push(spec.x_max * k as f64 / nf);
            }
        }
        Grading::Power { exponent } => {
            for k in 1..=n {
                nodes.push(spec.x_max * (k as f64 / nf).powf(exponent));
            }
        }
        Grading::Geometric { ratio } => {
            // Gaps d_k = d_1 * ratio^(k-1) spanning [first_node, x_max].
            let d1 = (spec.x_max - spec.first_node) * (ratio - 1.0)
                / (ratio.powi(n as i32 - 1) - 1.0);
            let mut x = spec.first_node;
            let mut gap = d1;
            nodes.push(x);
            for _ in 1..n {
                x += gap;
                gap *= ratio;
                nodes.push(x);
            }
            // Land the last node on x_max exactly.
            nodes[n - 1] = spec.x_max;
        }
    }
    for pair in nodes.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(BnError::InvalidGrid(
                "constructed nodes are not strictly increasing".to_string(),
            ));
        }
    }
    let weights = trapezoid_weights(&nodes, spec.first_cell_exponent);
    Ok(EnergyGrid {
        nodes,
        weights,
        spec: *spec,
    })
}

fn trapezoid_weights(nodes: &[f64], first_cell_exponent: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for i in 1..n - 1 {
        w[i] = (nodes[i + 1] - nodes[i - 1]) / 2.0;
    }
    w[n - 1] = (nodes[n - 1] - nodes[n - 2]) / 2.0;
    // Leading cell: choose w so that f(x_1) * w reproduces
    // int_0^{x_1} x^(-alpha0) dx when f is that reference power law.
    w[0] = nodes[0] / (1.0 - first_cell_exponent) + (nodes[1] - nodes[0]) / 2.0;
    w
}

impl EnergyGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn x_max(&self) -> f64 {
        self.spec.x_max
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Same nodes with the leading-cell weight re-derived for a different
    /// reference singularity exponent.
    pub fn with_first_cell_exponent(&self, alpha: f64) -> Result<EnergyGrid> {
        if !(alpha.is_finite() && alpha < 1.0) {
            return Err(BnError::InvalidGrid(format!(
                "first-cell exponent must be < 1 for an integrable cell, got {alpha}"
            )));
        }
        let mut spec = self.spec;
        spec.first_cell_exponent = alpha;
        let weights = trapezoid_weights(&self.nodes, alpha);
        Ok(EnergyGrid {
            nodes: self.nodes.clone(),
            weights,
            spec,
        })
    }

    /// Rebuilds a grid from stored nodes and weights (checkpoint resume);
    /// the quadrature is taken verbatim so resumed runs are bit-identical.
    pub(crate) fn from_parts(nodes: Vec<f64>, weights: Vec<f64>, spec: GridSpec) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != weights.len() {
            return Err(BnError::InvalidGrid(format!(
                "need matching node/weight tables of length >= 2, got {}/{}",
                nodes.len(),
                weights.len()
            )));
        }
        if !(nodes[0] > 0.0) || nodes.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(BnError::InvalidGrid(
                "stored nodes must be strictly increasing and positive".to_string(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(BnError::InvalidGrid(
                "stored weights must be positive and finite".to_string(),
            ));
        }
        Ok(EnergyGrid {
            nodes,
            weights,
            spec,
        })
    }

    /// Index of the cell [x_i, x_{i+1}) containing x, for x in [x_1, x_max].
    fn cell_of(&self, x: f64) -> usize {
        let i = self.nodes.partition_point(|&n| n <= x);
        i.saturating_sub(1).min(self.nodes.len() - 2)
    }
}

/// Nonnegative samples of the distribution f on an energy grid.
///
/// `f` is a density with respect to dx in energy; the particle-number
/// density is sqrt(x) f(x).
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    grid: Arc<EnergyGrid>,
    values: Vec<f64>,
    time: f64,
    step: u64,
}

impl Distribution {
    pub fn new(grid: Arc<EnergyGrid>, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(BnError::InvalidInput(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(BnError::InvalidInput(format!(
                    "distribution value at node {i} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(time.is_finite() && time >= 0.0) {
            return Err(BnError::InvalidInput(format!(
                "time must be finite and nonnegative, got {time}"
            )));
        }
        Ok(Distribution {
            grid,
            values,
            time,
            step: 0,
        })
    }

    pub fn from_fn(grid: Arc<EnergyGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Distribution::new(grid, values, 0.0)
    }

    pub fn zero(grid: Arc<EnergyGrid>) -> Self {
        let n = grid.len();
        Distribution {
            grid,
            values: vec![0.0; n],
            time: 0.0,
            step: 0,
        }
    }

    pub fn grid(&self) -> &Arc<EnergyGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn advanced(&self, values: Vec<f64>, time: f64) -> Self {
        Distribution {
            grid: Arc::clone(&self.grid),
            values,
            time,
            step: self.step + 1,
        }
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        Distribution {
            grid: Arc::clone(&self.grid),
            values,
            time: self.time,
            step: self.step,
        }
    }

    /// Moment of order p: sum w_i x_i^p f_i, approximating the integral of
    /// x^p f(x) over (0, x_max].
    pub fn integrate(&self, moment_power: f64) -> f64 {
        assert!(
            moment_power.is_finite() && moment_power >= 0.0,
            "moment power must be finite and nonnegative"
        );
        let nodes = self.grid.nodes();
        let weights = self.grid.weights();
        let mut acc = 0.0;
        for i in 0..nodes.len() {
            acc += weights[i] * nodes[i].powf(moment_power) * self.values[i];
        }
        acc
    }

    /// Mass functional m(f) = integral of sqrt(x) f(x) dx.
    pub fn mass(&self) -> f64 {
        self.integrate(0.5)
    }

    /// Energy functional e(f) = integral of x^(3/2) f(x) dx.
    pub fn energy(&self) -> f64 {
        self.integrate(1.5)
    }

    /// Piecewise-linear interpolation of f at an off-grid energy.
    ///
    /// Constant extension of f_1 below the first node, zero beyond x_max.
    pub fn sample(&self, x: f64) -> Result<f64> {
        if !x.is_finite() || x < 0.0 {
            return Err(BnError::InvalidInput(format!(
                "sample position must be finite and nonnegative, got {x}"
            )));
        }
        Ok(self.sample_unchecked(x))
    }

    #[inline]
    pub(crate) fn sample_unchecked(&self, x: f64) -> f64 {
        let nodes = self.grid.nodes();
        if x <= nodes[0] {
            return self.values[0];
        }
        if x > *nodes.last().unwrap() {
            return 0.0;
        }
        let i = self.grid.cell_of(x);
        let (x0, x1) = (nodes[i], nodes[i + 1]);
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        f0 + (f1 - f0) * (x - x0) / (x1 - x0)
    }

    /// Largest node-wise value of x * f(x), the blow-up indicator.
    pub fn sup_xf(&self) -> f64 {
        self.grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(&x, &f)| x * f)
            .fold(0.0, f64::max)
    }
}

/// Incremental cell cursor for monotone interpolation queries.
///
/// The collision quadrature evaluates f(w) for w = y_j + z_k - x_i with k
/// ascending, so w is nondecreasing per inner loop and the bracketing cell
/// only ever moves right. Amortized O(1) per query.
pub(crate) struct SampleCursor<'a> {
    nodes: &'a [f64],
    values: &'a [f64],
    cell: usize,
}

impl<'a> SampleCursor<'a> {
    pub fn new(dist: &'a Distribution) -> Self {
        SampleCursor {
            nodes: dist.grid.nodes(),
            values: dist.values(),
            cell: 0,
        }
    }

    /// Restart the forward scan (call when the query sequence resets).
    #[inline]
    pub fn reset(&mut self) {
        self.cell = 0;
    }

    #[inline]
    pub fn sample(&mut self, x: f64) -> f64 {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return self.values[0];
        }
        if x > self.nodes[n - 1] {
            return 0.0;
        }
        while self.cell + 2 < n && self.nodes[self.cell + 1] <= x {
            self.cell += 1;
        }
        // Cursor only moves forward; callers reset between sweeps.
        debug_assert!(self.nodes[self.cell] <= x || self.cell == 0);
        let i = self.cell;
        let (x0, x1) = (self.nodes[i], self.nodes[i + 1]);
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        f0 + (f1 - f0) * (x - x0) / (x1 - x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(spec: GridSpec) -> Arc<EnergyGrid> {
        Arc::new(build_grid(&spec).unwrap())
    }

    #[test]
    fn uniform_partition() {
        let g = grid(GridSpec::uniform(8, 1.0));
        let expect: Vec<f64> = (1..=8).map(|k| k as f64 / 8.0).collect();
        for (a, b) in g.nodes().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_first_node() {
        let g = grid(GridSpec::power(100, 10.0, 2.0));
        assert!((g.nodes()[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn geometric_gap_ratio() {
        let g = grid(GridSpec::geometric(64, 20.0, 0.01, 1.1));
        let n = g.nodes();
        for i in 1..n.len() - 1 {
            let r = (n[i + 1] - n[i]) / (n[i] - n[i - 1]);
            assert!((r - 1.1).abs() < 1e-12, "gap ratio {r} at {i}");
        }
        assert!((n[n.len() - 1] - 20.0).abs() < 1e-12);
        assert!((n[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn weight_sum_matches_x_max() {
        for spec in [
            GridSpec::uniform(32, 5.0),
            GridSpec::power(128, 20.0, 2.0),
            GridSpec::geometric(64, 20.0, 1e-3, 1.08),
        ] {
            let g = grid(spec);
            let total: f64 = g.weights().iter().sum();
            assert!(
                ((total - g.x_max()) / g.x_max()).abs() < 1e-12,
                "weight sum {total} vs x_max {}",
                g.x_max()
            );
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(build_grid(&GridSpec::uniform(7, 1.0)).is_err());
        assert!(build_grid(&GridSpec::uniform(16, 0.0)).is_err());
        assert!(build_grid(&GridSpec::geometric(16, 1.0, 2.0, 1.1)).is_err());
        assert!(build_grid(&GridSpec::geometric(16, 1.0, 0.1, 0.9)).is_err());
        assert!(build_grid(&GridSpec::power(16, 1.0, 0.5)).is_err());
    }

    #[test]
    fn integrate_moments_of_unity() {
        let g = grid(GridSpec::uniform(4096, 1.0));
        let f = Distribution::from_fn(g, |_| 1.0).unwrap();
        assert!((f.integrate(0.5) - 2.0 / 3.0).abs() < 2e-5);
        assert!((f.integrate(1.5) - 2.0 / 5.0).abs() < 2e-5);
        let z = Distribution::zero(f.grid().clone());
        assert_eq!(z.integrate(0.5), 0.0);
    }

    #[test]
    fn integrate_p0_exact_for_unity() {
        let g = grid(GridSpec::power(64, 20.0, 2.0));
        let f = Distribution::from_fn(g, |_| 1.0).unwrap();
        assert!(((f.integrate(0.0) - 20.0) / 20.0).abs() < 1e-12);
    }

    /// Reference value for int_0^20 sqrt(x) e^(-x) dx by fine Simpson on the
    /// substituted integrand 2 u^2 e^(-u^2), u = sqrt(x). Independent of the
    /// grid quadrature path.
    fn halfmoment_reference() -> f64 {
        let n = 1 << 20;
        let b = 20.0_f64.sqrt();
        let h = b / n as f64;
        let g = |u: f64| 2.0 * u * u * (-u * u).exp();
        let mut s = g(0.0) + g(b);
        for i in 1..n {
            let coef = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += coef * g(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn refinement_order_at_least_two() {
        let reference = halfmoment_reference();
        let mut errors = Vec::new();
        for n in [64, 128, 256, 512] {
            let g = grid(GridSpec::power(n, 20.0, 2.0));
            let f = Distribution::from_fn(g, |x| (-x).exp()).unwrap();
            errors.push((f.integrate(0.5) - reference).abs());
        }
        for pair in errors.windows(2) {
            assert!(
                pair[0] / pair[1] >= 3.5,
                "error ratio {} below 3.5",
                pair[0] / pair[1]
            );
        }
    }

    #[test]
    fn sample_rules() {
        let g = grid(GridSpec::uniform(8, 1.0));
        let mut vals = vec![0.0; 8];
        vals[2] = 1.0;
        vals[3] = 3.0;
        let f = Distribution::new(g, vals, 0.0).unwrap();
        let nodes: Vec<f64> = f.grid().nodes().to_vec();
        for (i, &x) in nodes.iter().enumerate() {
            assert_eq!(f.sample(x).unwrap(), f.values()[i]);
        }
        assert_eq!(f.sample(2.0).unwrap(), 0.0);
        let mid = (nodes[2] + nodes[3]) / 2.0;
        assert!((f.sample(mid).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(f.sample(0.01).unwrap(), f.values()[0]);
        assert!(f.sample(-0.5).is_err());
        assert!(f.sample(f64::NAN).is_err());
    }

    #[test]
    fn cursor_matches_sample() {
        let g = grid(GridSpec::power(32, 20.0, 2.0));
        let f = Distribution::from_fn(g, |x| (1.0 + x).recip()).unwrap();
        let mut cursor = SampleCursor::new(&f);
        let mut q = 0.0;
        while q < 22.0 {
            assert_eq!(cursor.sample(q), f.sample(q).unwrap(), "at {q}");
            q += 0.0173;
        }
    }

    #[test]
    fn rejects_negative_values() {
        let g = grid(GridSpec::uniform(8, 1.0));
        assert!(Distribution::new(g, vec![-1.0; 8], 0.0).is_err());
    }
}
