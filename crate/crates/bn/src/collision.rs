//! Discrete collision operator in energy coordinates.
//!
//! The loss rate a[f] and gain rate J[f] are tensor-product quadratures of
//! the (y, z) collision integrals with the fourth energy w = y + z - x
//! interpolated off-grid. The pair sum is restricted to y + z >= x; the
//! band 0 <= w < x_1 uses the interpolant's constant-toward-zero extension.
//! The optimized path exploits the y <-> z symmetry of the integrand (pairs
//! j < k counted twice); [`loss_gain_oracle`] deliberately does not, and
//! interpolates through an independent code path, so the two never share a
//! shortcut.
//!
//! Rate evaluation parallelizes over target nodes with a fixed-order
//! per-node reduction, so results are bit-identical run to run regardless
//! of thread count.

use crate::error::{BnError, Result};
use crate::grid::{Distribution, SampleCursor};
use crate::kernel::w_kernel_sqrt;
use crate::parallel;
use crate::quad::gauss_legendre_16;
use rayon::prelude::*;

/// Per-node loss and gain rates for a frozen distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionRates {
    pub loss: Vec<f64>,
    pub gain: Vec<f64>,
    pub source_time: f64,
}

impl CollisionRates {
    pub fn max_loss(&self) -> f64 {
        self.loss.iter().copied().fold(0.0, f64::max)
    }
}

/// Loss and gain rates in one sweep (they share the kernel evaluations).
pub fn collision_rates(dist: &Distribution) -> Result<CollisionRates> {
    let nodes = dist.grid().nodes();
    let weights = dist.grid().weights();
    let f = dist.values();
    let n = nodes.len();
    let sqrt_nodes: Vec<f64> = nodes.iter().map(|&x| x.sqrt()).collect();

    let rows: Vec<(f64, f64)> = parallel::pool().install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let x = nodes[i];
                let sx = sqrt_nodes[i];
                let fi = f[i];
                let mut cursor = SampleCursor::new(dist);
                let mut a = 0.0;
                let mut j_rate = 0.0;
                for j in 0..n {
                    let y = nodes[j];
                    let fj = f[j];
                    let wj = weights[j];
                    let sy = sqrt_nodes[j];
                    // first k >= j with y + z >= x
                    let k0 = if y >= x {
                        j
                    } else {
                        nodes.partition_point(|&z| z < x - y).max(j)
                    };
                    if k0 >= n {
                        continue;
                    }
                    cursor.reset();
                    for k in k0..n {
                        let z = nodes[k];
                        let w = y + z - x;
                        if w < 0.0 {
                            continue;
                        }
                        let kern = w_kernel_sqrt(sx, w.sqrt(), sy, sqrt_nodes[k]);
                        let fw = cursor.sample(w);
                        let fk = f[k];
                        let base = if j < k { 2.0 } else { 1.0 } * wj * weights[k] * kern;
                        a += base * fw * (fj + fk + 1.0);
                        j_rate += base * fj * fk * (fi + fw + 1.0);
                    }
                }
                (a, j_rate)
            })
            .collect()
    });

    let mut loss = Vec::with_capacity(n);
    let mut gain = Vec::with_capacity(n);
    for (i, (a, j)) in rows.into_iter().enumerate() {
        if !a.is_finite() {
            return Err(BnError::NonFinite {
                quantity: "loss rate",
                node: i,
                x: nodes[i],
            });
        }
        if !j.is_finite() {
            return Err(BnError::NonFinite {
                quantity: "gain rate",
                node: i,
                x: nodes[i],
            });
        }
        loss.push(a);
        gain.push(j);
    }
    Ok(CollisionRates {
        loss,
        gain,
        source_time: dist.time(),
    })
}

/// Per-node loss rate a[f].
pub fn loss_rate(dist: &Distribution) -> Result<Vec<f64>> {
    Ok(collision_rates(dist)?.loss)
}

/// Per-node gain rate J[f].
pub fn gain_rate(dist: &Distribution) -> Result<Vec<f64>> {
    Ok(collision_rates(dist)?.gain)
}

/// Collision right-hand side Q_i = J_i - f_i a_i.
pub fn collision_rhs(dist: &Distribution) -> Result<Vec<f64>> {
    let rates = collision_rates(dist)?;
    Ok(collision_rhs_from(dist, &rates))
}

pub fn collision_rhs_from(dist: &Distribution, rates: &CollisionRates) -> Vec<f64> {
    dist.values()
        .iter()
        .zip(rates.gain.iter().zip(&rates.loss))
        .map(|(&fi, (&j, &a))| j - fi * a)
        .collect()
}

const ORACLE_MAX_NODES: usize = 64;

/// Brute-force reference rates: the most literal triple loop over
/// (i, j, k), no symmetry reuse, interpolation by an independent path.
/// Test harness only; rejects grids above 64 nodes.
pub fn loss_gain_oracle(dist: &Distribution) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = dist.grid().len();
    if n > ORACLE_MAX_NODES {
        return Err(BnError::OracleGridTooLarge {
            max: ORACLE_MAX_NODES,
            got: n,
        });
    }
    let nodes = dist.grid().nodes();
    let weights = dist.grid().weights();
    let f = dist.values();
    let mut loss = vec![0.0; n];
    let mut gain = vec![0.0; n];
    for i in 0..n {
        let x = nodes[i];
        for j in 0..n {
            let y = nodes[j];
            for k in 0..n {
                let z = nodes[k];
                let w = y + z - x;
                if w < 0.0 {
                    continue;
                }
                let kern = x.sqrt().min(w.sqrt()).min(y.sqrt()).min(z.sqrt()) / x.sqrt();
                let fw = oracle_sample(nodes, f, w);
                loss[i] += weights[j] * weights[k] * kern * fw * (f[j] + f[k] + 1.0);
                gain[i] += weights[j] * weights[k] * kern * f[j] * f[k] * (f[i] + fw + 1.0);
            }
        }
    }
    Ok((loss, gain))
}

/// Lagrange-form linear interpolation with a forward scan; shares nothing
/// with [`Distribution::sample`] beyond the extension conventions.
fn oracle_sample(nodes: &[f64], f: &[f64], q: f64) -> f64 {
    let n = nodes.len();
    if q <= nodes[0] {
        return f[0];
    }
    if q > nodes[n - 1] {
        return 0.0;
    }
    let mut c = 0;
    while c + 2 < n && nodes[c + 1] <= q {
        c += 1;
    }
    let h = nodes[c + 1] - nodes[c];
    f[c] * ((nodes[c + 1] - q) / h) + f[c + 1] * ((q - nodes[c]) / h)
}

/// Value and bookkeeping of the symmetrized weak form.
#[derive(Debug, Clone, Copy)]
pub struct WeakAction {
    /// Cubic-in-g contribution.
    pub cubic: f64,
    /// Quadratic-in-g contribution.
    pub quadratic: f64,
    /// Sum of the positive parts of all summands, the cancellation scale.
    pub positive_magnitude: f64,
}

impl WeakAction {
    pub fn total(&self) -> f64 {
        self.cubic + self.quadratic
    }
}

/// Symmetrized weak form of the collision operator acting on a test
/// function: d/dt of the integral of phi against the particle density
/// g = sqrt(x) f, for time-independent phi.
///
/// Both the cubic and the quadratic term carry the collision bracket
/// phi(w) + phi(x + y - w) - 2 phi(x) against the symmetric kernel, so
/// phi = 1 vanishes pointwise before summation and phi = x cancels in
/// symmetrized (x <-> y) pairs up to rounding.
pub fn weak_action(dist: &Distribution, testfn: impl Fn(f64) -> f64) -> WeakAction {
    let nodes = dist.grid().nodes();
    let weights = dist.grid().weights();
    let f = dist.values();
    let n = nodes.len();
    // g(dx) / sqrt(x) collapses to w_i f_i on the mesh.
    let gw: Vec<f64> = (0..n).map(|i| weights[i] * f[i]).collect();
    let phi: Vec<f64> = nodes.iter().map(|&x| testfn(x)).collect();

    let mut cubic = 0.0;
    let mut quadratic = 0.0;
    let mut positive = 0.0;

    // Cubic term: measures at (x_i, x_j, x_k), Lebesgue variable eliminated
    // by the constraint z = x_i + x_j - x_k >= 0.
    for i in 0..n {
        if gw[i] == 0.0 {
            continue;
        }
        for j in i..n {
            if gw[j] == 0.0 {
                continue;
            }
            let s = nodes[i] + nodes[j];
            let pair_scale = if i == j { 1.0 } else { 2.0 };
            let common = pair_scale * gw[i] * gw[j];
            for k in 0..n {
                let z = s - nodes[k];
                if z < 0.0 {
                    break;
                }
                if gw[k] == 0.0 {
                    continue;
                }
                let kern = crate::kernel::phi_kernel(nodes[k], nodes[i], nodes[j], z);
                // Ordered pairs (i,j) and (j,i) share everything except the
                // -2 phi(x) term; their sum uses the four-point bracket.
                let bracket = phi[k] + testfn(z) - phi[i] - phi[j];
                let term = common * gw[k] * kern * bracket;
                cubic += term;
                positive += term.max(0.0);
            }
        }
    }

    // Quadratic term: measures at (x_i, x_j), Lebesgue variable w on
    // [0, x_i + x_j], integrated piecewise-exactly around the sqrt kinks
    // of the kernel at w = m and w = s - m.
    let (gl_x, gl_w) = gauss_legendre_16();
    for i in 0..n {
        if gw[i] == 0.0 {
            continue;
        }
        for j in i..n {
            if gw[j] == 0.0 {
                continue;
            }
            let s = nodes[i] + nodes[j];
            let m = nodes[i].min(nodes[j]);
            let offset = phi[i] + phi[j];
            let bracket = |w: f64| testfn(w) + testfn(s - w) - offset;
            let mut inner = 0.0;
            // [0, m]: kernel sqrt(w); substitute w = u^2.
            let um = m.sqrt();
            for (&t, &gwt) in gl_x.iter().zip(gl_w) {
                let u = um * (t + 1.0) / 2.0;
                inner += gwt * (um / 2.0) * 2.0 * u * u * bracket(u * u);
            }
            // [s - m, s]: kernel sqrt(s - w); substitute w = s - u^2.
            for (&t, &gwt) in gl_x.iter().zip(gl_w) {
                let u = um * (t + 1.0) / 2.0;
                inner += gwt * (um / 2.0) * 2.0 * u * u * bracket(s - u * u);
            }
            // [m, s - m]: kernel constant sqrt(m).
            let span = s - 2.0 * m;
            if span > 0.0 {
                let sm = m.sqrt();
                for (&t, &gwt) in gl_x.iter().zip(gl_w) {
                    let w = m + span * (t + 1.0) / 2.0;
                    inner += gwt * (span / 2.0) * sm * bracket(w);
                }
            }
            // Net prefactor: ordered-pair sum already folded into the
            // four-point bracket, cancelling the 1/2 of the symmetrized
            // form for i < j; the diagonal keeps it.
            let pair_scale = if i == j { 0.5 } else { 1.0 };
            let term = pair_scale * gw[i] * gw[j] * inner;
            quadratic += term;
            positive += term.max(0.0);
        }
    }

    WeakAction {
        cubic,
        quadratic,
        positive_magnitude: positive,
    }
}

/// Rescales a distribution by f -> f (A + B x), clipped at zero, with
/// (A, B) solved so mass and energy hit the given targets. If clipping
/// activates, the 2x2 system is re-solved once on the surviving nodes.
pub fn conservative_remap(
    dist: &Distribution,
    target_mass: f64,
    target_energy: f64,
) -> Result<Distribution> {
    let m = dist.mass();
    let e = dist.energy();
    if !(m > 0.0 && e > 0.0) {
        return Err(BnError::RemapDegenerate(format!(
            "distribution moments must be positive (mass {m}, energy {e})"
        )));
    }
    if !(target_mass > 0.0 && target_energy > 0.0) {
        return Err(BnError::RemapDegenerate(format!(
            "targets must be positive (mass {target_mass}, energy {target_energy})"
        )));
    }
    let q = dist.integrate(2.5);
    let (a, b) = solve_moment_system(m, e, q, target_mass, target_energy)?;
    let nodes = dist.grid().nodes();
    let mut values: Vec<f64> = dist
        .values()
        .iter()
        .zip(nodes)
        .map(|(&fi, &x)| fi * (a + b * x))
        .collect();
    if values.iter().any(|&v| v < 0.0) {
        // Re-solve once with the clipped nodes removed from the moments.
        let weights = dist.grid().weights();
        let mut ma = 0.0;
        let mut ea = 0.0;
        let mut qa = 0.0;
        for i in 0..nodes.len() {
            if values[i] >= 0.0 {
                let base = weights[i] * dist.values()[i];
                ma += base * nodes[i].sqrt();
                ea += base * nodes[i].powf(1.5);
                qa += base * nodes[i].powf(2.5);
            }
        }
        let (a2, b2) = solve_moment_system(ma, ea, qa, target_mass, target_energy)?;
        for i in 0..nodes.len() {
            values[i] = if values[i] >= 0.0 {
                (dist.values()[i] * (a2 + b2 * nodes[i])).max(0.0)
            } else {
                0.0
            };
        }
    }
    Ok(dist.with_values(values))
}

fn solve_moment_system(m: f64, e: f64, q: f64, tm: f64, te: f64) -> Result<(f64, f64)> {
    let det = m * q - e * e;
    if !det.is_finite() || det.abs() <= 1e-14 * (m * q).abs().max(e * e) {
        return Err(BnError::RemapDegenerate(format!(
            "moment system is singular (det {det:.3e}); distribution too concentrated"
        )));
    }
    let a = (tm * q - e * te) / det;
    let b = (m * te - tm * e) / det;
    if !(a.is_finite() && b.is_finite()) {
        return Err(BnError::RemapDegenerate(format!(
            "non-finite remap coefficients (A {a}, B {b})"
        )));
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Distribution, GridSpec};
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<crate::grid::EnergyGrid> {
        Arc::new(build_grid(&GridSpec::power(n, 20.0, 2.0)).unwrap())
    }

    fn pseudo_random(dist_len: usize, seed: u64) -> Vec<f64> {
        // splitmix64-based deterministic fill in [0, 2)
        let mut s = seed;
        (0..dist_len)
            .map(|_| {
                s = s.wrapping_add(0x9e3779b97f4a7c15);
                let mut z = s;
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
                z ^= z >> 31;
                2.0 * (z as f64 / u64::MAX as f64)
            })
            .collect()
    }

    #[test]
    fn zero_distribution_has_zero_rates() {
        let f = Distribution::zero(grid(16));
        let r = collision_rates(&f).unwrap();
        assert!(r.loss.iter().all(|&v| v == 0.0));
        assert!(r.gain.iter().all(|&v| v == 0.0));
        let (a, j) = loss_gain_oracle(&f).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
        assert!(j.iter().all(|&v| v == 0.0));
        assert!(collision_rhs(&f).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_oracle_on_random_data() {
        for seed in 0..4 {
            let g = grid(16);
            let f =
                Distribution::new(g, pseudo_random(16, 0x5eed + seed), 0.0).unwrap();
            let fast = collision_rates(&f).unwrap();
            let (a, j) = loss_gain_oracle(&f).unwrap();
            for i in 0..16 {
                let da = (fast.loss[i] - a[i]).abs();
                let dj = (fast.gain[i] - j[i]).abs();
                assert!(da <= 1e-12 * a[i].max(1e-300), "loss node {i}: {da:e}");
                assert!(dj <= 1e-12 * j[i].max(1e-300), "gain node {i}: {dj:e}");
            }
        }
    }

    #[test]
    fn homogeneity_split() {
        // a[f] = A2[f] + A1[f] with A2 quadratic and A1 linear in f;
        // recover the parts from two evaluations, predict a third.
        let g = grid(16);
        let base = pseudo_random(16, 77);
        let eval = |lambda: f64| {
            let vals: Vec<f64> = base.iter().map(|v| lambda * v).collect();
            let d = Distribution::new(g.clone(), vals, 0.0).unwrap();
            collision_rates(&d).unwrap()
        };
        let r1 = eval(1.0);
        let r2 = eval(2.0);
        let r10 = eval(10.0);
        for i in 0..16 {
            let a2 = (r2.loss[i] - 2.0 * r1.loss[i]) / 2.0;
            let a1 = r1.loss[i] - a2;
            let predicted = 100.0 * a2 + 10.0 * a1;
            assert!(
                (r10.loss[i] - predicted).abs() <= 1e-12 * r10.loss[i].max(1e-300),
                "loss split at node {i}"
            );
            // gain: J = C3 + C2 with cubic and quadratic parts
            let c3 = (r2.gain[i] - 4.0 * r1.gain[i]) / 4.0;
            let c2 = r1.gain[i] - c3;
            let predicted = 1000.0 * c3 + 100.0 * c2;
            assert!(
                (r10.gain[i] - predicted).abs() <= 1e-12 * r10.gain[i].max(1e-300),
                "gain split at node {i}"
            );
        }
    }

    #[test]
    fn rates_nonnegative_on_random_data() {
        for seed in 0..8 {
            let f = Distribution::new(grid(24), pseudo_random(24, seed), 0.0).unwrap();
            let r = collision_rates(&f).unwrap();
            assert!(r.loss.iter().all(|&v| v >= 0.0));
            assert!(r.gain.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn oracle_rejects_large_grids() {
        let f = Distribution::zero(grid(65));
        assert!(matches!(
            loss_gain_oracle(&f),
            Err(BnError::OracleGridTooLarge { .. })
        ));
    }

    #[test]
    fn bump_redistributes_and_conserves() {
        let g = grid(48);
        let f = Distribution::from_fn(g, |x| {
            if (1.0..=2.0).contains(&x) {
                ((x - 1.0) * (2.0 - x)* 4.0).max(0.0)
            } else {
                0.0
            }
        })
        .unwrap();
        let q = collision_rhs(&f).unwrap();
        let nodes = f.grid().nodes();
        let outside_positive = nodes
            .iter()
            .zip(&q)
            .any(|(&x, &qi)| !(1.0..=2.0).contains(&x) && qi > 0.0);
        assert!(outside_positive, "gain should spread beyond the bump");
        let wq = f.with_values(q.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let scale = wq.integrate(0.5);
        let qdist_mass: f64 = f
            .grid()
            .weights()
            .iter()
            .zip(f.grid().nodes())
            .zip(&q)
            .map(|((&w, &x), &qi)| w * x.sqrt() * qi)
            .sum();
        assert!(qdist_mass.abs() < 0.02 * scale, "mass defect {qdist_mass:e} vs {scale:e}");
    }

    #[test]
    fn weak_action_constant_testfn_is_exactly_zero() {
        let f = Distribution::new(grid(24), pseudo_random(24, 3), 0.0).unwrap();
        let wa = weak_action(&f, |_| 1.0);
        assert_eq!(wa.total(), 0.0);
        assert_eq!(wa.positive_magnitude, 0.0);
    }

    #[test]
    fn weak_action_linear_testfn_cancels() {
        let f = Distribution::new(grid(24), pseudo_random(24, 4), 0.0).unwrap();
        let wa = weak_action(&f, |x| x);
        assert!(
            wa.total().abs() <= 1e-13 * wa.positive_magnitude,
            "residual {:e} vs positive magnitude {:e}",
            wa.total(),
            wa.positive_magnitude
        );
    }

    #[test]
    fn weak_action_matches_rhs_moment() {
        // Two discretizations of d/dt int x^2 g dx for a smooth bump.
        let g = grid(48);
        let f = Distribution::from_fn(g, |x| (-(x - 1.5) * (x - 1.5) / 0.5).exp()).unwrap();
        let wa = weak_action(&f, |x| x * x).total();
        let q = collision_rhs(&f).unwrap();
        let moment: f64 = f
            .grid()
            .weights()
            .iter()
            .zip(f.grid().nodes())
            .zip(&q)
            .map(|((&w, &x), &qi)| w * x.sqrt() * x * x * qi)
            .sum();
        let denom = wa.abs().max(moment.abs());
        assert!(
            (wa - moment).abs() <= 0.05 * denom,
            "weak action {wa:e} vs rhs moment {moment:e}"
        );
    }

    #[test]
    fn remap_identity_is_exact() {
        let f = Distribution::new(grid(32), pseudo_random(32, 9), 0.0).unwrap();
        let m = f.mass();
        let e = f.energy();
        let r = conservative_remap(&f, m, e).unwrap();
        assert_eq!(r.values(), f.values());
    }

    #[test]
    fn remap_proportional_case() {
        let g = Arc::new(build_grid(&GridSpec::uniform(32, 1.0)).unwrap());
        let f = Distribution::from_fn(g, |_| 1.0).unwrap();
        let r = conservative_remap(&f, 2.0 * f.mass(), 2.0 * f.energy()).unwrap();
        for (&a, &b) in r.values().iter().zip(f.values()) {
            assert_eq!(a, 2.0 * b);
        }
    }

    #[test]
    fn remap_hits_targets_after_perturbation() {
        let g = grid(64);
        let be = Distribution::from_fn(g, |x| ((x + 1.0).exp() - 1.0).recip()).unwrap();
        let m0 = be.mass();
        let e0 = be.energy();
        let perturbed: Vec<f64> = be
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * (1.0 + 1e-3 * ((i as f64 * 0.7).sin())))
            .collect();
        let p = be.with_values(perturbed);
        let r = conservative_remap(&p, m0, e0).unwrap();
        assert!(((r.mass() - m0) / m0).abs() < 1e-12);
        assert!(((r.energy() - e0) / e0).abs() < 1e-12);
        assert!(r.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn remap_refuses_concentrated_distribution() {
        let g = grid(32);
        let mut vals = vec![0.0; 32];
        vals[10] = 5.0;
        let f = Distribution::new(g, vals, 0.0).unwrap();
        assert!(matches!(
            conservative_remap(&f, f.mass() * 1.1, f.energy() * 1.05),
            Err(BnError::RemapDegenerate(_))
        ));
    }
}
