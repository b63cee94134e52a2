//! Small fixed quadrature rules used away from the energy mesh.

use std::sync::OnceLock;

/// 16-point Gauss-Legendre rule on [-1, 1], nodes computed once by Newton
/// iteration on the Legendre polynomial.
pub(crate) fn gauss_legendre_16() -> (&'static [f64], &'static [f64]) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (x, w) = RULE.get_or_init(|| gauss_legendre(16));
    (x, w)
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        xs[n - 1 - i] = x;
        ws[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Composite Simpson rule over [a, b] with `panels` panels (even count of
/// sub-intervals).
pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(2) & !1;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let coef = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += coef * f(a + i as f64 * h);
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl16_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre_16();
        // degree 31 is the exactness limit of a 16-point rule
        let value: f64 = x.iter().zip(w).map(|(&t, &wt)| wt * t.powi(30)).sum();
        let exact = 2.0 / 31.0;
        assert!((value - exact).abs() < 1e-14, "{value} vs {exact}");
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn simpson_matches_closed_form() {
        let v = simpson(|x| x.exp(), 0.0, 1.0, 64);
        assert!((v - (1.0f64.exp() - 1.0)).abs() < 1e-12);
    }
}
