//! Gauss–Legendre rules on [0, 1] and a bisecting adaptive wrapper.

use std::sync::OnceLock;

fn compute_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Nodes and weights of the n-point Gauss–Legendre rule on [0, 1] (n ≤ 16).
pub fn gauss_legendre_01(n: usize) -> (&'static [f64], &'static [f64]) {
    static RULES: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (0..=16).map(|n| if n == 0 { (vec![], vec![]) } else { compute_rule(n) }).collect());
    let (x, w) = &rules[n];
    (x, w)
}

/// Integrates `f` over [a, b] by bisection until a 5-point rule on the whole
/// interval agrees with the sum over its halves to `tol` (absolute).
pub fn adaptive<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    let whole = rule5(f, a, b);
    adaptive_inner(f, a, b, whole, tol, max_depth)
}

fn rule5<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let (x, w) = gauss_legendre_01(5);
    let h = b - a;
    x.iter().zip(w).map(|(x, w)| w * f(a + h * x)).sum::<f64>() * h
}

fn adaptive_inner<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = rule5(f, a, m);
    let right = rule5(f, m, b);
    let split = left + right;
    if depth == 0 || (split - whole).abs() <= tol {
        return split;
    }
    adaptive_inner(f, a, m, left, 0.5 * tol, depth - 1) + adaptive_inner(f, m, b, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_integrate_polynomials_exactly() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre_01(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let deg = 2 * n - 1;
            let integral: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((integral - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn adaptive_handles_near_singular_integrand() {
        let mut f = |s: f64| 1.0 / (s + 1e-3);
        let v = adaptive(&mut f, 0.0, 1.0, 1e-12, 40);
        let exact = (1.001f64 / 1e-3).ln();
        assert!((v - exact).abs() < 1e-10);
    }
}
