//! Gauss-Legendre quadrature, adaptive bisection and log-domain helpers.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_rule(16))
}

fn rule8() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_rule(8))
}

/// Fixed 16-point Gauss-Legendre integral of `f` over `[a, b]`.
pub fn gl16<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = rule16();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    nodes.iter().zip(weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Fixed 8-point Gauss-Legendre integral of `f` over `[a, b]`.
pub fn gl8<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = rule8();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    nodes.iter().zip(weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Nodes of the 8-point rule mapped to `[a, b]` with their weights.
pub fn gl8_nodes(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let (nodes, weights) = rule8();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    nodes.iter().zip(weights).map(move |(x, w)| (mid + half * x, w * half))
}

/// Adaptive Gauss-Legendre integration to absolute tolerance `tol`.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> Result<f64> {
        let m = 0.5 * (a + b);
        let left = gl16(f, a, m);
        let right = gl16(f, m, b);
        let both = left + right;
        if !both.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
        }
        if (both - whole).abs() <= tol || (b - a).abs() < 1e-13 {
            return Ok(both);
        }
        if depth >= 48 {
            return Err(Error::Quadrature(format!("no convergence on [{a}, {b}]")));
        }
        Ok(rec(f, a, m, left, 0.5 * tol, depth + 1)? + rec(f, m, b, right, 0.5 * tol, depth + 1)?)
    }
    rec(f, a, b, gl16(f, a, b), tol, 0)
}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Trapezoid rule for samples at uniform spacing `h` (endpoints included).
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_weights_and_moments() {
        for n in [1, 2, 5, 8, 16] {
            let (x, w) = gauss_legendre_rule(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
            // exact for x^{2n-2}
            let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * n as i32 - 2)).sum();
            assert!((m - 2.0 / (2 * n - 1) as f64).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn adaptive_handles_peaks() {
        let f = |x: f64| 1.0 / (1e-4 + x * x);
        let exact = 2.0 * (1.0 / 1e-2f64) * (1.0 / 1e-2f64).atan();
        let got = adaptive(&f, -1.0, 1.0, 1e-10).unwrap();
        assert!((got - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn log_add_exp_is_stable() {
        assert!((log_add_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_of_linear_is_exact() {
        let v: Vec<f64> = (0..=10).map(|i| 2.0 * i as f64 * 0.1 + 1.0).collect();
        assert!((trapezoid(&v, 0.1) - 2.0).abs() < 1e-14);
    }
}
