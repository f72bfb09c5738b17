//! Adaptive composite quadrature on a 15-point Gauss-Legendre base rule.
//!
//! Nodes and weights are computed once at first use by Newton iteration on
//! the Legendre polynomial, so no tabulated constants enter the crate.
//! Adaptivity is plain interval bisection: an interval is accepted when its
//! one-panel estimate agrees with the two-half-panel estimate within the
//! local error budget.

use std::sync::OnceLock;

const GL_POINTS: usize = 15;

struct GaussRule {
    /// nodes on (-1, 1)
    nodes: [f64; GL_POINTS],
    weights: [f64; GL_POINTS],
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    // recurrence  (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn build_rule() -> GaussRule {
    let n = GL_POINTS;
    let mut nodes = [0.0; GL_POINTS];
    let mut weights = [0.0; GL_POINTS];
    for i in 0..n {
        // Chebyshev-style initial guess, then Newton
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    GaussRule { nodes, weights }
}

fn rule() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(build_rule)
}

/// One-panel 15-point Gauss-Legendre estimate on [a, b].
pub fn gauss_panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let r = rule();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut s = 0.0;
    for i in 0..GL_POINTS {
        s += r.weights[i] * f(mid + half * r.nodes[i]);
    }
    s * half
}

/// Adaptive integration of `f` over [a, b] to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let whole = gauss_panel(f, a, b);
    adapt(f, a, b, whole, tol, 0)
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
    let mid = 0.5 * (a + b);
    let left = gauss_panel(f, a, mid);
    let right = gauss_panel(f, mid, b);
    let refined = left + right;
    if (refined - whole).abs() <= tol || depth >= 48 {
        return refined;
    }
    adapt(f, a, mid, left, 0.5 * tol, depth + 1) + adapt(f, mid, b, right, 0.5 * tol, depth + 1)
}
