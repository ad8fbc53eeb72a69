//! Gauss–Legendre rules and a simple adaptive integrator built on them.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1],
/// by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Fixed rule rescaled to [a, b].
pub fn fixed<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Adaptive bisection with a 10-point rule, accepting a panel when it
/// agrees with the sum over its halves to `tol` (scaled by panel width).
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    let rule = gauss_legendre(10);
    let whole = fixed(&mut f, a, b, &rule);
    recurse(&mut f, a, b, whole, tol, &rule, 0, b - a)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    rule: &(Vec<f64>, Vec<f64>),
    depth: usize,
    span: f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let left = fixed(f, a, m, rule);
    let right = fixed(f, m, b, rule);
    let local_tol = tol * ((b - a) / span).max(1e-3);
    if depth > 40 || (left + right - whole).abs() <= local_tol {
        return left + right;
    }
    recurse(f, a, m, left, tol, rule, depth + 1, span) + recurse(f, m, b, right, tol, rule, depth + 1, span)
}
