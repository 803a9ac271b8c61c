//! Quadrature rules on the reference element `[−1,1]` / `[−1,1]²`.

use crate::error::{Error, Result};

/// Uniform 2D rule: `n × n` points at the cell centers of an `n × n`
/// subdivision, all with weight `(2/n)²`. This is the composite midpoint
/// rule; the correlation integrand is smooth enough for it.
pub fn quadrature_points(n_per_axis: u32) -> Result<(Vec<[f64; 2]>, f64)> {
    if n_per_axis < 2 {
        return Err(Error::Config(format!(
            "need at least 2 quadrature points per axis, got {n_per_axis}"
        )));
    }
    let n = n_per_axis as usize;
    let step = 2.0 / n as f64;
    let mut points = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            points.push([
                -1.0 + (i as f64 + 0.5) * step,
                -1.0 + (j as f64 + 0.5) * step,
            ]);
        }
    }
    Ok((points, step * step))
}

/// Gauss–Legendre nodes and weights on `[−1,1]`, by Newton iteration on the
/// Legendre polynomial from the Chebyshev initial guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one Gauss point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n` and its derivative at `x` via the recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
