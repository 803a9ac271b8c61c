//! 1D cubic interpolating splines on a uniform grid, with not-a-knot end
//! conditions. Used by the separated grayscale model; order 4 means the
//! pieces are cubics and the interpolant is C².

/// Cubic spline through `values[i]` at `x0 + i·spacing`.
///
/// Stored in moment form: `moments[i]` is the second derivative at knot `i`.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x0: f64,
    spacing: f64,
    values: Vec<f64>,
    moments: Vec<f64>,
}

impl CubicSpline {
    /// Interpolating not-a-knot spline. Two points give a line, three the
    /// interpolating parabola.
    pub fn interpolating(x0: f64, spacing: f64, values: &[f64]) -> CubicSpline {
        assert!(values.len() >= 2, "need at least two samples");
        assert!(spacing > 0.0);
        let n = values.len();
        let h = spacing;
        let mut moments = vec![0.0; n];
        match n {
            2 => {}
            3 => {
                // Single parabola through the three points.
                let c = (values[0] - 2.0 * values[1] + values[2]) / (2.0 * h * h);
                moments.fill(2.0 * c);
            }
            _ => {
                // Interior continuity rows: M_{i−1} + 4 M_i + M_{i+1} = r_i,
                // with the not-a-knot rows eliminated analytically:
                // M_1 = r_1 / 6 and M_{n−2} = r_{n−2} / 6.
                let r =
                    |i: usize| 6.0 * (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h);
                moments[1] = r(1) / 6.0;
                moments[n - 2] = r(n - 2) / 6.0;
                if n > 4 {
                    // Thomas solve for M_2 … M_{n−3} on the [1 4 1] band.
                    let m = n - 4;
                    let mut diag = vec![4.0; m];
                    let mut rhs = vec![0.0; m];
                    for (k, item) in rhs.iter_mut().enumerate() {
                        *item = r(k + 2);
                    }
                    rhs[0] -= moments[1];
                    rhs[m - 1] -= moments[n - 2];
                    for k in 1..m {
                        let w = 1.0 / diag[k - 1];
                        diag[k] -= w;
                        rhs[k] -= w * rhs[k - 1];
                    }
                    let mut sol = vec![0.0; m];
                    sol[m - 1] = rhs[m - 1] / diag[m - 1];
                    for k in (0..m - 1).rev() {
                        sol[k] = (rhs[k] - sol[k + 1]) / diag[k];
                    }
                    moments[2..(m + 2)].copy_from_slice(&sol[..m]);
                }
                // Not-a-knot extrapolation of the end moments.
                moments[0] = 2.0 * moments[1] - moments[2];
                moments[n - 1] = 2.0 * moments[n - 2] - moments[n - 3];
            }
        }
        CubicSpline {
            x0,
            spacing,
            values: values.to_vec(),
            moments,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (
            self.x0,
            self.x0 + self.spacing * (self.values.len() - 1) as f64,
        )
    }

    #[inline]
    fn segment(&self, x: f64) -> usize {
        let t = (x - self.x0) / self.spacing;
        (t.floor() as i64).clamp(0, self.values.len() as i64 - 2) as usize
    }

    /// Spline value; outside the knot range the end cubic extends smoothly.
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.spacing;
        let xl = self.x0 + i as f64 * h;
        let t1 = x - xl;
        let t2 = xl + h - x;
        self.moments[i] * t2 * t2 * t2 / (6.0 * h)
            + self.moments[i + 1] * t1 * t1 * t1 / (6.0 * h)
            + (self.values[i] / h - self.moments[i] * h / 6.0) * t2
            + (self.values[i + 1] / h - self.moments[i + 1] * h / 6.0) * t1
    }

    pub fn eval_derivative(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.spacing;
        let xl = self.x0 + i as f64 * h;
        let t1 = x - xl;
        let t2 = xl + h - x;
        -self.moments[i] * t2 * t2 / (2.0 * h)
            + self.moments[i + 1] * t1 * t1 / (2.0 * h)
            + (self.values[i + 1] - self.values[i]) / h
            - (self.moments[i + 1] - self.moments[i]) * h / 6.0
    }

    pub fn eval_both(&self, x: f64) -> (f64, f64) {
        let i = self.segment(x);
        let h = self.spacing;
        let xl = self.x0 + i as f64 * h;
        let t1 = x - xl;
        let t2 = xl + h - x;
        let value = self.moments[i] * t2 * t2 * t2 / (6.0 * h)
            + self.moments[i + 1] * t1 * t1 * t1 / (6.0 * h)
            + (self.values[i] / h - self.moments[i] * h / 6.0) * t2
            + (self.values[i + 1] / h - self.moments[i + 1] * h / 6.0) * t1;
        let deriv = -self.moments[i] * t2 * t2 / (2.0 * h)
            + self.moments[i + 1] * t1 * t1 / (2.0 * h)
            + (self.values[i + 1] - self.values[i]) / h
            - (self.moments[i + 1] - self.moments[i]) * h / 6.0;
        (value, deriv)
    }

    pub(crate) fn knot_values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn moments(&self) -> &[f64] {
        &self.moments
    }

    pub(crate) fn x0(&self) -> f64 {
        self.x0
    }

    pub(crate) fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Reassemble a spline from stored knot values and moments.
    pub(crate) fn from_parts(
        x0: f64,
        spacing: f64,
        values: Vec<f64>,
        moments: Vec<f64>,
    ) -> CubicSpline {
        assert_eq!(values.len(), moments.len());
        assert!(values.len() >= 2);
        CubicSpline {
            x0,
            spacing,
            values,
            moments,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_knots() {
        let values = [1.0, -2.0, 0.5, 3.0, 3.0, -1.0, 4.0];
        let s = CubicSpline::interpolating(0.0, 1.0, &values);
        for (i, v) in values.iter().enumerate() {
            assert!((s.eval(i as f64) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_cubics_exactly() {
        // Not-a-knot on ≥ 4 points reproduces any single cubic.
        let f = |x: f64| 0.3 * x * x * x - 1.2 * x * x + 0.5 * x + 2.0;
        let df = |x: f64| 0.9 * x * x - 2.4 * x + 0.5;
        let values: Vec<f64> = (0..12).map(|i| f(i as f64)).collect();
        let s = CubicSpline::interpolating(0.0, 1.0, &values);
        for i in 0..=110 {
            let x = i as f64 * 0.1;
            assert!((s.eval(x) - f(x)).abs() < 1e-9, "x={x}");
            assert!((s.eval_derivative(x) - df(x)).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn small_point_counts() {
        let s = CubicSpline::interpolating(0.0, 1.0, &[1.0, 3.0]);
        assert!((s.eval(0.5) - 2.0).abs() < 1e-14);
        assert!((s.eval_derivative(0.25) - 2.0).abs() < 1e-14);

        // Three points: the parabola through them.
        let f = |x: f64| x * x - x + 1.0;
        let values: Vec<f64> = (0..3).map(|i| f(i as f64)).collect();
        let s = CubicSpline::interpolating(0.0, 1.0, &values);
        assert!((s.eval(0.5) - f(0.5)).abs() < 1e-13);
        assert!((s.eval_derivative(1.5) - (2.0 * 1.5 - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let values: Vec<f64> = (0..30)
            .map(|i| ((i as f64) * 0.7).sin() + 0.1 * i as f64)
            .collect();
        let s = CubicSpline::interpolating(0.0, 1.0, &values);
        let h = 1e-6;
        for i in 0..200 {
            let x = 0.5 + i as f64 * 0.14;
            let fd = (s.eval(x + h) - s.eval(x - h)) / (2.0 * h);
            assert!((s.eval_derivative(x) - fd).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn c2_at_interior_knots() {
        let values: Vec<f64> = (0..10).map(|i| ((i * i) as f64).sin()).collect();
        let s = CubicSpline::interpolating(0.0, 1.0, &values);
        for k in 1..9 {
            let x = k as f64;
            let eps = 1e-7;
            let d_lo = s.eval_derivative(x - eps);
            let d_hi = s.eval_derivative(x + eps);
            assert!((d_lo - d_hi).abs() < 1e-5);
        }
    }
}
