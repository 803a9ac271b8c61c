//! Quantitative evaluation: RMSE, relative L2 error, spatial resolution from
//! fractional-attenuation line cuts, measurement resolution, and their
//! product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::QuadMesh;
use crate::quad::gauss_legendre;

/// Accuracy summary for one field component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub component: String,
    pub rmse: f64,
    pub l2_relative: f64,
    pub samples: usize,
}

/// Root-mean-square error between point samples and their ground truth.
pub fn rmse(values: &[f64], truth: &[f64]) -> Result<f64> {
    if values.len() != truth.len() {
        return Err(Error::Domain(format!(
            "sample count mismatch: {} vs {}",
            values.len(),
            truth.len()
        )));
    }
    if values.is_empty() {
        return Err(Error::Domain("need at least one sample".into()));
    }
    let sum: f64 = values
        .iter()
        .zip(truth)
        .map(|(v, t)| (v - t) * (v - t))
        .sum();
    Ok((sum / values.len() as f64).sqrt())
}

/// Relative L2 error `‖u − u_ref‖ / ‖u_ref‖` over the meshed zone, with
/// per-element Gauss–Legendre integration of the given order.
pub fn l2_error<F, G>(sampler: F, truth: G, mesh: &QuadMesh, gauss_order: usize) -> Result<f64>
where
    F: Fn(f64, f64) -> Result<f64>,
    G: Fn(f64, f64) -> f64,
{
    let (nodes, weights) = gauss_legendre(gauss_order.max(1));
    let half = mesh.element_size as f64 / 2.0;
    let jac = half * half;
    let mut num = 0.0;
    let mut den = 0.0;
    for e in 0..mesh.element_count() {
        let c = mesh.element_center(e);
        for (j, &gj) in nodes.iter().enumerate() {
            for (i, &gi) in nodes.iter().enumerate() {
                let x = c[0] + half * gi;
                let y = c[1] + half * gj;
                let w = weights[i] * weights[j] * jac;
                let t = truth(x, y);
                let v = sampler(x, y)?;
                num += w * (v - t) * (v - t);
                den += w * t * t;
            }
        }
    }
    if den <= 0.0 {
        return Err(Error::Domain(
            "ground truth has zero norm over the zone; relative L2 is undefined".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// Options for the spatial-resolution fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SrOptions {
    /// Polynomial degree of the attenuation fit.
    pub fit_degree: usize,
    /// Fraction of the cut, from the fine-frequency end, used for the fit.
    pub window: f64,
}

impl Default for SrOptions {
    fn default() -> Self {
        SrOptions {
            fit_degree: 8,
            window: 0.5,
        }
    }
}

/// Crossing threshold of the fractional attenuation.
pub const SR_THRESHOLD: f64 = 0.1;

/// Where the fitted attenuation first drops through the 10% line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum SrOutcome {
    /// First position (scanning from the fine end) at the threshold.
    Crossing { position: f64 },
    /// Attenuation never exceeds the threshold: nothing to resolve.
    NeverAttenuated,
    /// Attenuation stays above the threshold over the whole window: the
    /// resolution lies beyond the cut range.
    BeyondRange,
}

/// Spatial-resolution estimate plus fit diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SrResult {
    pub outcome: SrOutcome,
    pub fit_degree: usize,
    /// RMS residual of the polynomial fit over the window.
    pub fit_residual: f64,
}

impl SrResult {
    pub fn position(&self) -> Option<f64> {
        match self.outcome {
            SrOutcome::Crossing { position } => Some(position),
            _ => None,
        }
    }
}

/// Fit the fractional attenuation `1 − measured/truth` along a cut with a
/// polynomial and scan from the fine-frequency end (the start of the sample
/// arrays) for the first crossing below 10%.
///
/// `positions` must be ordered from the fine end outward; `truth` carries
/// the known amplitude at each position and must stay clear of zero.
pub fn spatial_resolution(
    positions: &[f64],
    measured: &[f64],
    truth: &[f64],
    opts: SrOptions,
) -> Result<SrResult> {
    if positions.len() != measured.len() || positions.len() != truth.len() {
        return Err(Error::Domain("cut sample arrays differ in length".into()));
    }
    if positions.len() < opts.fit_degree + 2 {
        return Err(Error::Domain(format!(
            "need more than {} samples for a degree-{} fit",
            opts.fit_degree + 1,
            opts.fit_degree
        )));
    }
    let t_max = truth.iter().fold(0.0f64, |acc, t| acc.max(t.abs()));
    if truth.iter().any(|t| t.abs() < 1e-6 * t_max) || t_max == 0.0 {
        return Err(Error::Domain(
            "truth amplitude vanishes along the cut; attenuation is undefined".into(),
        ));
    }
    let attenuation: Vec<f64> = measured
        .iter()
        .zip(truth)
        .map(|(m, t)| 1.0 - m / t)
        .collect();

    // Fit over the window nearest the fine end.
    let count = ((positions.len() as f64 * opts.window.clamp(0.0, 1.0)).round() as usize)
        .clamp(opts.fit_degree + 2, positions.len());
    let pos = &positions[..count];
    let att = &attenuation[..count];
    let (p_lo, p_hi) = (pos[0], pos[count - 1]);
    if p_hi == p_lo {
        return Err(Error::Domain("cut positions are degenerate".into()));
    }
    let scale = |p: f64| 2.0 * (p - p_lo) / (p_hi - p_lo) - 1.0;

    let cols = opts.fit_degree + 1;
    let mut vander = DMatrix::<f64>::zeros(count, cols);
    for (r, &p) in pos.iter().enumerate() {
        let t = scale(p);
        let mut power = 1.0;
        for c in 0..cols {
            vander[(r, c)] = power;
            power *= t;
        }
    }
    let rhs = DVector::from_column_slice(att);
    let coeffs = vander
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Domain(format!("attenuation fit failed: {e}")))?;
    let fitted = |p: f64| -> f64 {
        let t = scale(p);
        let mut acc = 0.0;
        for c in (0..cols).rev() {
            acc = acc * t + coeffs[c];
        }
        acc
    };
    let residual = {
        let ss: f64 = pos
            .iter()
            .zip(att)
            .map(|(&p, &a)| (fitted(p) - a) * (fitted(p) - a))
            .sum();
        (ss / count as f64).sqrt()
    };

    // Dense scan from the fine end, bisection refinement at the sign change.
    let steps = 4000;
    let mut prev_p = p_lo;
    let start_above = fitted(p_lo) > SR_THRESHOLD;
    let mut outcome = if start_above {
        SrOutcome::BeyondRange
    } else {
        SrOutcome::NeverAttenuated
    };
    if start_above {
        for k in 1..=steps {
            let p = p_lo + (p_hi - p_lo) * k as f64 / steps as f64;
            let above = fitted(p) > SR_THRESHOLD;
            if !above {
                let (mut lo, mut hi) = (prev_p, p);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if fitted(mid) > SR_THRESHOLD {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                outcome = SrOutcome::Crossing {
                    position: 0.5 * (lo + hi),
                };
                break;
            }
            prev_p = p;
        }
    }
    Ok(SrResult {
        outcome,
        fit_degree: opts.fit_degree,
        fit_residual: residual,
    })
}

/// Sample standard deviation (N−1 denominator) of a noise-floor cut.
pub fn measurement_resolution(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Domain(
            "need at least two samples for a standard deviation".into(),
        ));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt())
}

/// Metrological efficiency indicator: the product of the two resolutions
/// (lower is better).
pub fn mei(spatial: f64, measurement: f64) -> f64 {
    spatial * measurement
}

/// Combined resolution summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub spatial_resolution: Option<f64>,
    pub measurement_resolution: f64,
    pub mei: Option<f64>,
    pub fit_degree: usize,
    pub fit_residual: f64,
}

/// Least-squares amplitude of a known-period sinusoid along a row:
/// fits `a·sin(2πx/λ) + b·cos(2πx/λ) + c` and returns `√(a² + b²)`.
pub fn sinusoid_amplitude(xs: &[f64], values: &[f64], period: f64) -> Result<f64> {
    if xs.len() != values.len() || xs.len() < 3 {
        return Err(Error::Domain(
            "need matching x/value arrays with at least 3 samples".into(),
        ));
    }
    if !(period > 0.0) {
        return Err(Error::Domain("period must be positive".into()));
    }
    let omega = std::f64::consts::TAU / period;
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (&x, &v) in xs.iter().zip(values) {
        let basis = [(omega * x).sin(), (omega * x).cos(), 1.0];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += basis[r] * basis[c];
            }
            atb[r] += basis[r] * v;
        }
    }
    let a = DMatrix::<f64>::from_fn(3, 3, |r, c| ata[r][c]);
    let b = DVector::from_column_slice(&atb);
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Domain("degenerate sinusoid fit".into()))?;
    Ok((sol[0] * sol[0] + sol[1] * sol[1]).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, ZoneOfInterest};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmse_reference_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.3, 0.3], &[0.0, 0.0]).unwrap(), 0.3);
        let r = rmse(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((r - (2.5f64).sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn test_mesh() -> QuadMesh {
        build_mesh(ZoneOfInterest::new(0, 0, 100, 100), 20).unwrap()
    }

    #[test]
    fn l2_error_homogeneity() {
        let mesh = test_mesh();
        let truth = |x: f64, y: f64| (0.07 * x).sin() + 0.3 * (0.05 * y).cos();
        let exact = l2_error(|x, y| Ok(truth(x, y)), truth, &mesh, 4).unwrap();
        assert!(exact < 1e-14);
        let scaled = l2_error(|x, y| Ok(1.1 * truth(x, y)), truth, &mesh, 4).unwrap();
        assert!((scaled - 0.1).abs() < 1e-10);
        // Scaling both field and truth leaves the relative error unchanged.
        let both = l2_error(
            |x, y| Ok(5.0 * 1.1 * truth(x, y)),
            |x, y| 5.0 * truth(x, y),
            &mesh,
            4,
        )
        .unwrap();
        assert!((both - scaled).abs() < 1e-12);
        // Zero truth is rejected.
        assert!(l2_error(|_, _| Ok(1.0), |_, _| 0.0, &mesh, 4).is_err());
    }

    #[test]
    fn rmse_and_l2_agree_on_ordering() {
        let mesh = test_mesh();
        let truth = |x: f64, _: f64| 1.0 + (0.05 * x).sin();
        let fields: [f64; 3] = [1.01, 1.05, 1.2];
        let mut rmses = Vec::new();
        let mut l2s = Vec::new();
        for factor in fields {
            let points: Vec<f64> = (0..100).map(|i| i as f64).collect();
            let measured: Vec<f64> = points.iter().map(|&x| factor * truth(x, 0.0)).collect();
            let exact: Vec<f64> = points.iter().map(|&x| truth(x, 0.0)).collect();
            rmses.push(rmse(&measured, &exact).unwrap());
            l2s.push(l2_error(|x, y| Ok(factor * truth(x, y)), truth, &mesh, 4).unwrap());
        }
        assert!(rmses[0] < rmses[1] && rmses[1] < rmses[2]);
        assert!(l2s[0] < l2s[1] && l2s[1] < l2s[2]);
    }

    #[test]
    fn sr_linear_attenuation_crossing() {
        // a(x) = max(0, 1 − x/200) crosses 10% at x = 180.
        let positions: Vec<f64> = (0..=400).map(|i| i as f64).collect();
        let truth = vec![1.0; positions.len()];
        let measured: Vec<f64> = positions
            .iter()
            .map(|&x| 1.0 - (1.0 - x / 200.0).max(0.0))
            .collect();
        let result = spatial_resolution(&positions, &measured, &truth, SrOptions::default())
            .unwrap();
        let pos = result.position().expect("crossing exists");
        assert!((pos - 180.0).abs() < 2.0, "crossing at {pos}");
    }

    #[test]
    fn sr_no_attenuation_and_beyond_range() {
        let positions: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let truth = vec![2.0; positions.len()];
        let perfect = truth.clone();
        let r = spatial_resolution(&positions, &perfect, &truth, SrOptions::default()).unwrap();
        assert_eq!(r.outcome, SrOutcome::NeverAttenuated);

        let dead = vec![0.0; positions.len()];
        let r = spatial_resolution(&positions, &dead, &truth, SrOptions::default()).unwrap();
        assert_eq!(r.outcome, SrOutcome::BeyondRange);
    }

    #[test]
    fn sr_is_stable_under_small_perturbations() {
        let positions: Vec<f64> = (0..=400).map(|i| i as f64).collect();
        let truth = vec![1.0; positions.len()];
        let measured: Vec<f64> = positions
            .iter()
            .map(|&x| 1.0 - (1.0 - x / 200.0).max(0.0))
            .collect();
        let base = spatial_resolution(&positions, &measured, &truth, SrOptions::default())
            .unwrap()
            .position()
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy: Vec<f64> = measured
            .iter()
            .map(|m| m * (1.0 + rng.random_range(-0.01..0.01)))
            .collect();
        let perturbed = spatial_resolution(&positions, &noisy, &truth, SrOptions::default())
            .unwrap()
            .position()
            .unwrap();
        assert!(
            (perturbed - base).abs() / base < 0.05,
            "{base} vs {perturbed}"
        );
    }

    #[test]
    fn mr_reference_values() {
        assert!((measurement_resolution(&[-1.0, 1.0]).unwrap() - 2.0f64.sqrt()).abs() < 1e-15);
        assert!(measurement_resolution(&[1.0]).is_err());
        let same = vec![0.4; 50];
        assert!(measurement_resolution(&same).unwrap() < 1e-12);
    }

    #[test]
    fn mei_is_a_product() {
        assert_eq!(mei(10.0, 0.01), 0.1);
        assert_eq!(mei(0.0, 5.0), 0.0);
    }

    #[test]
    fn sinusoid_amplitude_recovers_known_signals() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let period = 37.0;
        let omega = std::f64::consts::TAU / period;
        let values: Vec<f64> = xs
            .iter()
            .map(|&x| 0.42 * (omega * x + 0.7).sin() + 0.1)
            .collect();
        let amp = sinusoid_amplitude(&xs, &values, period).unwrap();
        assert!((amp - 0.42).abs() < 1e-10, "amp {amp}");
        // Attenuated signal.
        let weak: Vec<f64> = values.iter().map(|v| 0.25 * v).collect();
        let amp = sinusoid_amplitude(&xs, &weak, period).unwrap();
        assert!((amp - 0.105).abs() < 1e-10);
    }
}
