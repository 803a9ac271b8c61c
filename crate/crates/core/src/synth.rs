//! Analytic speckle patterns and exactly-warped deformed images for
//! ground-truth experiments.
//!
//! Patterns are sums of Gaussian blobs, so the deformed image can be
//! rendered by evaluating the analytic pattern at `x − u(x)` directly — no
//! resampling or interpolation bias enters the ground truth. Randomness
//! comes from a seeded ChaCha8 stream, so outputs are identical across
//! platforms for a fixed seed.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gray::GrayImage;

/// One Gaussian blob of the pattern.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 2],
    pub sigma: f64,
    pub amplitude: f64,
}

/// Analytic speckle pattern: background plus signed Gaussian blobs,
/// evaluable at any real coordinate. Blobs are truncated at `6σ`, and a
/// coarse bucket grid keeps per-point evaluation local.
#[derive(Debug, Clone)]
pub struct SpecklePattern {
    width: u32,
    height: u32,
    background: f64,
    blobs: Vec<Blob>,
    bucket_size: f64,
    buckets_x: usize,
    buckets_y: usize,
    buckets: Vec<Vec<u32>>,
}

const BLOB_CUTOFF_SIGMAS: f64 = 6.0;

impl SpecklePattern {
    fn build(width: u32, height: u32, background: f64, blobs: Vec<Blob>) -> SpecklePattern {
        let max_reach = blobs
            .iter()
            .map(|b| b.sigma * BLOB_CUTOFF_SIGMAS)
            .fold(1.0f64, f64::max);
        let bucket_size = max_reach.max(8.0);
        let buckets_x = (width as f64 / bucket_size).ceil() as usize + 1;
        let buckets_y = (height as f64 / bucket_size).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); buckets_x * buckets_y];
        for (idx, blob) in blobs.iter().enumerate() {
            let reach = blob.sigma * BLOB_CUTOFF_SIGMAS;
            let x_lo = ((blob.center[0] - reach) / bucket_size).floor().max(0.0) as usize;
            let y_lo = ((blob.center[1] - reach) / bucket_size).floor().max(0.0) as usize;
            let x_hi = (((blob.center[0] + reach) / bucket_size).floor() as usize)
                .min(buckets_x - 1);
            let y_hi = (((blob.center[1] + reach) / bucket_size).floor() as usize)
                .min(buckets_y - 1);
            for by in y_lo..=y_hi {
                for bx in x_lo..=x_hi {
                    buckets[by * buckets_x + bx].push(idx as u32);
                }
            }
        }
        SpecklePattern {
            width,
            height,
            background,
            blobs,
            bucket_size,
            buckets_x,
            buckets_y,
            buckets,
        }
    }

    pub fn blobs(&self) -> &[Blob] {
        &self.blobs
    }

    /// Unclamped analytic intensity at a real coordinate.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let bx = ((x / self.bucket_size).floor().max(0.0) as usize).min(self.buckets_x - 1);
        let by = ((y / self.bucket_size).floor().max(0.0) as usize).min(self.buckets_y - 1);
        let mut value = self.background;
        for &idx in &self.buckets[by * self.buckets_x + bx] {
            let b = &self.blobs[idx as usize];
            let dx = x - b.center[0];
            let dy = y - b.center[1];
            let cutoff = b.sigma * BLOB_CUTOFF_SIGMAS;
            if dx.abs() > cutoff || dy.abs() > cutoff {
                continue;
            }
            value += b.amplitude * (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp();
        }
        value
    }

    /// Clamped intensity, the exact function the rasterizer samples.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        self.eval(x, y).clamp(0.0, 1.0)
    }

    /// Rasterize at pixel centers.
    pub fn rasterize(&self) -> GrayImage {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                values.push(self.sample(x as f64, y as f64));
            }
        }
        GrayImage::new(w, h, values).expect("raster dimensions are valid")
    }
}

/// Speckle generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeckleSpec {
    pub width: u32,
    pub height: u32,
    pub blob_count: u32,
    /// Blob radii are drawn uniformly from this range; the lower bound must
    /// be at least one pixel so raster sampling stays faithful.
    pub radius_range: (f64, f64),
    /// Blob amplitude magnitudes are drawn from this range, with random
    /// sign, on top of the mid-gray background.
    pub amplitude_range: (f64, f64),
    pub background: f64,
    pub seed: u64,
}

impl Default for SpeckleSpec {
    fn default() -> Self {
        SpeckleSpec {
            width: 500,
            height: 500,
            blob_count: 2200,
            radius_range: (1.5, 4.0),
            amplitude_range: (0.25, 0.5),
            background: 0.5,
            seed: 1,
        }
    }
}

/// Generate a random speckle pattern and its rasterization.
pub fn generate_speckle(spec: &SpeckleSpec) -> Result<(SpecklePattern, GrayImage)> {
    if spec.blob_count == 0 {
        return Err(Error::Config("speckle needs at least one blob".into()));
    }
    if spec.radius_range.0 < 1.0 {
        return Err(Error::Config(format!(
            "minimum blob radius must be ≥ 1 pixel for faithful rasterization, got {}",
            spec.radius_range.0
        )));
    }
    if spec.radius_range.1 < spec.radius_range.0 || spec.amplitude_range.1 < spec.amplitude_range.0
    {
        return Err(Error::Config("empty parameter range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut blobs = Vec::with_capacity(spec.blob_count as usize);
    for _ in 0..spec.blob_count {
        let center = [
            rng.random_range(0.0..spec.width as f64),
            rng.random_range(0.0..spec.height as f64),
        ];
        let sigma = rng.random_range(spec.radius_range.0..=spec.radius_range.1);
        let magnitude = rng.random_range(spec.amplitude_range.0..=spec.amplitude_range.1);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        blobs.push(Blob {
            center,
            sigma,
            amplitude: sign * magnitude,
        });
    }
    let pattern = SpecklePattern::build(spec.width, spec.height, spec.background, blobs);
    let image = pattern.rasterize();
    Ok((pattern, image))
}

/// Analytic displacement fields with closed-form strain.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeformationField {
    /// `u = A sin(w x)`, `v = 0`.
    Sinusoid { amplitude: f64, frequency: f64 },
    /// Rigid translation.
    Translation { tx: f64, ty: f64 },
    /// `u = 0`, `v = A sin(2π x / λ(y))` with the period growing linearly
    /// from `lambda_min` at `y = y_start` to `lambda_max` at
    /// `y = y_start + span`.
    StarLike {
        amplitude: f64,
        lambda_min: f64,
        lambda_max: f64,
        y_start: f64,
        span: f64,
    },
}

impl DeformationField {
    pub fn displacement(&self, x: f64, y: f64) -> [f64; 2] {
        match *self {
            DeformationField::Sinusoid {
                amplitude,
                frequency,
            } => [amplitude * (frequency * x).sin(), 0.0],
            DeformationField::Translation { tx, ty } => [tx, ty],
            DeformationField::StarLike { amplitude, .. } => {
                [0.0, amplitude * self.star_phase(x, y).sin()]
            }
        }
    }

    /// Small-strain components `[εxx, εyy, εxy]`.
    pub fn strain(&self, x: f64, y: f64) -> [f64; 3] {
        match *self {
            DeformationField::Sinusoid {
                amplitude,
                frequency,
            } => [amplitude * frequency * (frequency * x).cos(), 0.0, 0.0],
            DeformationField::Translation { .. } => [0.0, 0.0, 0.0],
            DeformationField::StarLike {
                amplitude,
                lambda_min,
                lambda_max,
                y_start,
                span,
            } => {
                let lambda = self.star_lambda(y);
                let slope = (lambda_max - lambda_min) / span;
                let phase = self.star_phase(x, y);
                let cos = phase.cos();
                // v = A sin(2πx/λ(y)):
                //   ∂v/∂x = A cos · 2π/λ
                //   ∂v/∂y = −A cos · 2πx λ′/λ²
                let dv_dx = amplitude * cos * std::f64::consts::TAU / lambda;
                let dv_dy = -amplitude
                    * cos
                    * std::f64::consts::TAU
                    * (x * slope / (lambda * lambda));
                let _ = y_start;
                [0.0, dv_dy, 0.5 * dv_dx]
            }
        }
    }

    fn star_lambda(&self, y: f64) -> f64 {
        match *self {
            DeformationField::StarLike {
                lambda_min,
                lambda_max,
                y_start,
                span,
                ..
            } => {
                let t = ((y - y_start) / span).clamp(0.0, 1.0);
                lambda_min + (lambda_max - lambda_min) * t
            }
            _ => unreachable!(),
        }
    }

    fn star_phase(&self, x: f64, y: f64) -> f64 {
        std::f64::consts::TAU * x / self.star_lambda(y)
    }

    /// Local period of the star field at height `y`; the truth contract for
    /// amplitude extraction along rows.
    pub fn star_period_at(&self, y: f64) -> Option<f64> {
        match self {
            DeformationField::StarLike { .. } => Some(self.star_lambda(y)),
            _ => None,
        }
    }
}

/// Render the deformed image: `g(x) = f(x − u(x))`, sampled through the same
/// clamped analytic path as the reference rasterization.
pub fn warp_render(pattern: &SpecklePattern, deformation: &DeformationField) -> GrayImage {
    let (w, h) = (pattern.width as usize, pattern.height as usize);
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let u = deformation.displacement(x as f64, y as f64);
            values.push(pattern.sample(x as f64 - u[0], y as f64 - u[1]));
        }
    }
    GrayImage::new(w, h, values).expect("raster dimensions are valid")
}

/// Add i.i.d. Gaussian noise of standard deviation `sigma`, clamped back to
/// `[0, 1]`. Deterministic for a fixed seed.
pub fn add_noise(image: &GrayImage, sigma: f64, seed: u64) -> Result<GrayImage> {
    if sigma < 0.0 {
        return Err(Error::Config("noise level must be non-negative".into()));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = image
        .values()
        .iter()
        .map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(image.width(), image.height(), values)
}

/// Analytic displacement and strain samples at the given points.
pub fn ground_truth(
    deformation: &DeformationField,
    points: &[[f64; 2]],
) -> (Vec<[f64; 2]>, Vec<[f64; 3]>) {
    let disp = points
        .iter()
        .map(|p| deformation.displacement(p[0], p[1]))
        .collect();
    let strain = points.iter().map(|p| deformation.strain(p[0], p[1])).collect();
    (disp, strain)
}
