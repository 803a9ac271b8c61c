//! Glue between solutions and synthetic ground truth: accuracy reports per
//! component, amplitude-attenuation cuts for star-like fixtures, and
//! noise-floor measurement resolution.

use serde::{Deserialize, Serialize};

use crate::dic::DicSolution;
use crate::error::{Error, Result};
use crate::metrics::{
    l2_error, measurement_resolution, rmse, sinusoid_amplitude, spatial_resolution, ErrorReport,
    SrOptions, SrResult,
};
use crate::post::{line_cut, Axis};
use crate::synth::DeformationField;

/// Default Gauss order for the relative-L2 integrals.
pub const DEFAULT_GAUSS_ORDER: usize = 4;

/// Fit options for star-like attenuation cuts: the full cut is fitted so
/// the recovered tail (where bilinear solutions keep ringing) weighs in.
pub fn star_sr_options() -> SrOptions {
    SrOptions {
        fit_degree: 8,
        window: 1.0,
    }
}

/// Accuracy of `u`, `v`, and `εxx` against an analytic deformation:
/// per-pixel RMSE plus per-element Gauss relative L2.
pub fn error_reports(
    sol: &DicSolution,
    truth: &DeformationField,
    gauss_order: usize,
) -> Result<Vec<ErrorReport>> {
    let zoi = sol.mesh.zoi;
    let mut points = Vec::new();
    for y in 0..=zoi.height {
        for x in 0..=zoi.width {
            points.push([(zoi.x0 + x) as f64, (zoi.y0 + y) as f64]);
        }
    }
    let mut measured_u = Vec::with_capacity(points.len());
    let mut measured_v = Vec::with_capacity(points.len());
    let mut measured_exx = Vec::with_capacity(points.len());
    for p in &points {
        let d = sol.displacement_at(p[0], p[1])?;
        measured_u.push(d[0]);
        measured_v.push(d[1]);
        measured_exx.push(sol.strain_at(p[0], p[1])?[0]);
    }
    let truth_u: Vec<f64> = points.iter().map(|p| truth.displacement(p[0], p[1])[0]).collect();
    let truth_v: Vec<f64> = points.iter().map(|p| truth.displacement(p[0], p[1])[1]).collect();
    let truth_exx: Vec<f64> = points.iter().map(|p| truth.strain(p[0], p[1])[0]).collect();

    let mut reports = Vec::new();
    let specs: [(&str, &[f64], &[f64]); 3] = [
        ("u", &measured_u, &truth_u),
        ("v", &measured_v, &truth_v),
        ("exx", &measured_exx, &truth_exx),
    ];
    for (name, measured, truth_samples) in specs {
        let rmse_value = rmse(measured, truth_samples)?;
        let l2 = match name {
            "u" => l2_error(
                |x, y| sol.displacement_at(x, y).map(|d| d[0]),
                |x, y| truth.displacement(x, y)[0],
                &sol.mesh,
                gauss_order,
            ),
            "v" => l2_error(
                |x, y| sol.displacement_at(x, y).map(|d| d[1]),
                |x, y| truth.displacement(x, y)[1],
                &sol.mesh,
                gauss_order,
            ),
            _ => l2_error(
                |x, y| sol.strain_at(x, y).map(|s| s[0]),
                |x, y| truth.strain(x, y)[0],
                &sol.mesh,
                gauss_order,
            ),
        };
        // A zero-norm truth component (e.g. v for a horizontal sinusoid)
        // has no relative error; report NaN-free zero-truth marker.
        let l2_relative = match l2 {
            Ok(v) => v,
            Err(Error::Domain(_)) => f64::NAN,
            Err(other) => return Err(other),
        };
        reports.push(ErrorReport {
            component: name.to_string(),
            rmse: rmse_value,
            l2_relative,
            samples: measured.len(),
        });
    }
    Ok(reports)
}

/// Per-row amplitude attenuation cut for a star-like fixture.
///
/// For each sampled row the measured vertical displacement is projected onto
/// the known-period sinusoid (least squares), giving a measured amplitude;
/// the truth amplitude comes from the generator. Rows are ordered from the
/// fine-period end outward.
pub struct AttenuationCut {
    /// Row coordinate of each sample (pixels).
    pub positions: Vec<f64>,
    pub measured: Vec<f64>,
    pub truth: Vec<f64>,
}

pub fn star_attenuation_cut(
    sol: &DicSolution,
    field: &DeformationField,
    row_step: u32,
) -> Result<AttenuationCut> {
    let amplitude = match field {
        DeformationField::StarLike { amplitude, .. } => *amplitude,
        _ => {
            return Err(Error::Domain(
                "attenuation cuts need a star-like deformation".into(),
            ))
        }
    };
    let zoi = sol.mesh.zoi;
    let step = row_step.max(1);
    let xs: Vec<f64> = (0..=zoi.width).map(|i| (zoi.x0 + i) as f64).collect();
    let mut positions = Vec::new();
    let mut measured = Vec::new();
    let mut truth = Vec::new();
    let mut row = 0u32;
    while row <= zoi.height {
        let y = (zoi.y0 + row) as f64;
        let period = field
            .star_period_at(y)
            .expect("star-like field has a period");
        let mut values = Vec::with_capacity(xs.len());
        for &x in &xs {
            values.push(sol.displacement_at(x, y)?[1]);
        }
        positions.push(y);
        measured.push(sinusoid_amplitude(&xs, &values, period)?);
        truth.push(amplitude);
        row += step;
    }
    Ok(AttenuationCut {
        positions,
        measured,
        truth,
    })
}

/// Spatial resolution of a star-like run: the 10% crossing of the fitted
/// per-row amplitude attenuation, scanning from the fine-period end.
pub fn star_spatial_resolution(
    sol: &DicSolution,
    field: &DeformationField,
    row_step: u32,
    opts: SrOptions,
) -> Result<SrResult> {
    let cut = star_attenuation_cut(sol, field, row_step)?;
    spatial_resolution(&cut.positions, &cut.measured, &cut.truth, opts)
}

/// Measurement resolution from a noise-floor run: standard deviation of the
/// vertical displacement along the zone's center row.
pub fn center_row_mr(sol: &DicSolution) -> Result<f64> {
    let cut = line_cut(
        |x, y| sol.displacement_at(x, y).map(|d| d[1]),
        sol.mesh.zoi,
        Axis::Row,
        0.0,
        1.0,
    )?;
    measurement_resolution(&cut.values)
}

/// Everything `metrics` emits for one run.
#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub element_size: u32,
    pub components: Vec<ErrorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<crate::metrics::ResolutionReport>,
}

impl MetricsReport {
    /// Markdown table in the usual error-assessment layout.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| Method | Element size | ε_RMSE(u) | ε_L(u) | ε_RMSE(εxx) | ε_L(εxx) |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        let find = |name: &str| self.components.iter().find(|c| c.component == name);
        let fmt = |v: Option<f64>| match v {
            Some(x) if x.is_finite() => format!("{x:.4}"),
            _ => "—".to_string(),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            self.method,
            self.element_size,
            fmt(find("u").map(|c| c.rmse)),
            fmt(find("u").map(|c| c.l2_relative)),
            fmt(find("exx").map(|c| c.rmse)),
            fmt(find("exx").map(|c| c.l2_relative)),
        ));
        if let Some(res) = &self.resolution {
            out.push('\n');
            out.push_str("| Spatial resolution (px) | Measurement resolution (px) | MEI |\n");
            out.push_str("|---|---|---|\n");
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                fmt(res.spatial_resolution),
                fmt(Some(res.measurement_resolution)),
                fmt(res.mei),
            ));
        }
        out
    }
}
