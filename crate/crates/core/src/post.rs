//! Sampling displacement and strain fields from a solution, line cuts, and
//! field export (CSV and PNG heatmaps).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dic::DicSolution;
use crate::error::{Error, Result};
use crate::mesh::ZoneOfInterest;

/// Scalar field component labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    U,
    V,
    Exx,
    Eyy,
    Exy,
}

impl Component {
    pub fn label(&self) -> &'static str {
        match self {
            Component::U => "u",
            Component::V => "v",
            Component::Exx => "exx",
            Component::Eyy => "eyy",
            Component::Exy => "exy",
        }
    }

    pub const ALL: [Component; 5] = [
        Component::U,
        Component::V,
        Component::Exx,
        Component::Eyy,
        Component::Exy,
    ];
}

/// A sampled scalar field over explicit pixel-space points.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub component: Component,
    pub points: Vec<[f64; 2]>,
    pub values: Vec<f64>,
}

/// Displacement vectors at the given points.
pub fn sample_displacement(sol: &DicSolution, points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    points
        .iter()
        .map(|p| sol.displacement_at(p[0], p[1]))
        .collect()
}

/// Small-strain components at the given points.
pub fn compute_strain(sol: &DicSolution, points: &[[f64; 2]]) -> Result<Vec<[f64; 3]>> {
    points.iter().map(|p| sol.strain_at(p[0], p[1])).collect()
}

/// Sample one component on a regular pixel grid over the zone (`stride` in
/// pixels; 1 samples every pixel).
pub fn field_grid(sol: &DicSolution, component: Component, stride: u32) -> Result<FieldGrid> {
    let zoi = sol.mesh.zoi;
    let stride = stride.max(1);
    let mut points = Vec::new();
    let mut y = 0;
    while y <= zoi.height {
        let mut x = 0;
        while x <= zoi.width {
            points.push([(zoi.x0 + x) as f64, (zoi.y0 + y) as f64]);
            x += stride;
        }
        y += stride;
    }
    let values = match component {
        Component::U | Component::V => {
            let disp = sample_displacement(sol, &points)?;
            let idx = if component == Component::U { 0 } else { 1 };
            disp.into_iter().map(|d| d[idx]).collect()
        }
        _ => {
            let strain = compute_strain(sol, &points)?;
            let idx = match component {
                Component::Exx => 0,
                Component::Eyy => 1,
                _ => 2,
            };
            strain.into_iter().map(|s| s[idx]).collect()
        }
    };
    Ok(FieldGrid {
        component,
        points,
        values,
    })
}

/// Cut orientation: a `Row` runs along x at fixed y, a `Column` along y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Column,
}

/// 1D sample sequence along a mesh-aligned line.
#[derive(Debug, Clone)]
pub struct LineCut {
    pub axis: Axis,
    /// Fixed coordinate of the line (y for rows, x for columns).
    pub level: f64,
    /// Moving coordinate of each sample.
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
}

/// Sample a scalar function along a line offset from the zone center.
pub fn line_cut<F>(
    sampler: F,
    zoi: ZoneOfInterest,
    axis: Axis,
    offset: f64,
    spacing: f64,
) -> Result<LineCut>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    if !(spacing > 0.0) {
        return Err(Error::Config("line-cut spacing must be positive".into()));
    }
    let center = zoi.center();
    let (level, lo, hi) = match axis {
        Axis::Row => (
            center[1] + offset,
            zoi.x0 as f64,
            (zoi.x0 + zoi.width) as f64,
        ),
        Axis::Column => (
            center[0] + offset,
            zoi.y0 as f64,
            (zoi.y0 + zoi.height) as f64,
        ),
    };
    let (min_level, max_level) = match axis {
        Axis::Row => (zoi.y0 as f64, (zoi.y0 + zoi.height) as f64),
        Axis::Column => (zoi.x0 as f64, (zoi.x0 + zoi.width) as f64),
    };
    if level < min_level || level > max_level {
        return Err(Error::Domain(format!(
            "line offset {offset} leaves the zone of interest"
        )));
    }
    let mut positions = Vec::new();
    let mut values = Vec::new();
    let mut t = lo;
    while t <= hi + 1e-9 {
        let clamped = t.min(hi);
        let (x, y) = match axis {
            Axis::Row => (clamped, level),
            Axis::Column => (level, clamped),
        };
        positions.push(clamped);
        values.push(sampler(x, y)?);
        t += spacing;
    }
    Ok(LineCut {
        axis,
        level,
        positions,
        values,
    })
}

/// Export as CSV with the schema `x,y,component,value`.
pub fn export_field_csv(field: &FieldGrid, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(field.values.len() * 32);
    out.push_str("x,y,component,value\n");
    for (p, v) in field.points.iter().zip(&field.values) {
        out.push_str(&format!(
            "{},{},{},{:.12e}\n",
            p[0],
            p[1],
            field.component.label(),
            v
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.to_path_buf(), e))
}

/// Parse a CSV previously written by [`export_field_csv`].
pub fn import_field_csv(path: &Path) -> Result<FieldGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "x,y,component,value" {
        return Err(Error::Domain(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    let mut component = None;
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Domain(format!("bad CSV row {}", lineno + 2)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Domain(format!("bad number {s:?} on row {}", lineno + 2)))
        };
        points.push([parse(fields[0])?, parse(fields[1])?]);
        values.push(parse(fields[3])?);
        let comp = match fields[2] {
            "u" => Component::U,
            "v" => Component::V,
            "exx" => Component::Exx,
            "eyy" => Component::Eyy,
            "exy" => Component::Exy,
            other => return Err(Error::Domain(format!("unknown component {other:?}"))),
        };
        component.get_or_insert(comp);
    }
    Ok(FieldGrid {
        component: component.unwrap_or(Component::U),
        points,
        values,
    })
}

/// Heatmap palettes for PNG export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    Gray,
    Viridis,
}

/// Sidecar metadata written next to every heatmap.
#[derive(Debug, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub component: Component,
    pub min: f64,
    pub max: f64,
    pub palette: Palette,
    pub width: u32,
    pub height: u32,
}

const VIRIDIS_ANCHORS: [[f64; 3]; 9] = [
    [0.267004, 0.004874, 0.329415],
    [0.282623, 0.140926, 0.457517],
    [0.253935, 0.265254, 0.529983],
    [0.206756, 0.371758, 0.553117],
    [0.163625, 0.471133, 0.558148],
    [0.127568, 0.566949, 0.550556],
    [0.134692, 0.658636, 0.517649],
    [0.477504, 0.821444, 0.318195],
    [0.993248, 0.906157, 0.143936],
];

fn viridis(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS_ANCHORS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS_ANCHORS.len() - 2);
    let frac = t - i as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        let v = VIRIDIS_ANCHORS[i][c] * (1.0 - frac) + VIRIDIS_ANCHORS[i + 1][c] * frac;
        rgb[c] = (v * 255.0).round() as u8;
    }
    rgb
}

/// Render the field as an 8-bit PNG heatmap with linear color scaling and
/// write the color-scale limits to a JSON sidecar. The grid must be the
/// regular output of [`field_grid`].
pub fn export_field_png(field: &FieldGrid, path: &Path, palette: Palette) -> Result<()> {
    // Infer the raster layout from the point lattice.
    let width = field
        .points
        .iter()
        .position(|p| p[1] != field.points[0][1])
        .unwrap_or(field.points.len());
    if width == 0 || field.points.len() % width != 0 {
        return Err(Error::Domain("field grid is not rectangular".into()));
    }
    let height = field.points.len() / width;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &field.values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // Spans at rounding level are rendered as a flat mid-palette image.
    let tiny = lo.abs().max(hi.abs()) * 1e-12;
    let flat = !(hi - lo > tiny);
    let span = if flat { 1.0 } else { hi - lo };

    let mut buf = image::RgbImage::new(width as u32, height as u32);
    for (idx, v) in field.values.iter().enumerate() {
        let t = if flat { 0.5 } else { (v - lo) / span };
        let rgb = match palette {
            Palette::Gray => {
                let g = (t.clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g]
            }
            Palette::Viridis => viridis(t),
        };
        buf.put_pixel(
            (idx % width) as u32,
            (idx / width) as u32,
            image::Rgb(rgb),
        );
    }
    buf.save(path)
        .map_err(|e| Error::Image(format!("saving {}: {e}", path.display())))?;

    let sidecar = HeatmapSidecar {
        component: field.component,
        min: lo,
        max: hi,
        palette,
        width: width as u32,
        height: height as u32,
    };
    let sidecar_path = path.with_extension("json");
    std::fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )
    .map_err(|e| Error::io(sidecar_path, e))
}
