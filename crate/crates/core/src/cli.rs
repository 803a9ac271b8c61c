//! Command implementations behind the `cfe-dic` binary: run analyses,
//! generate synthetic benchmarks, compute metrics, and dump shape-function
//! curves. Commands are plain functions so they stay testable without a
//! process boundary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dic::{run_dic, BackendChoice, DicConfig, DicSolution, ElementChoice, RunDiagnostics};
use crate::error::{Error, Result};
use crate::evaluate::{
    center_row_mr, error_reports, star_spatial_resolution, star_sr_options, MetricsReport,
    DEFAULT_GAUSS_ORDER,
};
use crate::gray::GrayImage;
use crate::mesh::{build_connectivity, build_mesh, export_mesh_csv, QuadMesh, ZoneOfInterest};
use crate::metrics::{mei, ResolutionReport};
use crate::post::{export_field_csv, export_field_png, field_grid, Component, Palette};
use crate::shape::{CfeElement1d, CfeParams};
use crate::synth::{
    add_noise, generate_speckle, warp_render, DeformationField, SpeckleSpec,
};

/// Versioned TOML configuration file. Unknown keys are rejected so typos in
/// numeric parameters fail loudly.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub version: Option<u32>,
    #[serde(default)]
    pub element: ElementSection,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub grayscale: GrayscaleSection,
    #[serde(default)]
    pub run: RunSection,
    pub zoi: Option<ZoiSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSection {
    pub kind: Option<ElementChoice>,
    pub size: Option<u32>,
    pub order: Option<u32>,
    pub patch_size: Option<u32>,
    pub dilation: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSection {
    pub points_per_axis: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub refinement_iters: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrayscaleSection {
    pub backend: Option<BackendChoice>,
    pub svd_tol: Option<f64>,
    pub svd_max_modes: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoiSection {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        let config: FileConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        match config.version {
            Some(1) => Ok(config),
            Some(v) => Err(Error::Config(format!(
                "unsupported config version {v} (expected 1)"
            ))),
            None => Err(Error::Config(format!(
                "{} is missing the `version` key",
                path.display()
            ))),
        }
    }

    /// Layer the file values over `base` (typically the defaults).
    pub fn apply(&self, base: &DicConfig) -> DicConfig {
        let mut config = base.clone();
        if let Some(v) = self.element.kind {
            config.element = v;
        }
        if let Some(v) = self.element.size {
            config.element_size = v;
        }
        if let Some(v) = self.element.order {
            config.order = v;
        }
        if let Some(v) = self.element.patch_size {
            config.patch_size = v;
        }
        if let Some(v) = self.element.dilation {
            config.dilation = v;
        }
        if let Some(v) = self.quadrature.points_per_axis {
            config.quad_points_per_axis = v;
        }
        if let Some(v) = self.solver.tol {
            config.solver_tol = v;
        }
        if let Some(v) = self.solver.max_iters {
            config.max_solver_iters = v;
        }
        if let Some(v) = self.solver.refinement_iters {
            config.refinement_iters = v;
        }
        if let Some(v) = self.grayscale.backend {
            config.backend = v;
        }
        if let Some(v) = self.grayscale.svd_tol {
            config.svd_tol = v;
        }
        if let Some(v) = self.grayscale.svd_max_modes {
            config.svd_max_modes = v;
        }
        if let Some(v) = self.run.seed {
            config.seed = v;
        }
        if let Some(v) = self.run.threads {
            config.threads = v;
        }
        config
    }
}

/// Command-line overrides; only explicitly passed flags take effect.
#[derive(Debug, Default, Clone)]
pub struct ConfigOverrides {
    pub element: Option<ElementChoice>,
    pub element_size: Option<u32>,
    pub order: Option<u32>,
    pub patch_size: Option<u32>,
    pub dilation: Option<f64>,
    pub tol: Option<f64>,
    pub refinement_iters: Option<u32>,
    pub quad: Option<u32>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

impl ConfigOverrides {
    pub fn apply(&self, base: &DicConfig) -> DicConfig {
        let mut config = base.clone();
        if let Some(v) = self.element {
            config.element = v;
        }
        if let Some(v) = self.element_size {
            config.element_size = v;
        }
        if let Some(v) = self.order {
            config.order = v;
        }
        if let Some(v) = self.patch_size {
            config.patch_size = v;
        }
        if let Some(v) = self.dilation {
            config.dilation = v;
        }
        if let Some(v) = self.tol {
            config.solver_tol = v;
        }
        if let Some(v) = self.refinement_iters {
            config.refinement_iters = v;
        }
        if let Some(v) = self.quad {
            config.quad_points_per_axis = v;
        }
        if let Some(v) = self.threads {
            config.threads = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        config
    }
}

/// Merge defaults ← config file ← CLI flags.
pub fn merge_config(
    file: Option<&Path>,
    overrides: &ConfigOverrides,
) -> Result<(DicConfig, Option<ZoiSection>)> {
    let mut config = DicConfig::default();
    let mut zoi = None;
    if let Some(path) = file {
        let file_config = FileConfig::load(path)?;
        config = file_config.apply(&config);
        zoi = file_config.zoi;
    }
    Ok((overrides.apply(&config), zoi))
}

fn sha256_file(path: &Path) -> Result<String> {
    let data = std::fs::read(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&data);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(tmp.clone(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.to_path_buf(), e))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub config: DicConfig,
    pub zoi: ZoneOfInterest,
    pub inputs: Vec<InputRecord>,
    pub timings: RunDiagnostics,
    pub outputs: Vec<String>,
}

/// Serialized solution file consumed by `metrics`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub version: u32,
    pub mesh: QuadMesh,
    pub config: DicConfig,
    pub u: Vec<f64>,
    pub diagnostics: RunDiagnostics,
}

impl SolutionFile {
    pub fn from_solution(sol: &DicSolution) -> SolutionFile {
        SolutionFile {
            version: 1,
            mesh: sol.mesh.clone(),
            config: sol.config.clone(),
            u: sol.u.clone(),
            diagnostics: sol.diagnostics.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(
            path,
            &serde_json::to_string(self).expect("solution serializes"),
        )
    }

    pub fn load(path: &Path) -> Result<DicSolution> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        let file: SolutionFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        if file.version != 1 {
            return Err(Error::Config(format!(
                "unsupported solution version {}",
                file.version
            )));
        }
        DicSolution::reconstruct(file.mesh, file.config, file.u, file.diagnostics)
    }
}

/// Ground-truth sidecar written by `synth` and consumed by `run`/`metrics`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub version: u32,
    pub seed: u64,
    pub speckle: SpeckleSpec,
    pub deformation: DeformationField,
    pub noise_sigma: f64,
    pub zoi: ZoneOfInterest,
}

impl TruthSidecar {
    pub fn load(path: &Path) -> Result<TruthSidecar> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{e}")))
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.to_path_buf(), e))
}

/// `run`: correlate an image pair and write fields, heatmaps, the solution,
/// a manifest, and (when ground truth is available) a metrics report.
#[allow(clippy::too_many_arguments)]
pub fn cmd_run(
    ref_path: &Path,
    def_path: &Path,
    config_path: Option<&Path>,
    overrides: &ConfigOverrides,
    zoi_flag: Option<ZoneOfInterest>,
    truth_path: Option<&Path>,
    out_dir: &Path,
    stride: u32,
    palette: Palette,
) -> Result<()> {
    let (config, zoi_file) = merge_config(config_path, overrides)?;
    config.validate()?;
    ensure_dir(out_dir)?;

    let reference = GrayImage::load(ref_path)?;
    let deformed = GrayImage::load(def_path)?;

    // Ground truth: explicit flag, or a `truth.json` next to the images.
    let truth_file = truth_path.map(PathBuf::from).or_else(|| {
        let candidate = def_path.with_file_name("truth.json");
        candidate.exists().then_some(candidate)
    });
    let truth = truth_file
        .as_deref()
        .map(TruthSidecar::load)
        .transpose()?;

    let zoi = zoi_flag
        .or(zoi_file.map(|z| ZoneOfInterest::new(z.x0, z.y0, z.width, z.height)))
        .or(truth.as_ref().map(|t| t.zoi))
        .ok_or_else(|| {
            Error::Config(
                "no zone of interest: pass --zoi, set [zoi] in the config file, \
                 or provide a truth sidecar"
                    .into(),
            )
        })?;

    let solution = run_dic(&reference, &deformed, zoi, &config)?;

    let mut outputs = Vec::new();
    let solution_path = out_dir.join("solution.json");
    SolutionFile::from_solution(&solution).save(&solution_path)?;
    outputs.push("solution.json".to_string());

    for component in Component::ALL {
        let field = field_grid(&solution, component, stride)?;
        let csv = out_dir.join(format!("{}.csv", component.label()));
        export_field_csv(&field, &csv)?;
        outputs.push(format!("{}.csv", component.label()));
        let png = out_dir.join(format!("{}.png", component.label()));
        export_field_png(&field, &png, palette)?;
        outputs.push(format!("{}.png", component.label()));
        outputs.push(format!("{}.json", component.label()));
    }

    if let Some(truth) = &truth {
        let report = MetricsReport {
            method: format!("{:?}", config.element).to_lowercase(),
            element_size: config.element_size,
            components: error_reports(&solution, &truth.deformation, DEFAULT_GAUSS_ORDER)?,
            resolution: None,
        };
        write_atomic(
            &out_dir.join("report.json"),
            &serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        write_atomic(&out_dir.join("report.md"), &report.to_markdown())?;
        outputs.push("report.json".to_string());
        outputs.push("report.md".to_string());
    }

    let manifest = RunManifest {
        version: 1,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        zoi,
        inputs: vec![
            InputRecord {
                path: ref_path.display().to_string(),
                sha256: sha256_file(ref_path)?,
            },
            InputRecord {
                path: def_path.display().to_string(),
                sha256: sha256_file(def_path)?,
            },
        ],
        timings: solution.diagnostics.clone(),
        outputs,
    };
    write_atomic(
        &out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

/// Synthetic benchmark presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthPreset {
    /// 500² image, horizontal sinusoid `A = 0.05 px`, `w = 0.05 /px`.
    Example1,
    /// Same, with `w = 0.2 /px` and finer speckle.
    Example2,
    /// Vertical sinusoid with a period growing linearly down the zone.
    StarLike,
    /// Rigid translation by (0.05, 0) px.
    Translation,
}

impl std::str::FromStr for SynthPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "example1" => Ok(SynthPreset::Example1),
            "example2" => Ok(SynthPreset::Example2),
            "star-like" => Ok(SynthPreset::StarLike),
            "translation" => Ok(SynthPreset::Translation),
            other => Err(format!(
                "unknown preset {other:?} (expected example1, example2, star-like, translation)"
            )),
        }
    }
}

/// Build the preset's speckle spec, deformation field, and suggested zone.
pub fn preset_definition(
    preset: SynthPreset,
    seed: u64,
) -> (SpeckleSpec, DeformationField, ZoneOfInterest) {
    let zoi = ZoneOfInterest::new(50, 50, 400, 400);
    match preset {
        SynthPreset::Example1 => (
            SpeckleSpec {
                blob_count: 4500,
                radius_range: (1.5, 4.0),
                seed,
                ..SpeckleSpec::default()
            },
            DeformationField::Sinusoid {
                amplitude: 0.05,
                frequency: 0.05,
            },
            zoi,
        ),
        SynthPreset::Example2 => (
            SpeckleSpec {
                blob_count: 4200,
                radius_range: (1.0, 3.0),
                seed,
                ..SpeckleSpec::default()
            },
            DeformationField::Sinusoid {
                amplitude: 0.05,
                frequency: 0.2,
            },
            zoi,
        ),
        SynthPreset::StarLike => (
            SpeckleSpec {
                blob_count: 4200,
                radius_range: (1.0, 3.0),
                seed,
                ..SpeckleSpec::default()
            },
            DeformationField::StarLike {
                amplitude: 0.1,
                lambda_min: 20.0,
                lambda_max: 100.0,
                y_start: 50.0,
                span: 400.0,
            },
            zoi,
        ),
        SynthPreset::Translation => (
            SpeckleSpec {
                blob_count: 1400,
                radius_range: (3.0, 8.0),
                seed,
                ..SpeckleSpec::default()
            },
            DeformationField::Translation { tx: 0.05, ty: 0.0 },
            zoi,
        ),
    }
}

/// `synth`: write a reference/deformed pair plus the ground-truth sidecar.
pub fn cmd_synth(
    preset: SynthPreset,
    seed: u64,
    noise_sigma: f64,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let (spec, deformation, zoi) = preset_definition(preset, seed);
    let (pattern, reference) = generate_speckle(&spec)?;
    let deformed = warp_render(&pattern, &deformation);
    let (reference, deformed) = if noise_sigma > 0.0 {
        (
            add_noise(&reference, noise_sigma, seed ^ 0x5eed_0001)?,
            add_noise(&deformed, noise_sigma, seed ^ 0x5eed_0002)?,
        )
    } else {
        (reference, deformed)
    };
    // Benchmark images carry camera-like 8-bit depth.
    reference.save_png8(&out_dir.join("ref.png"))?;
    deformed.save_png8(&out_dir.join("def.png"))?;
    let sidecar = TruthSidecar {
        version: 1,
        seed,
        speckle: spec,
        deformation,
        noise_sigma,
        zoi,
    };
    write_atomic(
        &out_dir.join("truth.json"),
        &serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )
}

/// `metrics`: evaluate a stored solution against ground truth; optionally
/// compute the resolution metrics.
pub fn cmd_metrics(
    solution_path: &Path,
    truth_path: &Path,
    noise_solution: Option<&Path>,
    with_sr: bool,
    gauss_order: usize,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let solution = SolutionFile::load(solution_path)?;
    let truth = TruthSidecar::load(truth_path)?;
    let components = error_reports(&solution, &truth.deformation, gauss_order)?;

    let mut resolution = None;
    let sr = if with_sr {
        let result =
            star_spatial_resolution(&solution, &truth.deformation, 2, star_sr_options())?;
        Some(result)
    } else {
        None
    };
    let mr = noise_solution
        .map(|path| -> Result<f64> { center_row_mr(&SolutionFile::load(path)?) })
        .transpose()?;
    if sr.is_some() || mr.is_some() {
        let sr_pos = sr.as_ref().and_then(|s| s.position());
        resolution = Some(ResolutionReport {
            spatial_resolution: sr_pos,
            measurement_resolution: mr.unwrap_or(f64::NAN),
            mei: match (sr_pos, mr) {
                (Some(s), Some(m)) => Some(mei(s, m)),
                _ => None,
            },
            fit_degree: sr.as_ref().map(|s| s.fit_degree).unwrap_or(0),
            fit_residual: sr.as_ref().map(|s| s.fit_residual).unwrap_or(f64::NAN),
        });
    }

    let report = MetricsReport {
        method: format!("{:?}", solution.config.element).to_lowercase(),
        element_size: solution.config.element_size,
        components,
        resolution,
    };
    write_atomic(
        &out_dir.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    write_atomic(&out_dir.join("report.md"), &report.to_markdown())
}

/// `shapes`: dump 1D shape-function curves as CSV (`xi, N_1 … N_K`).
///
/// For convolution elements the curves are the global basis functions of the
/// center element's patch nodes, assembled across neighboring elements of an
/// unbounded strip; classical elements dump their global hat functions.
pub fn cmd_shapes(
    element: ElementChoice,
    order: u32,
    patch_size: u32,
    dilation: f64,
    samples: usize,
    out_path: &Path,
) -> Result<()> {
    let samples = samples.max(16);
    let mut out = String::new();
    match element {
        ElementChoice::Cfe => {
            let params = CfeParams::new(order, patch_size, dilation)?;
            let element = CfeElement1d::build(&params)?;
            let offsets = element.node_offsets().to_vec();
            let reach = (2 * patch_size + 1) as f64;
            out.push_str("xi");
            for o in &offsets {
                out.push_str(&format!(",N_{o}"));
            }
            out.push('\n');
            for i in 0..=samples {
                let xi = -reach + 2.0 * reach * i as f64 / samples as f64;
                // The evaluation point lies in element [2e−1, 2e+1].
                let e = ((xi + 1.0) / 2.0).floor() as i32;
                let local = xi - 2.0 * e as f64;
                let (values, _) = element.eval(local.clamp(-1.0, 1.0));
                out.push_str(&format!("{xi:.6}"));
                for &node in &offsets {
                    // Node `node` of the center element is node `node − 2e`
                    // in element e's own frame.
                    let shifted = node - 2 * e;
                    let value = offsets
                        .iter()
                        .position(|&o| o == shifted)
                        .map(|k| values[k])
                        .unwrap_or(0.0);
                    out.push_str(&format!(",{value:.9}"));
                }
                out.push('\n');
            }
        }
        ElementChoice::Q4 | ElementChoice::Q8 => {
            // 1D linear hats of the element nodes at ±1 over their global
            // support [−3, 3].
            out.push_str("xi,N_-1,N_1\n");
            for i in 0..=samples {
                let xi = -3.0 + 6.0 * i as f64 / samples as f64;
                let hat = |c: f64| (1.0 - (xi - c).abs() / 2.0).max(0.0);
                out.push_str(&format!("{xi:.6},{:.9},{:.9}\n", hat(-1.0), hat(1.0)));
            }
        }
    }
    std::fs::write(out_path, out).map_err(|e| Error::io(out_path.to_path_buf(), e))
}

/// `mesh`: export node list and element connectivity as CSV.
pub fn cmd_mesh(zoi: ZoneOfInterest, overrides: &ConfigOverrides, out_path: &Path) -> Result<()> {
    let config = overrides.apply(&DicConfig::default());
    let mesh = build_mesh(zoi, config.element_size)?;
    let conn = build_connectivity(&mesh, &config.element_kind()?);
    export_mesh_csv(&mesh, &conn, out_path)
}

/// Parse `x0,y0,w,h`.
pub fn parse_zoi(s: &str) -> std::result::Result<ZoneOfInterest, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err("expected x0,y0,width,height".into());
    }
    let mut values = [0u32; 4];
    for (v, p) in values.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse()
            .map_err(|_| format!("bad integer {p:?} in zone"))?;
    }
    Ok(ZoneOfInterest::new(values[0], values[1], values[2], values[3]))
}
