//! `cfe-dic`: global digital image correlation on convolution finite
//! elements. See `README.md` for the workflow.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfe_dic::cli::{self, parse_zoi, ConfigOverrides, SynthPreset};
use cfe_dic::dic::ElementChoice;
use cfe_dic::mesh::ZoneOfInterest;
use cfe_dic::post::Palette;

#[derive(Parser)]
#[command(
    name = "cfe-dic",
    version,
    about = "Full-field displacement and strain measurement from speckle image pairs"
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ElementFlags {
    /// Element family: q4, q8, or cfe.
    #[arg(long, value_parser = parse_element)]
    element: Option<ElementChoice>,
    /// Element size in pixels.
    #[arg(long = "h")]
    element_size: Option<u32>,
    /// Polynomial order of the convolution patch functions.
    #[arg(long = "p")]
    order: Option<u32>,
    /// Patch size in element layers.
    #[arg(long = "s")]
    patch_size: Option<u32>,
    /// Kernel dilation in parametric units.
    #[arg(long = "a")]
    dilation: Option<f64>,
    /// PCG relative residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Number of linearized solves.
    #[arg(long)]
    iters: Option<u32>,
    /// Quadrature points per axis (0 = element size).
    #[arg(long)]
    quad: Option<u32>,
    /// Worker threads (0 = automatic).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed recorded with the run.
    #[arg(long)]
    seed: Option<u64>,
}

impl ElementFlags {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            element: self.element,
            element_size: self.element_size,
            order: self.order,
            patch_size: self.patch_size,
            dilation: self.dilation,
            tol: self.tol,
            refinement_iters: self.iters,
            quad: self.quad,
            threads: self.threads,
            seed: self.seed,
        }
    }
}

fn parse_element(s: &str) -> Result<ElementChoice, String> {
    match s {
        "q4" => Ok(ElementChoice::Q4),
        "q8" => Ok(ElementChoice::Q8),
        "cfe" => Ok(ElementChoice::Cfe),
        other => Err(format!("unknown element {other:?} (expected q4, q8, cfe)")),
    }
}

fn parse_palette(s: &str) -> Result<Palette, String> {
    match s {
        "gray" => Ok(Palette::Gray),
        "viridis" => Ok(Palette::Viridis),
        other => Err(format!("unknown palette {other:?}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Correlate a reference/deformed image pair.
    Run {
        /// Reference image (PNG/PGM/TIFF).
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Deformed image.
        #[arg(long = "def")]
        deformed: PathBuf,
        /// TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Zone of interest as `x0,y0,width,height`.
        #[arg(long, value_parser = parse_zoi)]
        zoi: Option<ZoneOfInterest>,
        /// Ground-truth sidecar (defaults to truth.json next to the images).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Field-export sampling stride in pixels.
        #[arg(long, default_value_t = 1)]
        stride: u32,
        /// Heatmap palette: gray or viridis.
        #[arg(long, default_value = "viridis", value_parser = parse_palette)]
        palette: Palette,
        #[command(flatten)]
        flags: ElementFlags,
    },
    /// Generate a synthetic benchmark pair with ground truth.
    Synth {
        /// Preset: example1, example2, star-like, translation.
        #[arg(long)]
        preset: SynthPreset,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Additive Gaussian noise level.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Evaluate a stored solution against ground truth.
    Metrics {
        /// solution.json from a run.
        #[arg(long)]
        solution: PathBuf,
        /// truth.json from synth.
        #[arg(long)]
        truth: PathBuf,
        /// Noise-floor solution.json for the measurement resolution.
        #[arg(long = "mr-solution")]
        mr_solution: Option<PathBuf>,
        /// Extract spatial resolution (star-like fixtures only).
        #[arg(long)]
        sr: bool,
        /// Gauss integration order for the relative L2 error.
        #[arg(long, default_value_t = 4)]
        gauss: usize,
        #[arg(long, default_value = "metrics")]
        out: PathBuf,
    },
    /// Dump 1D shape-function curves as CSV.
    Shapes {
        #[arg(long, default_value = "cfe", value_parser = parse_element)]
        element: ElementChoice,
        #[arg(long = "p", default_value_t = 2)]
        order: u32,
        #[arg(long = "s", default_value_t = 2)]
        patch_size: u32,
        #[arg(long = "a", default_value_t = 2.0)]
        dilation: f64,
        /// Sample count along the curve.
        #[arg(long, default_value_t = 800)]
        samples: usize,
        #[arg(long, default_value = "shapes.csv")]
        out: PathBuf,
    },
    /// Export mesh nodes and connectivity as CSV.
    Mesh {
        #[arg(long, value_parser = parse_zoi)]
        zoi: ZoneOfInterest,
        #[arg(long, default_value = "mesh.csv")]
        out: PathBuf,
        #[command(flatten)]
        flags: ElementFlags,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let args = CliArgs::parse();
    let result = match args.command {
        Command::Run {
            reference,
            deformed,
            config,
            zoi,
            truth,
            out,
            stride,
            palette,
            flags,
        } => cli::cmd_run(
            &reference,
            &deformed,
            config.as_deref(),
            &flags.overrides(),
            zoi,
            truth.as_deref(),
            &out,
            stride,
            palette,
        ),
        Command::Synth {
            preset,
            seed,
            noise,
            out,
        } => cli::cmd_synth(preset, seed, noise, &out),
        Command::Metrics {
            solution,
            truth,
            mr_solution,
            sr,
            gauss,
            out,
        } => cli::cmd_metrics(&solution, &truth, mr_solution.as_deref(), sr, gauss, &out),
        Command::Shapes {
            element,
            order,
            patch_size,
            dilation,
            samples,
            out,
        } => cli::cmd_shapes(element, order, patch_size, dilation, samples, &out),
        Command::Mesh { zoi, out, flags } => cli::cmd_mesh(zoi, &flags.overrides(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Machine-readable error on stdout, human-readable on stderr.
            println!(
                "{}",
                serde_json::json!({ "kind": err.kind(), "message": err.to_string() })
            );
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
