//! `adis`: simulate and reconstruct aperture-diffraction snapshot spectral
//! images from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure. `ADIS_THREADS` caps the worker pool.

mod checks;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use adis_core::io::{PsfMethod, RunConfig, SceneKind};
use adis_core::{AdisError, Boundary};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "adis",
    version,
    about = "Aperture-diffraction snapshot spectral imaging toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run configuration: a JSON file plus flag overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the number of bands on the 450-650 nm grid.
    #[arg(long)]
    pub bands: Option<usize>,
    /// Override the mosaic preset (all-pass, bayer, 3x3, 4x4).
    #[arg(long)]
    pub mosaic: Option<String>,
    #[arg(long, value_enum)]
    pub boundary: Option<BoundaryArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum BoundaryArg {
    Valid,
    Same,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum PsfMethodArg {
    Analytic,
    Numeric,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fista,
    Csst,
    /// Least-squares scaled adjoint, the starting point of both solvers.
    Adjoint,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scene {
    Deltas,
    Patches,
    GradientSpectra,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckTarget {
    All,
    Primitives,
    Ssab,
    Copf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitArg {
    Random,
    Residual,
    Identity,
}

impl ConfigArgs {
    pub fn resolve(&self) -> adis_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(b) = self.bands {
            cfg.grid.bands = b;
        }
        if let Some(m) = &self.mosaic {
            cfg.mosaic = m.clone();
            cfg.mosaic_file = None;
        }
        if let Some(b) = self.boundary {
            cfg.boundary = match b {
                BoundaryArg::Valid => Boundary::Valid,
                BoundaryArg::Same => Boundary::Same,
            };
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<PsfMethodArg> for PsfMethod {
    fn from(m: PsfMethodArg) -> Self {
        match m {
            PsfMethodArg::Analytic => PsfMethod::Analytic,
            PsfMethodArg::Numeric => PsfMethod::Numeric,
        }
    }
}

impl From<Scene> for SceneKind {
    fn from(s: Scene) -> Self {
        match s {
            Scene::Deltas => SceneKind::Deltas,
            Scene::Patches => SceneKind::Patches,
            Scene::GradientSpectra => SceneKind::GradientSpectra,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the diffraction order table and dispersion for a mask geometry.
    DesignMask(commands::DesignMaskArgs),
    /// Build the per-band PSF stack and write it to disk.
    Psf(commands::PsfArgs),
    /// Generate a synthetic hyperspectral cube.
    Synth(commands::SynthArgs),
    /// Apply the forward model to a cube.
    Simulate(commands::SimulateArgs),
    /// Recover a cube from a measurement.
    ///
    /// PSNR in the metrics uses the maximum of the reference cube as its
    /// peak, so cubes need not be scaled to [0, 1].
    Reconstruct(commands::ReconstructArgs),
    /// Compare a cube against a reference (PSNR peak = reference maximum).
    Eval(commands::EvalArgs),
    /// Check reverse-mode gradients against finite differences.
    Gradcheck(commands::GradcheckArgs),
    /// Train a small unfolding network on synthetic pairs.
    TrainToy(commands::TrainToyArgs),
}

fn init_threads() -> adis_core::Result<()> {
    let Ok(v) = std::env::var("ADIS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| AdisError::Parameter(format!("ADIS_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| AdisError::Parameter(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> adis_core::Result<()> {
    init_threads()?;
    match cli.command {
        Command::DesignMask(a) => commands::design_mask(&a),
        Command::Psf(a) => commands::psf(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::TrainToy(a) => commands::train_toy(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
