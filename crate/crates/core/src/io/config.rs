use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::csst::{ModelConfig, TrainConfig};
use crate::error::{param_err, AdisError, Result};
use crate::optics::{build_psf_stack, minimum_side, MaskField, OpticsConfig, PsfStack, DEFAULT_DISPERSION_STEP_PX};
use crate::recon::SolverConfig;
use crate::sensor::{Boundary, ForwardOperator, MosaicPattern, NoiseModel};
use crate::spectral::WavelengthGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min_nm: f64,
    pub max_nm: f64,
    pub bands: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            min_nm: 450.0,
            max_nm: 650.0,
            bands: 28,
        }
    }
}

impl GridSpec {
    pub fn grid(&self) -> Result<WavelengthGrid> {
        WavelengthGrid::uniform(self.min_nm * 1e-9, self.max_nm * 1e-9, self.bands)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsfMethod {
    Analytic,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsfSpec {
    /// Kernel side in pixels; the smallest side holding the retained orders
    /// when absent.
    pub side: Option<usize>,
    pub method: PsfMethod,
    /// Mask samples per slit period for the numeric method.
    pub samples_per_period: usize,
    /// Opaque periods added around the numeric mask.
    pub padding_periods: usize,
    /// When set, the pixel pitch is recomputed so the first order moves by
    /// this many pixels between adjacent bands.
    pub dispersion_step_px: Option<f64>,
}

impl Default for PsfSpec {
    fn default() -> Self {
        Self {
            side: None,
            method: PsfMethod::Analytic,
            samples_per_period: 12,
            padding_periods: 0,
            dispersion_step_px: Some(DEFAULT_DISPERSION_STEP_PX),
        }
    }
}

/// Everything a CLI run depends on. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub optics: OpticsConfig,
    pub grid: GridSpec,
    /// Preset name, ignored when `mosaic_file` is set.
    pub mosaic: String,
    pub mosaic_file: Option<PathBuf>,
    pub psf: PsfSpec,
    pub boundary: Boundary,
    pub noise: Option<NoiseModel>,
    pub solver: SolverConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optics: OpticsConfig::default(),
            grid: GridSpec::default(),
            mosaic: "all-pass".into(),
            mosaic_file: None,
            psf: PsfSpec::default(),
            boundary: Boundary::Same,
            noise: None,
            solver: SolverConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.grid.grid()?;
        self.model.validate()?;
        if self.psf.samples_per_period < 2 {
            return param_err("samples_per_period must be >= 2");
        }
        if let Some(s) = self.psf.side {
            if s % 2 == 0 {
                return param_err(format!("psf side must be odd, got {s}"));
            }
        }
        Ok(())
    }

    pub fn wavelength_grid(&self) -> Result<WavelengthGrid> {
        self.grid.grid()
    }

    /// Optics with the pixel pitch adjusted for the configured dispersion
    /// step.
    pub fn resolved_optics(&self) -> Result<OpticsConfig> {
        let grid = self.wavelength_grid()?;
        match self.psf.dispersion_step_px {
            Some(step) if grid.count() >= 2 => self.optics.clone().with_dispersion_step(&grid, step),
            _ => Ok(self.optics.clone()),
        }
    }

    pub fn mosaic_pattern(&self) -> Result<MosaicPattern> {
        let grid = self.wavelength_grid()?;
        let m = match &self.mosaic_file {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str::<MosaicPattern>(&text)?
            }
            None => MosaicPattern::preset(&self.mosaic, &grid)?,
        };
        if m.bands() != grid.count() {
            return Err(AdisError::Dimension(format!(
                "mosaic has {} bands, grid {}",
                m.bands(),
                grid.count()
            )));
        }
        Ok(m)
    }

    pub fn psf_side(&self, optics: &OpticsConfig, grid: &WavelengthGrid) -> Result<usize> {
        match (self.psf.side, minimum_side(optics, grid.max())) {
            (Some(s), _) => Ok(s),
            (None, Some(s)) => Ok(s),
            (None, None) => param_err("psf.side is required when order_truncation is null"),
        }
    }

    pub fn psf_stack(&self) -> Result<PsfStack> {
        let optics = self.resolved_optics()?;
        let grid = self.wavelength_grid()?;
        let side = self.psf_side(&optics, &grid)?;
        match self.psf.method {
            PsfMethod::Analytic => build_psf_stack(&optics, &grid, side),
            PsfMethod::Numeric => {
                let mask = MaskField::orthogonal(&optics, self.psf.samples_per_period, self.psf.padding_periods)?;
                crate::optics::build_psf_stack_numeric(&mask, &optics, &grid, side)
            }
        }
    }

    /// Operator for cubes of `height × width` with the given kernels.
    pub fn operator(&self, psf: PsfStack, height: usize, width: usize) -> Result<ForwardOperator> {
        ForwardOperator::new(psf, self.mosaic_pattern()?, height, width, self.boundary)
    }
}
