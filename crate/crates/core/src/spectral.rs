//! Wavelength grids, hyperspectral cubes and sensor measurements.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, AdisError, Result};

/// Strictly increasing list of sampled wavelengths, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WavelengthGrid {
    lambdas: Vec<f64>,
}

impl WavelengthGrid {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return param_err("wavelength grid needs at least one band");
        }
        if lambdas.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return param_err("wavelengths must be finite and positive");
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return param_err("wavelengths must be strictly increasing");
        }
        Ok(Self { lambdas })
    }

    /// `count` evenly spaced bands from `min` to `max` inclusive (meters).
    pub fn uniform(min: f64, max: f64, count: usize) -> Result<Self> {
        match count {
            0 => param_err("band count must be >= 1"),
            1 => Self::new(vec![min]),
            _ => {
                let step = (max - min) / (count - 1) as f64;
                Self::new((0..count).map(|i| min + step * i as f64).collect())
            }
        }
    }

    /// The 28-band 450–650 nm grid used by the usual simulation protocol.
    pub fn standard_28() -> Self {
        Self::uniform(450e-9, 650e-9, 28).expect("static grid")
    }

    pub fn count(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn min(&self) -> f64 {
        self.lambdas[0]
    }

    pub fn max(&self) -> f64 {
        *self.lambdas.last().unwrap()
    }

    /// Mean spacing between adjacent bands; zero for a single band.
    pub fn mean_step(&self) -> f64 {
        if self.count() < 2 {
            0.0
        } else {
            (self.max() - self.min()) / (self.count() - 1) as f64
        }
    }
}

impl TryFrom<Vec<f64>> for WavelengthGrid {
    type Error = AdisError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WavelengthGrid> for Vec<f64> {
    fn from(g: WavelengthGrid) -> Self {
        g.lambdas
    }
}

/// Hyperspectral cube stored band-planar as `(band, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    grid: WavelengthGrid,
    data: Array3<f64>,
}

impl HsiCube {
    pub fn new(grid: WavelengthGrid, data: Array3<f64>) -> Result<Self> {
        if data.shape()[0] != grid.count() {
            return dim_err(format!(
                "cube has {} bands but grid has {}",
                data.shape()[0],
                grid.count()
            ));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AdisError::Data("cube values must be finite and nonnegative".into()));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: WavelengthGrid, height: usize, width: usize) -> Self {
        let k = grid.count();
        Self {
            grid,
            data: Array3::zeros((k, height, width)),
        }
    }

    /// Builds a cube from possibly-negative values by clamping at zero.
    pub fn from_clamped(grid: WavelengthGrid, mut data: Array3<f64>) -> Result<Self> {
        data.mapv_inplace(|v| v.max(0.0));
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// `(height, width, bands)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height(), self.width(), self.bands())
    }
}

/// A single monochrome sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    data: Array2<f64>,
}

impl Measurement {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AdisError::Data(
                "measurement values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn from_clamped(mut data: Array2<f64>) -> Result<Self> {
        data.mapv_inplace(|v| v.max(0.0));
        Self::new(data)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }
}
