use std::str::FromStr;

use ndarray::{Array1, Array3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, AdisError, Result};
use crate::spectral::{HsiCube, WavelengthGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Isolated points with a flat unit spectrum.
    Deltas,
    /// Piecewise-constant patches with smooth random spectra.
    Patches,
    /// Peak wavelength ramps along x, brightness along y.
    GradientSpectra,
}

impl FromStr for SceneKind {
    type Err = AdisError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deltas" => Ok(Self::Deltas),
            "patches" => Ok(Self::Patches),
            "gradient-spectra" => Ok(Self::GradientSpectra),
            other => param_err(format!("unknown scene '{other}' (deltas, patches, gradient-spectra)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    /// Number of points in a `deltas` scene.
    pub points: usize,
    /// Patches per side in a `patches` scene.
    pub patch_grid: usize,
    /// Upper bound on |s[k+1] − 2 s[k] + s[k−1]| for patch spectra.
    pub max_second_difference: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            points: 1,
            patch_grid: 4,
            max_second_difference: 0.05,
        }
    }
}

pub fn synth_scene(kind: SceneKind, height: usize, width: usize, grid: &WavelengthGrid, seed: u64) -> Result<HsiCube> {
    synth_scene_with(kind, height, width, grid, seed, &SynthOptions::default())
}

pub fn synth_scene_with(
    kind: SceneKind,
    height: usize,
    width: usize,
    grid: &WavelengthGrid,
    seed: u64,
    opts: &SynthOptions,
) -> Result<HsiCube> {
    if height == 0 || width == 0 {
        return param_err("scene must be at least 1x1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = grid.count();
    let mut data = Array3::zeros((k, height, width));
    match kind {
        SceneKind::Deltas => {
            if opts.points == 0 || opts.points > height * width {
                return param_err(format!("cannot place {} points in {height}x{width}", opts.points));
            }
            for idx in sample(&mut rng, height * width, opts.points) {
                let (i, j) = (idx / width, idx % width);
                data.slice_mut(ndarray::s![.., i, j]).fill(1.0);
            }
        }
        SceneKind::Patches => {
            let p = opts.patch_grid;
            if p == 0 || p > height.min(width) {
                return param_err(format!("patch grid {p} does not fit {height}x{width}"));
            }
            if !(opts.max_second_difference > 0.0) {
                return param_err("max_second_difference must be positive");
            }
            let spectra: Vec<Array1<f64>> = (0..p * p)
                .map(|_| smooth_spectrum(&mut rng, grid, opts.max_second_difference))
                .collect();
            for i in 0..height {
                for j in 0..width {
                    let s = &spectra[(i * p / height) * p + j * p / width];
                    data.slice_mut(ndarray::s![.., i, j]).assign(s);
                }
            }
        }
        SceneKind::GradientSpectra => {
            let (lo, span) = (grid.min(), (grid.max() - grid.min()).max(1e-9));
            let sigma = 0.25 * span;
            for j in 0..width {
                let centre = lo + span * j as f64 / (width.max(2) - 1) as f64;
                for i in 0..height {
                    let gain = 0.3 + 0.7 * i as f64 / (height.max(2) - 1) as f64;
                    for (b, &l) in grid.lambdas().iter().enumerate() {
                        data[[b, i, j]] = gain * (-(l - centre).powi(2) / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
        }
    }
    HsiCube::new(grid.clone(), data)
}

/// Baseline plus two broad Gaussian bumps, shrunk toward its mean until the
/// curvature bound holds. Values stay in [0, 1].
fn smooth_spectrum(rng: &mut ChaCha8Rng, grid: &WavelengthGrid, bound: f64) -> Array1<f64> {
    let (lo, span) = (grid.min(), (grid.max() - grid.min()).max(1e-9));
    let base = rng.random_range(0.05..0.3);
    let bumps: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.0..0.35),
                lo + span * rng.random_range(-0.1..1.1),
                span * rng.random_range(0.2..0.5),
            )
        })
        .collect();
    let mut s: Array1<f64> = grid
        .lambdas()
        .iter()
        .map(|&l| {
            base + bumps
                .iter()
                .map(|&(a, c, w)| a * (-(l - c).powi(2) / (2.0 * w * w)).exp())
                .sum::<f64>()
        })
        .collect();
    let worst = s
        .windows(3)
        .into_iter()
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
        .fold(0.0, f64::max);
    if worst > bound {
        let mean = s.mean().unwrap_or(0.0);
        let shrink = bound / worst;
        s.mapv_inplace(|v| mean + (v - mean) * shrink);
    }
    s
}
