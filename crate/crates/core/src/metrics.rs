//! Image quality metrics.
//!
//! PSNR uses the reference maximum as the peak. SSIM uses a uniform (box)
//! window evaluated at every fully-contained position, with `k1 = 0.01`,
//! `k2 = 0.03` and the dynamic range taken from the reference.

use ndarray::{ArrayBase, ArrayView2, Axis, Data, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::spectral::HsiCube;

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_SSIM_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub ssim_window: usize,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub ssim_window_kind: WindowKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Box,
}

impl QualityReport {
    /// PSNR over the whole cube and SSIM averaged over bands.
    pub fn compare(reference: &HsiCube, test: &HsiCube) -> Result<Self> {
        let window = DEFAULT_SSIM_WINDOW.min(reference.height()).min(reference.width());
        let window = if window % 2 == 0 { window - 1 } else { window };
        Ok(Self {
            psnr_db: psnr(reference.data(), test.data())?,
            ssim: ssim_cube(reference, test, window)?,
            ssim_window: window,
            ssim_k1: SSIM_K1,
            ssim_k2: SSIM_K2,
            ssim_window_kind: WindowKind::Box,
        })
    }
}

/// Peak signal-to-noise ratio in dB, peak = max of `reference`.
///
/// Returns [`PSNR_CAP_DB`] for identical inputs and never more than that.
pub fn psnr<S, T, D>(reference: &ArrayBase<S, D>, test: &ArrayBase<T, D>) -> Result<f64>
where
    S: Data<Elem = f64>,
    T: Data<Elem = f64>,
    D: Dimension,
{
    if reference.shape() != test.shape() {
        return dim_err(format!(
            "psnr shapes differ: {:?} vs {:?}",
            reference.shape(),
            test.shape()
        ));
    }
    if reference.is_empty() {
        return dim_err("psnr of empty arrays");
    }
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak <= 0.0 {
        return param_err("psnr reference peak must be positive");
    }
    let mse = reference
        .iter()
        .zip(test.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM with the dynamic range taken from the reference
/// (`max - min`, or 1.0 if the reference is constant).
pub fn ssim(reference: ArrayView2<f64>, test: ArrayView2<f64>, window: usize) -> Result<f64> {
    let lo = reference.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    ssim_with_range(reference, test, window, range)
}

/// Mean SSIM over all box windows of side `window` with an explicit range.
pub fn ssim_with_range(reference: ArrayView2<f64>, test: ArrayView2<f64>, window: usize, range: f64) -> Result<f64> {
    windowed_ssim(reference, test, window, range, true)
}

/// Mean of the contrast-structure factor `(2·cov + C2) / (vx + vy + C2)`,
/// i.e. SSIM without the luminance term. Invariant to a common offset.
pub fn ssim_contrast_structure(
    reference: ArrayView2<f64>,
    test: ArrayView2<f64>,
    window: usize,
    range: f64,
) -> Result<f64> {
    windowed_ssim(reference, test, window, range, false)
}

fn windowed_ssim(
    reference: ArrayView2<f64>,
    test: ArrayView2<f64>,
    window: usize,
    range: f64,
    with_luminance: bool,
) -> Result<f64> {
    if reference.shape() != test.shape() {
        return dim_err(format!(
            "ssim shapes differ: {:?} vs {:?}",
            reference.shape(),
            test.shape()
        ));
    }
    let (h, w) = reference.dim();
    if window == 0 || window % 2 == 0 {
        return param_err(format!("ssim window must be odd, got {window}"));
    }
    if window > h.min(w) {
        return param_err(format!("ssim window {window} larger than image {h}x{w}"));
    }
    if !(range > 0.0) {
        return param_err("ssim dynamic range must be positive");
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    // Summed-area tables for x, y, x², y², xy.
    let table = |f: &dyn Fn(f64, f64) -> f64| {
        let mut t = vec![0.0; (h + 1) * (w + 1)];
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += f(reference[[i, j]], test[[i, j]]);
                t[(i + 1) * (w + 1) + j + 1] = t[i * (w + 1) + j + 1] + row;
            }
        }
        t
    };
    let sx = table(&|a, _| a);
    let sy = table(&|_, b| b);
    let sxx = table(&|a, _| a * a);
    let syy = table(&|_, b| b * b);
    let sxy = table(&|a, b| a * b);
    let rect = |t: &[f64], i: usize, j: usize| {
        let (i1, j1) = (i + window, j + window);
        t[i1 * (w + 1) + j1] - t[i * (w + 1) + j1] - t[i1 * (w + 1) + j] + t[i * (w + 1) + j]
    };

    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - window {
        for j in 0..=w - window {
            let mx = rect(&sx, i, j) / n;
            let my = rect(&sy, i, j) / n;
            let vx = rect(&sxx, i, j) / n - mx * mx;
            let vy = rect(&syy, i, j) / n - my * my;
            let cov = rect(&sxy, i, j) / n - mx * my;
            let cs = (2.0 * cov + c2) / (vx + vy + c2);
            total += if with_luminance {
                (2.0 * mx * my + c1) / (mx * mx + my * my + c1) * cs
            } else {
                cs
            };
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM averaged over bands; each band uses its own reference range.
pub fn ssim_cube(reference: &HsiCube, test: &HsiCube, window: usize) -> Result<f64> {
    if reference.data().shape() != test.data().shape() {
        return dim_err("ssim cube shapes differ");
    }
    let mut acc = 0.0;
    for (a, b) in reference.data().axis_iter(Axis(0)).zip(test.data().axis_iter(Axis(0))) {
        acc += ssim(a, b, window)?;
    }
    Ok(acc / reference.bands() as f64)
}
