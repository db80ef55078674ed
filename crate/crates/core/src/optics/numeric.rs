//! Fraunhofer propagation of a sampled mask by discrete Fourier transform.
//!
//! The sensor field at `(x, y)` is the mask spectrum at spatial frequency
//! `(x, y) / (λ·f2)`. Both axes are evaluated with a [`Czt`] directly on the
//! (super)sampled pixel grid, and each mask sample is treated as a uniform
//! square, which contributes a `sinc²(δ·f)` factor per axis.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::psf::{bin_samples, check_side, normalize, subsample_positions, within_truncation};
use super::{sinc, Czt, MaskField, OpticsConfig, PsfStack};
use crate::error::{param_err, AdisError, Result};
use crate::spectral::WavelengthGrid;

/// Smallest mask resolution whose sampling band covers the sensor window
/// at `lambda`: `1/(2δ) ≥ x_max / (λ f2)`.
pub fn required_mask_resolution(cfg: &OpticsConfig, side: usize, lambda: f64, extent: f64) -> usize {
    let pos = subsample_positions(side, cfg.supersample, cfg.pixel_pitch);
    let x_max = pos.last().copied().unwrap_or(0.0).abs();
    (2.0 * x_max / (lambda * cfg.f2) * extent).ceil() as usize
}

/// Unnormalised intensity per sensor pixel, truncated to retained orders.
pub fn numeric_intensity(lambda: f64, mask: &MaskField, cfg: &OpticsConfig, side: usize) -> Result<Array2<f64>> {
    check_side(side)?;
    cfg.validate()?;
    if !(lambda > 0.0) {
        return param_err("wavelength must be positive");
    }
    let m = mask.resolution();
    let required = required_mask_resolution(cfg, side, lambda, mask.extent());
    if m < required {
        return Err(AdisError::Sampling { have: m, required });
    }

    let s = cfg.supersample;
    let p = side * s;
    let delta = mask.sample_spacing();
    let freq_step = cfg.pixel_pitch / (s as f64 * lambda * cfg.f2);
    let czt = Czt::new(m, p, freq_step * delta);
    let t = mask.transmission();

    // Along x for every mask row.
    let rows: Vec<Vec<Complex64>> = t
        .axis_iter(Axis(0))
        .into_par_iter()
        .map_init(
            || vec![Complex64::new(0.0, 0.0); czt.scratch_len()],
            |scratch, row| {
                let input: Vec<Complex64> = row.iter().copied().collect();
                let mut out = vec![Complex64::new(0.0, 0.0); p];
                czt.process(&input, &mut out, scratch);
                out
            },
        )
        .collect();

    // Along y for every output column.
    let cols: Vec<Vec<Complex64>> = (0..p)
        .into_par_iter()
        .map_init(
            || vec![Complex64::new(0.0, 0.0); czt.scratch_len()],
            |scratch, col| {
                let input: Vec<Complex64> = rows.iter().map(|r| r[col]).collect();
                let mut out = vec![Complex64::new(0.0, 0.0); p];
                czt.process(&input, &mut out, scratch);
                out
            },
        )
        .collect();

    let pos = subsample_positions(side, s, cfg.pixel_pitch);
    let footprint: Vec<f64> = pos
        .iter()
        .map(|x| sinc(delta * x / (lambda * cfg.f2)).powi(2))
        .collect();
    let mut samples = Array2::zeros((p, p));
    for (i, &y) in pos.iter().enumerate() {
        for (j, &x) in pos.iter().enumerate() {
            if within_truncation(cfg, x, y, lambda) {
                samples[[i, j]] = cols[j][i].norm_sqr() * footprint[i] * footprint[j];
            }
        }
    }
    Ok(bin_samples(&samples, side, s))
}

/// Numeric PSF: [`numeric_intensity`] normalised to unit sum.
pub fn psf_numeric(lambda: f64, mask: &MaskField, cfg: &OpticsConfig, side: usize) -> Result<Array2<f64>> {
    normalize(numeric_intensity(lambda, mask, cfg, side)?)
}

/// PSF for a point source at distance `z` in front of the mask: the
/// transmission picks up the spherical-wave factor `(Z/ξ)·exp(ik(ξ − Z))`,
/// `ξ = √(x² + y² + Z²)`, before propagation.
pub fn depth_psf(mask: &MaskField, cfg: &OpticsConfig, z: f64, lambda: f64, side: usize) -> Result<Array2<f64>> {
    if !(z > cfg.f2) {
        return param_err(format!("source depth {z} must exceed f2 = {}", cfg.f2));
    }
    let k = 2.0 * std::f64::consts::PI / lambda;
    let lit = mask.modulated(|x, y| {
        let r2 = x * x + y * y;
        let xi = (r2 + z * z).sqrt();
        // ξ − Z without cancellation
        let path = r2 / (xi + z);
        Complex64::from_polar(z / xi, k * path)
    });
    psf_numeric(lambda, &lit, cfg, side)
}

/// Numeric counterpart of [`super::build_psf_stack`] for an arbitrary mask.
pub fn build_psf_stack_numeric(
    mask: &MaskField,
    cfg: &OpticsConfig,
    grid: &WavelengthGrid,
    side: usize,
) -> Result<PsfStack> {
    let kernels = grid
        .lambdas()
        .iter()
        .map(|&lam| psf_numeric(lam, mask, cfg, side))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = kernels.iter().map(|k| k.view()).collect();
    let stacked = ndarray::stack(Axis(0), &views).expect("equal kernel shapes");
    PsfStack::new(grid.clone(), stacked, cfg.pixel_pitch, cfg.order_truncation)
}
