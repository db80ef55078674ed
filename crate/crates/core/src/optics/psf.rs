use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use super::OpticsConfig;
use crate::error::{dim_err, param_err, AdisError, Result};
use crate::spectral::WavelengthGrid;

pub const PSF_SUM_TOLERANCE: f64 = 1e-9;

/// Per-band PSF kernels on the sensor grid, each summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    grid: WavelengthGrid,
    kernels: Array3<f64>,
    pixel_pitch: f64,
    order_truncation: Option<usize>,
}

impl PsfStack {
    pub fn new(
        grid: WavelengthGrid,
        kernels: Array3<f64>,
        pixel_pitch: f64,
        order_truncation: Option<usize>,
    ) -> Result<Self> {
        let (k, s, s2) = kernels.dim();
        if k != grid.count() {
            return dim_err(format!("{k} kernels for {} bands", grid.count()));
        }
        if s != s2 || s % 2 == 0 {
            return param_err(format!("kernels must be square with odd side, got {s}x{s2}"));
        }
        for (band, kern) in kernels.axis_iter(Axis(0)).enumerate() {
            if kern.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(AdisError::Data(format!("kernel {band} not finite/nonnegative")));
            }
            let sum = kern.sum();
            if (sum - 1.0).abs() > PSF_SUM_TOLERANCE {
                return Err(AdisError::Data(format!("kernel {band} sums to {sum}")));
            }
        }
        Ok(Self {
            grid,
            kernels,
            pixel_pitch,
            order_truncation,
        })
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn side(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn bands(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn kernels(&self) -> &Array3<f64> {
        &self.kernels
    }

    pub fn kernel(&self, band: usize) -> ArrayView2<'_, f64> {
        self.kernels.index_axis(Axis(0), band)
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn order_truncation(&self) -> Option<usize> {
        self.order_truncation
    }

    /// Intensity-weighted x position (pixels from center) of the +1 order
    /// lobe in each band. The lobe window spans half an order spacing on
    /// either side of the nominal first-order position.
    pub fn first_order_centroids(&self, cfg: &OpticsConfig) -> Vec<f64> {
        let s = self.side();
        let c = (s as f64 - 1.0) / 2.0;
        self.grid
            .lambdas()
            .iter()
            .enumerate()
            .map(|(band, &lam)| {
                let spacing = cfg.order_spacing(lam) / self.pixel_pitch;
                let kern = self.kernel(band);
                let (mut m0, mut m1) = (0.0, 0.0);
                for i in 0..s {
                    let y = i as f64 - c;
                    if y.abs() > 0.5 * spacing {
                        continue;
                    }
                    for j in 0..s {
                        let x = j as f64 - c;
                        if (x - spacing).abs() <= 0.5 * spacing {
                            m0 += kern[[i, j]];
                            m1 += kern[[i, j]] * x;
                        }
                    }
                }
                if m0 > 0.0 {
                    m1 / m0
                } else {
                    f64::NAN
                }
            })
            .collect()
    }

    /// Mean shift of the first-order centroid between adjacent bands (px).
    pub fn mean_dispersion_step(&self, cfg: &OpticsConfig) -> Option<f64> {
        let c = self.first_order_centroids(cfg);
        if c.len() < 2 {
            return None;
        }
        Some((c[c.len() - 1] - c[0]) / (c.len() - 1) as f64)
    }

    /// Checks every adjacent-band centroid shift is `expected ± tol` pixels.
    pub fn verify_dispersion_step(&self, cfg: &OpticsConfig, expected: f64, tol: f64) -> Result<()> {
        let c = self.first_order_centroids(cfg);
        for (i, w) in c.windows(2).enumerate() {
            let step = w[1] - w[0];
            if !((step - expected).abs() <= tol) {
                return Err(AdisError::Precondition(format!(
                    "first-order shift between bands {i} and {} is {step:.4} px, expected {expected} ± {tol}",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Sub-sample positions along one sensor axis (m), centered on the middle
/// pixel. Pixel `j` owns samples `j·s .. (j+1)·s`.
pub(crate) fn subsample_positions(side: usize, supersample: usize, pitch: f64) -> Vec<f64> {
    let n = side * supersample;
    let c = (n as f64 - 1.0) / 2.0;
    let step = pitch / supersample as f64;
    (0..n).map(|t| (t as f64 - c) * step).collect()
}

/// Whether a sensor position lies within the retained diffraction orders.
pub(crate) fn within_truncation(cfg: &OpticsConfig, x: f64, y: f64, lambda: f64) -> bool {
    match cfg.order_truncation {
        None => true,
        Some(t) => {
            let lim = t as f64 + 0.5;
            cfg.order_coordinate(x, lambda).abs() <= lim && cfg.order_coordinate(y, lambda).abs() <= lim
        }
    }
}

/// Box-averages an `(side·s)²` sample grid into `side²` pixels.
pub(crate) fn bin_samples(samples: &Array2<f64>, side: usize, s: usize) -> Array2<f64> {
    let mut out = Array2::zeros((side, side));
    for ((i, j), v) in samples.indexed_iter() {
        out[[i / s, j / s]] += *v;
    }
    out.mapv_inplace(|v| v / (s * s) as f64);
    out
}

pub(crate) fn normalize(mut img: Array2<f64>) -> Result<Array2<f64>> {
    let sum = img.sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(AdisError::Numeric {
            location: format!("psf normalisation (sum = {sum})"),
        });
    }
    img.mapv_inplace(|v| v / sum);
    Ok(img)
}

pub(crate) fn check_side(side: usize) -> Result<()> {
    if side == 0 || side % 2 == 0 {
        return param_err(format!("psf side must be odd, got {side}"));
    }
    Ok(())
}

/// Smallest odd side holding every retained order at `lambda_max`,
/// including half an order spacing around the outermost one.
pub fn minimum_side(cfg: &OpticsConfig, lambda_max: f64) -> Option<usize> {
    let t = cfg.order_truncation? as f64;
    let half = ((t + 0.5) * cfg.order_spacing(lambda_max) / cfg.pixel_pitch).ceil() as usize;
    Some(2 * half + 1)
}

/// Analytic PSF at one wavelength: `D·P` sampled at (super)pixel centres,
/// truncated to the retained orders, box-binned and normalised to sum 1.
pub fn psf_analytic(lambda: f64, cfg: &OpticsConfig, side: usize) -> Result<Array2<f64>> {
    check_side(side)?;
    cfg.validate()?;
    if !(lambda > 0.0) {
        return param_err("wavelength must be positive");
    }
    let s = cfg.supersample;
    let pos = subsample_positions(side, s, cfg.pixel_pitch);
    let n = pos.len();
    let mut samples = Array2::zeros((n, n));
    for (i, &y) in pos.iter().enumerate() {
        for (j, &x) in pos.iter().enumerate() {
            if within_truncation(cfg, x, y, lambda) {
                samples[[i, j]] = cfg.intensity(x, y, lambda);
            }
        }
    }
    normalize(bin_samples(&samples, side, s))
}

/// One analytic kernel per band, computed in parallel.
pub fn build_psf_stack(cfg: &OpticsConfig, grid: &WavelengthGrid, side: usize) -> Result<PsfStack> {
    check_side(side)?;
    cfg.validate()?;
    if let Some(required) = minimum_side(cfg, grid.max()) {
        if side < required {
            return Err(AdisError::Sizing { have: side, required });
        }
    }
    let kernels: Vec<Array2<f64>> = grid
        .lambdas()
        .par_iter()
        .map(|&lam| psf_analytic(lam, cfg, side))
        .collect::<Result<_>>()?;
    let views: Vec<_> = kernels.iter().map(|k| k.view()).collect();
    let stacked = ndarray::stack(Axis(0), &views).expect("equal kernel shapes");
    PsfStack::new(grid.clone(), stacked, cfg.pixel_pitch, cfg.order_truncation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> OpticsConfig {
        let grid = WavelengthGrid::standard_28();
        OpticsConfig {
            n_slits: 16,
            supersample: 2,
            ..OpticsConfig::default()
        }
        .with_dispersion_step(&grid, 0.5)
        .unwrap()
    }

    #[test]
    fn rejects_even_side() {
        assert!(matches!(
            psf_analytic(500e-9, &small_cfg(), 10),
            Err(AdisError::Parameter(_))
        ));
    }

    #[test]
    fn center_is_global_max_and_normalised() {
        let cfg = small_cfg();
        let side = minimum_side(&cfg, 650e-9).unwrap();
        for lam in [450e-9, 550e-9, 650e-9] {
            let k = psf_analytic(lam, &cfg, side).unwrap();
            let c = side / 2;
            let max = k.iter().cloned().fold(0.0, f64::max);
            assert_eq!(k[[c, c]], max);
            assert!((k.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn even_orders_vanish_in_intensity() {
        let cfg = small_cfg();
        let lam = 550e-9;
        let s = cfg.order_spacing(lam);
        let first = cfg.intensity(s, 0.0, lam);
        for (dx, dy) in [(2, 0), (0, 2), (2, 2), (4, 0), (2, 1), (0, 4), (4, 3)] {
            let v = cfg.intensity(dx as f64 * s, dy as f64 * s, lam);
            assert!(v < 1e-6 * first, "order ({dx},{dy}) = {v}");
        }
    }

    #[test]
    fn stack_sizing_error_reports_minimum() {
        let cfg = small_cfg();
        let grid = WavelengthGrid::standard_28();
        let need = minimum_side(&cfg, grid.max()).unwrap();
        match build_psf_stack(&cfg, &grid, need - 2) {
            Err(AdisError::Sizing { required, .. }) => assert_eq!(required, need),
            other => panic!("expected sizing error, got {other:?}"),
        }
    }

    #[test]
    fn single_band_stack() {
        let cfg = small_cfg();
        let grid = WavelengthGrid::new(vec![550e-9]).unwrap();
        let side = minimum_side(&cfg, 550e-9).unwrap();
        let st = build_psf_stack(&cfg, &grid, side).unwrap();
        assert_eq!(st.bands(), 1);
        assert!((st.kernel(0).sum() - 1.0).abs() < 1e-9);
        assert!(st.mean_dispersion_step(&cfg).is_none());
    }

    #[test]
    fn dispersion_step_half_pixel() {
        let cfg = small_cfg();
        let grid = WavelengthGrid::standard_28();
        let side = minimum_side(&cfg, grid.max()).unwrap();
        let st = build_psf_stack(&cfg, &grid, side).unwrap();
        for b in 0..st.bands() {
            assert!((st.kernel(b).sum() - 1.0).abs() < 1e-9);
        }
        st.verify_dispersion_step(&cfg, 0.5, 0.25).unwrap();
        let mean = st.mean_dispersion_step(&cfg).unwrap();
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn subsample_positions_center_pixels() {
        let p = subsample_positions(3, 4, 1.0);
        let centers: Vec<f64> = p.chunks(4).map(|c| c.iter().sum::<f64>() / 4.0).collect();
        assert_eq!(centers, vec![-1.0, 0.0, 1.0]);
    }
}
