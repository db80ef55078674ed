//! Diffraction optics of an orthogonal aperture mask.
//!
//! The far-field intensity of an `N × N` lattice of `b × a` rectangular holes
//! with period `d`, observed at distance `f2`, factors into a single-aperture
//! envelope ([`diffraction_factor`]) and a multi-slit comb
//! ([`interference_factor`]). Sensor coordinates are converted to order
//! coordinates `u = d·x / (λ·f2)`, so integer `u` is a principal maximum.

mod czt;
mod mask;
mod numeric;
mod psf;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, AdisError, Result};
use crate::spectral::WavelengthGrid;

pub use czt::Czt;
pub use mask::MaskField;
pub use numeric::{build_psf_stack_numeric, depth_psf, numeric_intensity, psf_numeric, required_mask_resolution};
pub use psf::{build_psf_stack, minimum_side, psf_analytic, PsfStack, PSF_SUM_TOLERANCE};

/// Below this `|sin γ|` the comb ratio is replaced by its limit `N²`.
pub const SINGULARITY_EPS: f64 = 1e-12;
pub const DEFAULT_ORDER_TRUNCATION: usize = 3;
pub const DEFAULT_DISPERSION_STEP_PX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    /// Aperture width along y (m).
    pub a: f64,
    /// Aperture length along x (m).
    pub b: f64,
    /// Slit period (m).
    pub d: f64,
    /// Slits per axis.
    pub n_slits: usize,
    /// Mask-to-sensor distance (m).
    pub f2: f64,
    /// Sensor pixel size (m).
    pub pixel_pitch: f64,
    #[serde(default = "default_supersample")]
    pub supersample: usize,
    /// Highest diffraction order kept per axis; `None` keeps everything.
    #[serde(default = "default_truncation")]
    pub order_truncation: Option<usize>,
}

fn default_supersample() -> usize {
    1
}

fn default_truncation() -> Option<usize> {
    Some(DEFAULT_ORDER_TRUNCATION)
}

impl Default for OpticsConfig {
    /// 5 µm holes on a 10 µm period, 50 mm to the sensor, with the pixel
    /// pitch giving a 0.5 px first-order shift per band of the 28-band grid.
    fn default() -> Self {
        let mut cfg = Self {
            a: 5e-6,
            b: 5e-6,
            d: 10e-6,
            n_slits: 16,
            f2: 50e-3,
            pixel_pitch: 1.0,
            supersample: 4,
            order_truncation: Some(DEFAULT_ORDER_TRUNCATION),
        };
        cfg.pixel_pitch = cfg.pitch_for_dispersion_step(&WavelengthGrid::standard_28(), DEFAULT_DISPERSION_STEP_PX);
        cfg
    }
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.d, self.f2, self.pixel_pitch]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return param_err("optics parameters must be finite");
        }
        if !(self.a > 0.0 && self.a <= self.d) {
            return param_err(format!("need 0 < a <= d, got a={} d={}", self.a, self.d));
        }
        if !(self.b > 0.0 && self.b <= self.d) {
            return param_err(format!("need 0 < b <= d, got b={} d={}", self.b, self.d));
        }
        if !(self.f2 > 0.0) {
            return param_err("f2 must be positive");
        }
        if !(self.pixel_pitch > 0.0) {
            return param_err("pixel pitch must be positive");
        }
        if self.n_slits < 2 {
            return param_err("need at least 2 slits per axis");
        }
        if self.supersample == 0 {
            return param_err("supersample must be >= 1");
        }
        Ok(())
    }

    /// Pixel pitch that moves the first order by `step_px` pixels between
    /// adjacent bands of `grid`.
    pub fn pitch_for_dispersion_step(&self, grid: &WavelengthGrid, step_px: f64) -> f64 {
        self.f2 * grid.mean_step() / (self.d * step_px)
    }

    pub fn with_dispersion_step(mut self, grid: &WavelengthGrid, step_px: f64) -> Result<Self> {
        if grid.count() < 2 {
            return param_err("dispersion step needs at least two bands");
        }
        if !(step_px > 0.0) {
            return param_err("dispersion step must be positive");
        }
        self.pixel_pitch = self.pitch_for_dispersion_step(grid, step_px);
        Ok(self)
    }

    /// Sensor-plane distance between adjacent interference orders (m).
    pub fn order_spacing(&self, lambda: f64) -> f64 {
        lambda * self.f2 / self.d
    }

    /// `d·x / (λ·f2)`: position in units of diffraction order.
    pub fn order_coordinate(&self, x: f64, lambda: f64) -> f64 {
        self.d * x / (lambda * self.f2)
    }

    /// Relative amplitude of order `order` for the even-suppressing geometry
    /// `a = b = d/2`.
    pub fn order_amplitude(&self, order: u32) -> Result<f64> {
        let half = self.d / 2.0;
        let tol = 1e-9 * self.d;
        if (self.a - half).abs() > tol || (self.b - half).abs() > tol {
            return Err(AdisError::Precondition(format!(
                "order amplitudes need a = b = d/2 (d/2 = {half:e}), got a={:e} b={:e}",
                self.a, self.b
            )));
        }
        Ok(order_amplitude_even_suppressed(order))
    }

    /// `I(x, y, λ) / I0`, the unnormalised far-field intensity.
    pub fn intensity(&self, x: f64, y: f64, lambda: f64) -> f64 {
        diffraction_factor(x, y, lambda, self) * interference_factor(x, y, lambda, self)
    }
}

/// `1` for `D = 0`, `4/(D²π²)` for odd `D`, `0` for even `D > 0`.
pub fn order_amplitude_even_suppressed(order: u32) -> f64 {
    match order {
        0 => 1.0,
        d if d % 2 == 1 => 4.0 / ((d as f64).powi(2) * PI * PI),
        _ => 0.0,
    }
}

/// Normalised sinc, `sin(πu)/(πu)`.
pub fn sinc(u: f64) -> f64 {
    if u == 0.0 {
        1.0
    } else {
        let p = PI * u;
        p.sin() / p
    }
}

/// Single-aperture envelope `sinc²(b·x/(λ f2)) · sinc²(a·y/(λ f2))`.
pub fn diffraction_factor(x: f64, y: f64, lambda: f64, cfg: &OpticsConfig) -> f64 {
    let sx = sinc(cfg.b * x / (lambda * cfg.f2));
    let sy = sinc(cfg.a * y / (lambda * cfg.f2));
    sx * sx * sy * sy
}

/// `[sin(N π u) / sin(π u)]²` for one axis in order coordinates.
///
/// The argument is reduced to the nearest integer order first; the squared
/// ratio is unchanged by that and the small denominator stays accurate.
pub fn comb_factor(u: f64, n: usize) -> f64 {
    let r = u - u.round();
    let s = (PI * r).sin();
    let nf = n as f64;
    if s.abs() < SINGULARITY_EPS {
        nf * nf
    } else {
        let q = (nf * PI * r).sin() / s;
        q * q
    }
}

/// Multi-slit interference comb, product over both axes.
pub fn interference_factor(x: f64, y: f64, lambda: f64, cfg: &OpticsConfig) -> f64 {
    comb_factor(cfg.order_coordinate(x, lambda), cfg.n_slits)
        * comb_factor(cfg.order_coordinate(y, lambda), cfg.n_slits)
}

/// First-order over zero-order intensity for period-to-aperture ratio `m = d/b`.
pub fn zero_first_ratio(m: f64) -> Result<f64> {
    if !(m >= 1.0) || !m.is_finite() {
        return param_err(format!("d/b ratio must be >= 1, got {m}"));
    }
    let v = m / PI * (PI / m).sin();
    Ok(v * v)
}

/// Sensor-plane spread of the first order over the grid: `f2·(λmax−λmin)/d`.
pub fn dispersion_distance(cfg: &OpticsConfig, grid: &WavelengthGrid) -> f64 {
    cfg.f2 * (grid.max() - grid.min()) / cfg.d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> OpticsConfig {
        OpticsConfig {
            n_slits: 16,
            ..OpticsConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        let c = OpticsConfig::default();
        c.validate().unwrap();
        // 200 nm / 27 steps, 0.5 px each.
        let want = 50e-3 * (200e-9 / 27.0) / (10e-6 * 0.5);
        assert!((c.pixel_pitch - want).abs() < 1e-15);
    }

    #[test]
    fn validate_rejects_bad_geometry() {
        let mut c = cfg();
        c.a = 20e-6;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.n_slits = 1;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.f2 = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn diffraction_factor_values() {
        let c = cfg();
        let lam = 550e-9;
        assert_eq!(diffraction_factor(0.0, 0.0, lam, &c), 1.0);
        let x0 = lam * c.f2 / c.b;
        assert!(diffraction_factor(x0, 0.0, lam, &c) < 1e-30);
        // independent re-evaluation at an arbitrary point
        let (x, y) = (1.234e-3, -0.377e-3);
        let ux = PI * c.b * x / (lam * c.f2);
        let uy = PI * c.a * y / (lam * c.f2);
        let want = (ux.sin() / ux).powi(2) * (uy.sin() / uy).powi(2);
        assert!((diffraction_factor(x, y, lam, &c) - want).abs() < 1e-12);
    }

    #[test]
    fn interference_limits() {
        let c = cfg();
        let lam = 600e-9;
        let n4 = (c.n_slits as f64).powi(4);
        assert_eq!(interference_factor(0.0, 0.0, lam, &c), n4);
        let x1 = lam * c.f2 / c.d;
        assert!((interference_factor(x1, 0.0, lam, &c) - n4).abs() < 1e-9 * n4);
        let n2 = (c.n_slits as f64).powi(2);
        for sign in [-1.0, 1.0] {
            let x = (1.0 + sign * 1e-9) * x1;
            let v = comb_factor(c.order_coordinate(x, lam), c.n_slits);
            assert!(((v - n2) / n2).abs() < 1e-4, "{v}");
        }
    }

    #[test]
    fn interference_matches_unreduced_formula_away_from_maxima() {
        let c = cfg();
        let lam = 500e-9;
        let x = 0.37 * lam * c.f2 / c.d;
        let g = PI * c.d * x / (lam * c.f2);
        let n = c.n_slits as f64;
        let want = ((n * g).sin() / g.sin()).powi(2) * n * n;
        assert!((interference_factor(x, 0.0, lam, &c) - want).abs() < 1e-9 * want);
    }

    #[test]
    fn order_amplitudes() {
        let c = cfg();
        assert_eq!(c.order_amplitude(0).unwrap(), 1.0);
        assert!((c.order_amplitude(1).unwrap() - 0.405_284_734_569_351).abs() < 1e-12);
        assert_eq!(c.order_amplitude(2).unwrap(), 0.0);
        assert_eq!(c.order_amplitude(4).unwrap(), 0.0);
        assert!((c.order_amplitude(3).unwrap() - 4.0 / (9.0 * PI * PI)).abs() < 1e-15);
        let bad = OpticsConfig { a: 4e-6, ..cfg() };
        let err = bad.order_amplitude(1).unwrap_err();
        assert!(err.to_string().contains("a = b = d/2"));
    }

    #[test]
    fn order_amplitude_matches_lattice_intensity() {
        let c = cfg();
        let lam = 520e-9;
        let s = c.order_spacing(lam);
        let n4 = (c.n_slits as f64).powi(4);
        for dx in 0..6u32 {
            for dy in 0..6u32 {
                let i = c.intensity(dx as f64 * s, dy as f64 * s, lam);
                let want = n4 * c.order_amplitude(dx).unwrap() * c.order_amplitude(dy).unwrap();
                assert!((i - want).abs() < 1e-9 * n4, "({dx},{dy}) {i} {want}");
            }
        }
    }

    #[test]
    fn zero_first_ratio_values() {
        assert!((zero_first_ratio(2.0).unwrap() - 4.0 / (PI * PI)).abs() < 1e-15);
        assert!(zero_first_ratio(1.0).unwrap().abs() < 1e-30);
        assert!((zero_first_ratio(1e6).unwrap() - 1.0).abs() < 1e-10);
        assert!(zero_first_ratio(0.5).is_err());
    }

    #[test]
    fn dispersion_distance_values() {
        let c = OpticsConfig {
            f2: 50e-3,
            d: 10e-6,
            ..cfg()
        };
        let g = WavelengthGrid::new(vec![450e-9, 650e-9]).unwrap();
        assert!((dispersion_distance(&c, &g) - 1.0e-3).abs() < 1e-15);
        let one = WavelengthGrid::new(vec![500e-9]).unwrap();
        assert_eq!(dispersion_distance(&c, &one), 0.0);
        let c2 = OpticsConfig {
            f2: 100e-3,
            ..c.clone()
        };
        assert!((dispersion_distance(&c2, &g) - 2.0 * dispersion_distance(&c, &g)).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn comb_continuous_at_principal_maxima(order in -6i32..=6, n in 2usize..200, side in prop::bool::ANY) {
            let off = if side { 1e-9 } else { -1e-9 };
            let u = order as f64 * (1.0 + off) + if order == 0 { off } else { 0.0 };
            let n2 = (n * n) as f64;
            let v = comb_factor(u, n);
            prop_assert!(((v - n2) / n2).abs() < 1e-4);
        }

        #[test]
        fn comb_bounded_by_limit(u in -10.0f64..10.0, n in 2usize..100) {
            prop_assert!(comb_factor(u, n) <= (n * n) as f64 * (1.0 + 1e-12));
        }
    }
}
