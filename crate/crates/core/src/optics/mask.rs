use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::OpticsConfig;
use crate::error::{param_err, Result};

/// Sampled complex transmission of the mask plane.
///
/// Each sample stands for a uniformly transmitting square of side
/// `extent / resolution`; sample `m` is centered at `(m − (M−1)/2)·δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskField {
    transmission: Array2<Complex64>,
    extent: f64,
}

impl MaskField {
    pub fn new(transmission: Array2<Complex64>, extent: f64) -> Result<Self> {
        let (r, c) = transmission.dim();
        if r != c || r == 0 {
            return param_err(format!("mask must be square and non-empty, got {r}x{c}"));
        }
        if !(extent > 0.0) {
            return param_err("mask extent must be positive");
        }
        if transmission.iter().any(|t| !(t.norm() <= 1.0 + 1e-12)) {
            return param_err("mask transmission magnitude must be <= 1");
        }
        Ok(Self { transmission, extent })
    }

    /// Fully open field.
    pub fn open(resolution: usize, extent: f64) -> Result<Self> {
        Self::new(
            Array2::from_elem((resolution, resolution), Complex64::new(1.0, 0.0)),
            extent,
        )
    }

    /// Rasterised `N × N` hole lattice of `cfg`, `samples_per_period` samples
    /// per period, surrounded by `padding_periods` opaque periods on each side.
    ///
    /// Hole sizes must be whole numbers of samples and the lattice must sit
    /// symmetrically about the field center, so that the rasterisation is
    /// exact.
    pub fn orthogonal(cfg: &OpticsConfig, samples_per_period: usize, padding_periods: usize) -> Result<Self> {
        cfg.validate()?;
        let q = samples_per_period;
        if q == 0 {
            return param_err("samples per period must be >= 1");
        }
        let delta = cfg.d / q as f64;
        let whole = |len: f64, name: &str| -> Result<usize> {
            let n = len / delta;
            if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
                return param_err(format!(
                    "{name} = {len:e} m is not a whole number of {delta:e} m samples"
                ));
            }
            Ok(n.round() as usize)
        };
        let holes_x = whole(cfg.b, "b")?;
        let holes_y = whole(cfg.a, "a")?;
        let n = cfg.n_slits;
        let m = (n + 2 * padding_periods) * q;

        let axis = |hole: usize| -> Result<Vec<bool>> {
            let span = (n - 1) * q + hole;
            if (m - span) % 2 != 0 {
                return param_err(format!(
                    "hole of {hole} samples cannot be centered in a {q}-sample period; \
                     choose samples_per_period with the same parity as the hole"
                ));
            }
            let off = (m - span) / 2;
            Ok((0..m)
                .map(|i| i >= off && i < off + span && (i - off) % q < hole)
                .collect())
        };
        let open_x = axis(holes_x)?;
        let open_y = axis(holes_y)?;
        let t = Array2::from_shape_fn((m, m), |(i, j)| {
            if open_y[i] && open_x[j] {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Self::new(t, m as f64 * delta)
    }

    pub fn resolution(&self) -> usize {
        self.transmission.nrows()
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn sample_spacing(&self) -> f64 {
        self.extent / self.resolution() as f64
    }

    pub fn transmission(&self) -> &Array2<Complex64> {
        &self.transmission
    }

    /// Center coordinate (m) of sample index `i` along either axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        (i as f64 - (self.resolution() as f64 - 1.0) / 2.0) * self.sample_spacing()
    }

    /// Mean `|t|²` over the field.
    pub fn open_fraction(&self) -> f64 {
        self.transmission.iter().map(|t| t.norm_sqr()).sum::<f64>() / self.transmission.len() as f64
    }

    /// Babinet complement `1 − t` over the whole field.
    pub fn complement(&self) -> Self {
        Self {
            transmission: self.transmission.mapv(|t| Complex64::new(1.0, 0.0) - t),
            extent: self.extent,
        }
    }

    /// Multiplies the transmission sample-wise by `f(x, y)`.
    pub(crate) fn modulated(&self, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let mut t = self.transmission.clone();
        for ((i, j), v) in t.indexed_iter_mut() {
            *v *= f(self.coordinate(j), self.coordinate(i));
        }
        Self {
            transmission: t,
            extent: self.extent,
        }
    }

    /// Circularly shifts the mask by the sample offset nearest to `(px, py)`.
    pub fn translate(&self, px: f64, py: f64) -> Result<Self> {
        let bound = self.extent / 4.0;
        if !(px.abs() < bound && py.abs() < bound) {
            return param_err(format!(
                "mask shift ({px:e}, {py:e}) must stay below extent/4 = {bound:e}"
            ));
        }
        let m = self.resolution() as isize;
        let dx = (px / self.sample_spacing()).round() as isize;
        let dy = (py / self.sample_spacing()).round() as isize;
        let mut t = Array2::zeros(self.transmission.dim());
        for ((i, j), v) in self.transmission.indexed_iter() {
            let ti = (i as isize + dy).rem_euclid(m) as usize;
            let tj = (j as isize + dx).rem_euclid(m) as usize;
            t[[ti, tj]] = *v;
        }
        Ok(Self {
            transmission: t,
            extent: self.extent,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OpticsConfig {
        OpticsConfig {
            n_slits: 4,
            ..OpticsConfig::default()
        }
    }

    #[test]
    fn orthogonal_mask_is_quarter_open_and_symmetric() {
        let m = MaskField::orthogonal(&cfg(), 12, 0).unwrap();
        assert_eq!(m.resolution(), 48);
        assert_eq!(m.open_fraction(), 0.25);
        let t = m.transmission();
        let r = m.resolution();
        for i in 0..r {
            for j in 0..r {
                assert_eq!(t[[i, j]], t[[r - 1 - i, r - 1 - j]]);
            }
        }
        assert_eq!(m.complement().open_fraction(), 0.75);
    }

    #[test]
    fn parity_and_sampling_errors() {
        assert!(MaskField::orthogonal(&cfg(), 10, 0).is_err()); // 5-sample hole in 10-sample period
        assert!(MaskField::orthogonal(&cfg(), 7, 0).is_err()); // 3.5-sample hole
    }

    #[test]
    fn translation_roundtrip_and_bounds() {
        let m = MaskField::orthogonal(&cfg(), 12, 2).unwrap();
        assert_eq!(m.translate(0.0, 0.0).unwrap(), m);
        let d = 3.3e-6;
        let back = m.translate(d, -2.0 * d).unwrap().translate(-d, 2.0 * d).unwrap();
        assert_eq!(back, m);
        assert!(m.translate(m.extent() / 4.0, 0.0).is_err());
    }

    #[test]
    fn rejects_overunity_transmission() {
        let t = Array2::from_elem((4, 4), Complex64::new(1.5, 0.0));
        assert!(MaskField::new(t, 1e-3).is_err());
    }
}
