use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::spectral::Measurement;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseModel {
    /// Additive white Gaussian noise with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Shot noise: values are scaled by `peak`, Poisson-sampled, rescaled.
    Poisson { peak: f64 },
    /// Shot noise followed by additive Gaussian read noise.
    Mixed { sigma: f64, peak: f64 },
}

impl NoiseModel {
    fn validate(&self) -> Result<()> {
        let (sigma, peak) = match *self {
            NoiseModel::Gaussian { sigma } => (Some(sigma), None),
            NoiseModel::Poisson { peak } => (None, Some(peak)),
            NoiseModel::Mixed { sigma, peak } => (Some(sigma), Some(peak)),
        };
        if let Some(s) = sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return param_err(format!("noise sigma must be >= 0, got {s}"));
            }
        }
        if let Some(p) = peak {
            if !(p > 0.0 && p.is_finite()) {
                return param_err(format!("poisson peak must be > 0, got {p}"));
            }
        }
        Ok(())
    }
}

/// Returns a noisy copy of `meas`, clamped at zero. Deterministic in `seed`.
pub fn add_noise(meas: &Measurement, model: NoiseModel, seed: u64) -> Result<Measurement> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Array2<f64> = meas.data().clone();
    let shot = |v: f64, peak: f64, rng: &mut ChaCha8Rng| -> f64 {
        let lam = v * peak;
        if lam <= 0.0 {
            0.0
        } else {
            Poisson::new(lam).expect("positive rate").sample(rng) / peak
        }
    };
    match model {
        NoiseModel::Gaussian { sigma } => {
            if sigma > 0.0 {
                let n = Normal::new(0.0, sigma).expect("valid sigma");
                out.mapv_inplace(|v| v + n.sample(&mut rng));
            }
        }
        NoiseModel::Poisson { peak } => {
            out.mapv_inplace(|v| shot(v, peak, &mut rng));
        }
        NoiseModel::Mixed { sigma, peak } => {
            let n = Normal::new(0.0, sigma).expect("valid sigma");
            out.mapv_inplace(|v| shot(v, peak, &mut rng) + n.sample(&mut rng));
        }
    }
    Measurement::from_clamped(out)
}
