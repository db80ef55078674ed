use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Chirp-z transform evaluating a centered DFT at an arbitrary frequency
/// spacing:
///
/// `X[p] = Σ_m x[m] · exp(-2πi·α·(p − cp)·(m − cm))`
///
/// with `cm = (M−1)/2`, `cp = (P−1)/2`. Implemented with Bluestein's
/// identity `pm = (p² + m² − (p−m)²)/2` as one FFT convolution.
pub struct Czt {
    inputs: usize,
    outputs: usize,
    len: usize,
    pre: Vec<Complex64>,
    post: Vec<Complex64>,
    chirp_spectrum: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

/// `exp(i·π·alpha·k)` with the phase reduced modulo 2π before scaling.
fn chirp(alpha: f64, k: f64) -> Complex64 {
    let t = (alpha * k) % 2.0;
    Complex64::from_polar(1.0, PI * t)
}

impl Czt {
    pub fn new(inputs: usize, outputs: usize, alpha: f64) -> Self {
        let len = (inputs + outputs - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        let ifft = planner.plan_fft_inverse(len);
        let cm = (inputs as f64 - 1.0) / 2.0;
        let cp = (outputs as f64 - 1.0) / 2.0;

        let pre = (0..inputs)
            .map(|m| {
                let m = m as f64;
                chirp(alpha, -m * m) * chirp(alpha, 2.0 * cp * m)
            })
            .collect();
        let constant = chirp(alpha, -2.0 * cp * cm);
        let post = (0..outputs)
            .map(|p| {
                let p = p as f64;
                chirp(alpha, -p * p) * chirp(alpha, 2.0 * p * cm) * constant / len as f64
            })
            .collect();

        let mut b = vec![Complex64::new(0.0, 0.0); len];
        for k in 0..outputs {
            let kf = k as f64;
            b[k] = chirp(alpha, kf * kf);
        }
        for k in 1..inputs {
            let kf = k as f64;
            b[len - k] = chirp(alpha, kf * kf);
        }
        fft.process(&mut b);

        Self {
            inputs,
            outputs,
            len,
            pre,
            post,
            chirp_spectrum: b,
            fft,
            ifft,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Transforms `input` (length `inputs`) into `out` (length `outputs`).
    /// `scratch` must hold `len()` elements and is overwritten.
    pub fn process(&self, input: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        debug_assert_eq!(input.len(), self.inputs);
        debug_assert_eq!(out.len(), self.outputs);
        scratch.fill(Complex64::new(0.0, 0.0));
        for ((s, x), w) in scratch.iter_mut().zip(input).zip(&self.pre) {
            *s = x * w;
        }
        self.fft.process(scratch);
        for (s, b) in scratch.iter_mut().zip(&self.chirp_spectrum) {
            *s *= b;
        }
        self.ifft.process(scratch);
        for ((o, s), w) in out.iter_mut().zip(scratch.iter()).zip(&self.post) {
            *o = s * w;
        }
    }

    pub fn scratch_len(&self) -> usize {
        self.len
    }
}
