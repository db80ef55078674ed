//! Desk-scale unfolding network: a step-size estimator, shift/shuffle
//! spectral attention blocks, a U-shaped denoiser and the unrolled loop.

mod attention;
mod copf;
mod qpenet;
mod sst;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{param_err, Result};

pub use attention::{
    chw_to_tokens, spectral_attention, ssab_forward, ssmsa_stage1, ssmsa_stage2, tokens_to_chw, AttnOpts, SsabParams,
};
pub use copf::{band_groups, copf_forward, filter_prior, psf_prior, CopfInputs, CopfModel, PRIOR_GROUPS};
pub use qpenet::{qpenet_forward, QpeParams, QPE_CONV_WIDTH, QPE_FC_WIDTH, QPE_INPUTS};
pub use sst::{sst_forward, SstParams};
pub use train::{train_toy, Optimizer, TrainConfig, TrainSample};

pub const LN_EPS: f64 = 1e-5;

/// How fresh parameters are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Every weight random; used for gradient checks.
    Random,
    /// Denoiser output convolutions zeroed, so every stage starts as the
    /// identity after its data step.
    Residual,
    /// As `Residual` with the step maps pinned near zero: the whole model
    /// returns its starting estimate.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Unrolled stages `k`.
    pub stages: usize,
    /// Feature width `C` at the top level of the denoiser.
    pub channels: usize,
    /// One denoiser shared by all stages.
    pub share_denoiser: bool,
    /// Circular score shift per axis; 0 disables the shift.
    pub shift_step: usize,
    /// Channel-shuffle groups in the second attention stage.
    pub shuffle_groups: usize,
    pub init: InitKind,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stages: 2,
            channels: 8,
            share_denoiser: false,
            shift_step: 1,
            shuffle_groups: 2,
            init: InitKind::Residual,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return param_err("stage count must be >= 1");
        }
        if self.channels == 0 || self.channels % 2 != 0 {
            return param_err(format!("channel count {} must be even and positive", self.channels));
        }
        if self.shuffle_groups == 0 || (self.channels / 2) % self.shuffle_groups != 0 {
            return param_err(format!(
                "{} shuffle groups do not divide the {}-channel half",
                self.shuffle_groups,
                self.channels / 2
            ));
        }
        Ok(())
    }

    /// Fields that determine the parameter layout. The shift is a pure
    /// permutation and carries no weights, so it is left out.
    pub fn architecture(&self, bands: usize) -> serde_json::Value {
        serde_json::json!({
            "bands": bands,
            "stages": self.stages,
            "channels": self.channels,
            "share_denoiser": self.share_denoiser,
            "shuffle_groups": self.shuffle_groups,
        })
    }

    pub fn attn_opts(&self) -> AttnOpts {
        AttnOpts {
            shift: self.shift_step as isize,
            groups: self.shuffle_groups,
        }
    }
}

/// Adds freshly initialised tensors to a store.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn(shape, |_| dist.sample(&mut self.rng));
        self.store.add(name, t)
    }

    /// Fan-in scaled weight; `zero` replaces it with zeros.
    pub fn weight(&mut self, name: String, shape: &[usize], fan_in: usize, zero: bool) -> Result<ParamId> {
        if zero {
            // draw anyway so later tensors do not depend on `zero`
            let _ = Tensor::from_fn(shape, |_| -> f64 { StandardNormal.sample(&mut self.rng) });
            return self.store.add(name, Tensor::zeros(shape));
        }
        self.normal(name, shape, 1.0 / (fan_in as f64).sqrt())
    }

    pub fn full(&mut self, name: String, shape: &[usize], v: f64) -> Result<ParamId> {
        self.store.add(name, Tensor::full(shape, v))
    }
}

/// `t · w + b` for tokens `t: (N, in)`, `w: (in, out)`, `b: (out)`.
pub(crate) fn dense(g: &mut Graph, b: &Bound, t: Var, w: ParamId, bias: Option<ParamId>) -> Result<Var> {
    let y = g.matmul(t, b[w])?;
    match bias {
        Some(bi) => g.add_along(y, b[bi], 1),
        None => Ok(y),
    }
}

/// Same-padded convolution plus per-channel bias on `(C, H, W)`.
pub(crate) fn conv(g: &mut Graph, b: &Bound, x: Var, w: ParamId, bias: Option<ParamId>) -> Result<Var> {
    let y = g.conv2d(x, b[w])?;
    match bias {
        Some(bi) => g.add_along(y, b[bi], 0),
        None => Ok(y),
    }
}
