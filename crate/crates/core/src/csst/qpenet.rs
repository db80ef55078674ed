use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Var};
use crate::error::{dim_err, param_err, Result};

use super::attention::{chw_to_tokens, tokens_to_chw};
use super::copf::PRIOR_GROUPS;
use super::{conv, dense, Init};

pub const QPE_CONV_WIDTH: usize = 16;
pub const QPE_FC_WIDTH: usize = 64;
/// Back-projected measurement plus the two three-channel priors.
pub const QPE_INPUTS: usize = 1 + 2 * PRIOR_GROUPS;

/// Step-map estimator: conv1×1, conv3×3, then three per-pixel dense layers
/// and a softplus.
#[derive(Debug, Clone)]
pub struct QpeParams {
    pub stages: usize,
    c1_w: ParamId,
    c1_b: ParamId,
    c2_w: ParamId,
    c2_b: ParamId,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
    fc3_w: ParamId,
    fc3_b: ParamId,
}

impl QpeParams {
    /// With `zero_final` the last dense layer starts at zero, so every
    /// output equals `softplus(0)`.
    pub fn new(store: &mut ParamStore, prefix: &str, stages: usize, seed: u64, zero_final: bool) -> Result<Self> {
        Self::with_init(&mut Init::new(store, seed), prefix, stages, zero_final)
    }

    pub(crate) fn with_init(init: &mut Init, prefix: &str, stages: usize, zero_final: bool) -> Result<Self> {
        if stages == 0 {
            return param_err("step estimator needs at least one stage");
        }
        let n = |s: &str| format!("{prefix}.{s}");
        let (cw, fw) = (QPE_CONV_WIDTH, QPE_FC_WIDTH);
        Ok(Self {
            stages,
            c1_w: init.weight(n("conv1.w"), &[cw, QPE_INPUTS, 1, 1], QPE_INPUTS, false)?,
            c1_b: init.full(n("conv1.b"), &[cw], 0.0)?,
            c2_w: init.weight(n("conv2.w"), &[cw, cw, 3, 3], cw * 9, false)?,
            c2_b: init.full(n("conv2.b"), &[cw], 0.0)?,
            fc1_w: init.weight(n("fc1.w"), &[cw, fw], cw, false)?,
            fc1_b: init.full(n("fc1.b"), &[fw], 0.0)?,
            fc2_w: init.weight(n("fc2.w"), &[fw, fw], fw, false)?,
            fc2_b: init.full(n("fc2.b"), &[fw], 0.0)?,
            fc3_w: init.weight(n("fc3.w"), &[fw, stages], fw, zero_final)?,
            fc3_b: init.full(n("fc3.b"), &[stages], 0.0)?,
        })
    }

    /// Pins every output to `value > 0`: last weights zeroed, bias set to
    /// the inverse softplus.
    pub fn set_constant_output(&self, store: &mut ParamStore, value: f64) -> Result<()> {
        if !(value > 0.0) {
            return param_err("constant step must be positive");
        }
        // softplus⁻¹(v) = ln(eᵛ − 1)
        let bias = if value > 30.0 { value } else { value.exp_m1().ln() };
        store.get_mut(self.fc3_w).data_mut().fill(0.0);
        store.get_mut(self.fc3_b).data_mut().fill(bias);
        Ok(())
    }
}

/// Maps `input: (7, H, W)` to positive step maps `(k, H, W)`.
pub fn qpenet_forward(g: &mut Graph, b: &Bound, p: &QpeParams, input: Var) -> Result<Var> {
    let (h, w) = match *g.shape(input) {
        [c, h, w] if c == QPE_INPUTS => (h, w),
        ref s => return dim_err(format!("step estimator expects ({QPE_INPUTS}, H, W), got {s:?}")),
    };
    let x = conv(g, b, input, p.c1_w, Some(p.c1_b))?;
    let x = g.gelu(x);
    let x = conv(g, b, x, p.c2_w, Some(p.c2_b))?;
    let x = g.gelu(x);
    let t = chw_to_tokens(g, x)?;
    let t = dense(g, b, t, p.fc1_w, Some(p.fc1_b))?;
    let t = g.gelu(t);
    let t = dense(g, b, t, p.fc2_w, Some(p.fc2_b))?;
    let t = g.gelu(t);
    let t = dense(g, b, t, p.fc3_w, Some(p.fc3_b))?;
    let t = g.softplus(t);
    tokens_to_chw(g, t, h, w)
}
