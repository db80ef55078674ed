use crate::autodiff::{shuffle_permutation, Bound, Graph, ParamId, ParamStore, Var};
use crate::error::{dim_err, param_err, AdisError, Result};

use super::{dense, Init, LN_EPS};

/// Runtime switches of the attention blocks; neither carries parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnOpts {
    /// Circular shift of the score matrix along both axes; 0 disables it.
    pub shift: isize,
    /// Channel-shuffle groups for the second half of stage 2.
    pub groups: usize,
}

impl Default for AttnOpts {
    fn default() -> Self {
        Self { shift: 1, groups: 2 }
    }
}

/// `(C, H, W)` feature map to `(H·W, C)` tokens.
pub fn chw_to_tokens(g: &mut Graph, x: Var) -> Result<Var> {
    let (c, n) = match *g.shape(x) {
        [c, h, w] => (c, h * w),
        ref s => return dim_err(format!("expected (C, H, W), got {s:?}")),
    };
    let flat = g.reshape(x, &[c, n])?;
    g.transpose(flat)
}

/// Inverse of [`chw_to_tokens`].
pub fn tokens_to_chw(g: &mut Graph, t: Var, h: usize, w: usize) -> Result<Var> {
    let c = g.shape(t)[1];
    let cn = g.transpose(t)?;
    g.reshape(cn, &[c, h, w])
}

/// Channel attention on `(N, c)` tokens.
///
/// Scores are the `c × c` token-averaged products `QᵀK / (N·√c)` plus the
/// positional table `p`, circularly shifted by `(shift, shift)` before the
/// row softmax. Output row `n` is `Σ_j a[i, j]·v[n, j]`.
pub fn spectral_attention(g: &mut Graph, q: Var, k: Var, v: Var, p: Option<Var>, shift: isize) -> Result<Var> {
    let (n, c) = match *g.shape(q) {
        [n, c] => (n, c),
        ref s => return dim_err(format!("attention tokens must be (N, C), got {s:?}")),
    };
    if g.shape(k) != [n, c] || g.shape(v) != [n, c] {
        return dim_err(format!("q {:?}, k {:?}, v {:?}", g.shape(q), g.shape(k), g.shape(v)));
    }
    let qt = g.transpose(q)?;
    let raw = g.matmul(qt, k)?;
    let mut s = g.scale(raw, 1.0 / (n as f64 * (c as f64).sqrt()));
    if let Some(p) = p {
        s = g.add(s, p)?;
    }
    if shift != 0 {
        s = g.circular_shift(s, shift, shift)?;
    }
    let a = g.softmax_last(s);
    let at = g.transpose(a)?;
    g.matmul(v, at)
}

/// Weights of one shift/shuffle attention block.
#[derive(Debug, Clone)]
pub struct SsabParams {
    pub channels: usize,
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq1: ParamId,
    wk1: ParamId,
    wv1: ParamId,
    p1: ParamId,
    w1: ParamId,
    wq2: ParamId,
    wk2: ParamId,
    wv2: ParamId,
    p2f: ParamId,
    p2s: ParamId,
    w2f: ParamId,
    w2s: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    f1_w: ParamId,
    f1_b: ParamId,
    f2_w: ParamId,
    f2_b: ParamId,
}

impl SsabParams {
    /// Adds a block of width `channels` under `prefix`. With `zero_out` the
    /// output projections start at zero and the block is the identity.
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, seed: u64, zero_out: bool) -> Result<Self> {
        Self::with_init(&mut Init::new(store, seed), prefix, channels, zero_out)
    }

    pub(crate) fn with_init(init: &mut Init, prefix: &str, c: usize, zero_out: bool) -> Result<Self> {
        if c < 2 || c % 2 != 0 {
            return param_err(format!("attention block needs an even channel count, got {c}"));
        }
        let h = c / 2;
        let n = |s: &str| format!("{prefix}.{s}");
        Ok(Self {
            channels: c,
            ln1_g: init.full(n("ln1.gamma"), &[c], 1.0)?,
            ln1_b: init.full(n("ln1.beta"), &[c], 0.0)?,
            wq1: init.weight(n("s1.wq"), &[c, c], c, false)?,
            wk1: init.weight(n("s1.wk"), &[c, c], c, false)?,
            wv1: init.weight(n("s1.wv"), &[c, c], c, false)?,
            p1: init.full(n("s1.pos"), &[c, c], 0.0)?,
            w1: init.weight(n("s1.wo"), &[c, c], c, zero_out)?,
            wq2: init.weight(n("s2.wq"), &[c, c], c, false)?,
            wk2: init.weight(n("s2.wk"), &[c, c], c, false)?,
            wv2: init.weight(n("s2.wv"), &[c, c], c, false)?,
            p2f: init.full(n("s2.pos_f"), &[h, h], 0.0)?,
            p2s: init.full(n("s2.pos_s"), &[h, h], 0.0)?,
            w2f: init.weight(n("s2.wo_f"), &[h, c], h, zero_out)?,
            w2s: init.weight(n("s2.wo_s"), &[h, c], h, zero_out)?,
            ln2_g: init.full(n("ln2.gamma"), &[c], 1.0)?,
            ln2_b: init.full(n("ln2.beta"), &[c], 0.0)?,
            f1_w: init.weight(n("ffn.w1"), &[c, 2 * c], c, false)?,
            f1_b: init.full(n("ffn.b1"), &[2 * c], 0.0)?,
            f2_w: init.weight(n("ffn.w2"), &[2 * c, c], 2 * c, zero_out)?,
            f2_b: init.full(n("ffn.b2"), &[c], 0.0)?,
        })
    }

    /// Randomises the positional tables too (they start at zero otherwise).
    pub fn randomize_positional(&self, store: &mut ParamStore, seed: u64) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.3).expect("std");
        for id in [self.p1, self.p2f, self.p2s] {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = d.sample(&mut rng));
        }
    }
}

fn check_tokens(g: &Graph, t: Var, c: usize) -> Result<()> {
    match *g.shape(t) {
        [_, tc] if tc == c => Ok(()),
        ref s => dim_err(format!("block of width {c} got tokens {s:?}")),
    }
}

/// First attention stage: plain shifted channel attention, projected by `W₁`.
pub fn ssmsa_stage1(g: &mut Graph, b: &Bound, p: &SsabParams, t: Var, opts: AttnOpts) -> Result<Var> {
    check_tokens(g, t, p.channels)?;
    let q = dense(g, b, t, p.wq1, None)?;
    let k = dense(g, b, t, p.wk1, None)?;
    let v = dense(g, b, t, p.wv1, None)?;
    let a = spectral_attention(g, q, k, v, Some(b[p.p1]), opts.shift)?;
    dense(g, b, a, p.w1, None)
}

/// Second attention stage: the projected channels are split in halves; the
/// second half is channel-shuffled before attention and unshuffled after.
/// Both halves are projected back to full width and summed.
pub fn ssmsa_stage2(g: &mut Graph, b: &Bound, p: &SsabParams, t: Var, opts: AttnOpts) -> Result<Var> {
    check_tokens(g, t, p.channels)?;
    let h = p.channels / 2;
    let perm = shuffle_permutation(h, opts.groups)?;
    let mut inv = vec![0; h];
    for (i, &s) in perm.iter().enumerate() {
        inv[s] = i;
    }
    if (0..h).any(|i| perm[inv[i]] != i) {
        return Err(AdisError::Precondition("channel shuffle is not invertible".into()));
    }

    let q = dense(g, b, t, p.wq2, None)?;
    let k = dense(g, b, t, p.wk2, None)?;
    let v = dense(g, b, t, p.wv2, None)?;
    let (qf, kf, vf) = (g.slice(q, 1, 0, h)?, g.slice(k, 1, 0, h)?, g.slice(v, 1, 0, h)?);
    let (qs, ks, vs) = (g.slice(q, 1, h, h)?, g.slice(k, 1, h, h)?, g.slice(v, 1, h, h)?);

    let af = spectral_attention(g, qf, kf, vf, Some(b[p.p2f]), opts.shift)?;
    let of = dense(g, b, af, p.w2f, None)?;

    let qs = g.channel_shuffle(qs, 1, opts.groups)?;
    let ks = g.channel_shuffle(ks, 1, opts.groups)?;
    let vs = g.channel_shuffle(vs, 1, opts.groups)?;
    let a = spectral_attention(g, qs, ks, vs, Some(b[p.p2s]), opts.shift)?;
    let a = g.channel_unshuffle(a, 1, opts.groups)?;
    let os = dense(g, b, a, p.w2s, None)?;
    g.add(of, os)
}

fn layer_norm(g: &mut Graph, b: &Bound, t: Var, gamma: ParamId, beta: ParamId) -> Result<Var> {
    let n = g.layer_norm_last(t, LN_EPS);
    let s = g.mul_along(n, b[gamma], 1)?;
    g.add_along(s, b[beta], 1)
}

/// `X + S₁(LN X) + S₂(LN X)`, then `+ FFN(LN ·)`, on a `(C, H, W)` map.
pub fn ssab_forward(g: &mut Graph, b: &Bound, p: &SsabParams, x: Var, opts: AttnOpts) -> Result<Var> {
    let (h, w) = match *g.shape(x) {
        [c, h, w] if c == p.channels => (h, w),
        ref s => return dim_err(format!("block of width {} got {s:?}", p.channels)),
    };
    let t0 = chw_to_tokens(g, x)?;
    let n1 = layer_norm(g, b, t0, p.ln1_g, p.ln1_b)?;
    let s1 = ssmsa_stage1(g, b, p, n1, opts)?;
    let s2 = ssmsa_stage2(g, b, p, n1, opts)?;
    let s = g.add(s1, s2)?;
    let t1 = g.add(t0, s)?;
    let n2 = layer_norm(g, b, t1, p.ln2_g, p.ln2_b)?;
    let f = dense(g, b, n2, p.f1_w, Some(p.f1_b))?;
    let f = g.gelu(f);
    let f = dense(g, b, f, p.f2_w, Some(p.f2_b))?;
    let t2 = g.add(t1, f)?;
    tokens_to_chw(g, t2, h, w)
}
