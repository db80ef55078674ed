use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Var};
use crate::error::{dim_err, Result};

use super::attention::{ssab_forward, AttnOpts, SsabParams};
use super::copf::PRIOR_GROUPS;
use super::{conv, Init};

/// Three-level U-shaped denoiser.
///
/// Level widths are `C`, `2C`, `4C` at full, half and quarter resolution.
#[derive(Debug, Clone)]
pub struct SstParams {
    pub bands: usize,
    pub channels: usize,
    embed_w: ParamId,
    embed_b: ParamId,
    enc1: SsabParams,
    down1: ParamId,
    enc2: SsabParams,
    down2: ParamId,
    bottleneck: SsabParams,
    up2: ParamId,
    fuse2: ParamId,
    dec2: SsabParams,
    up1: ParamId,
    fuse1: ParamId,
    dec1: SsabParams,
    out_w: ParamId,
    out_b: ParamId,
}

/// Input channels of the embedding: the estimate, one step map and the
/// two three-channel priors.
pub(crate) fn embed_inputs(bands: usize) -> usize {
    bands + 1 + 2 * PRIOR_GROUPS
}

impl SstParams {
    /// With `zero_out` the output convolution starts at zero, making the
    /// denoiser the identity.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        bands: usize,
        channels: usize,
        seed: u64,
        zero_out: bool,
    ) -> Result<Self> {
        Self::with_init(&mut Init::new(store, seed), prefix, bands, channels, zero_out)
    }

    pub(crate) fn with_init(init: &mut Init, prefix: &str, bands: usize, c: usize, zero_out: bool) -> Result<Self> {
        let n = |s: &str| format!("{prefix}.{s}");
        let ein = embed_inputs(bands);
        Ok(Self {
            bands,
            channels: c,
            embed_w: init.weight(n("embed.w"), &[c, ein, 3, 3], ein * 9, false)?,
            embed_b: init.full(n("embed.b"), &[c], 0.0)?,
            enc1: SsabParams::with_init(init, &n("enc1"), c, false)?,
            down1: init.weight(n("down1.w"), &[2 * c, c, 1, 1], c, false)?,
            enc2: SsabParams::with_init(init, &n("enc2"), 2 * c, false)?,
            down2: init.weight(n("down2.w"), &[4 * c, 2 * c, 1, 1], 2 * c, false)?,
            bottleneck: SsabParams::with_init(init, &n("bottleneck"), 4 * c, false)?,
            up2: init.weight(n("up2.w"), &[2 * c, 4 * c, 1, 1], 4 * c, false)?,
            fuse2: init.weight(n("fuse2.w"), &[2 * c, 4 * c, 1, 1], 4 * c, false)?,
            dec2: SsabParams::with_init(init, &n("dec2"), 2 * c, false)?,
            up1: init.weight(n("up1.w"), &[c, 2 * c, 1, 1], 2 * c, false)?,
            fuse1: init.weight(n("fuse1.w"), &[c, 2 * c, 1, 1], 2 * c, false)?,
            dec1: SsabParams::with_init(init, &n("dec1"), c, false)?,
            out_w: init.weight(n("out.w"), &[bands, c, 3, 3], c * 9, zero_out)?,
            out_b: init.full(n("out.b"), &[bands], 0.0)?,
        })
    }
}

fn check_prior(g: &Graph, v: Var, c: usize, h: usize, w: usize, name: &str) -> Result<()> {
    if g.shape(v) != [c, h, w] {
        return dim_err(format!("{name} must be ({c}, {h}, {w}), got {:?}", g.shape(v)));
    }
    Ok(())
}

/// Denoises `x: (K, H, W)` conditioned on the step map `beta: (1, H, W)`,
/// the filter prior `sigma: (3, H, W)` and the PSF prior `varsigma: (3, H, W)`.
/// `H` and `W` must be multiples of 4. `skip = false` replaces the
/// encoder skip connections by zeros.
#[allow(clippy::too_many_arguments)]
pub fn sst_forward(
    g: &mut Graph,
    b: &Bound,
    p: &SstParams,
    x: Var,
    beta: Var,
    sigma: Var,
    varsigma: Var,
    opts: AttnOpts,
    skip: bool,
) -> Result<Var> {
    let (h, w) = match *g.shape(x) {
        [k, h, w] if k == p.bands => (h, w),
        ref s => return dim_err(format!("denoiser for {} bands got {s:?}", p.bands)),
    };
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return dim_err(format!("denoiser needs sides divisible by 4, got {h}x{w}"));
    }
    check_prior(g, beta, 1, h, w, "step map")?;
    check_prior(g, sigma, PRIOR_GROUPS, h, w, "filter prior")?;
    check_prior(g, varsigma, PRIOR_GROUPS, h, w, "PSF prior")?;

    let inp = g.concat(&[x, beta, sigma, varsigma], 0)?;
    let x0 = conv(g, b, inp, p.embed_w, Some(p.embed_b))?;

    let e1 = ssab_forward(g, b, &p.enc1, x0, opts)?;
    let d1 = g.avg_pool2(e1)?;
    let d1 = conv(g, b, d1, p.down1, None)?;
    let e2 = ssab_forward(g, b, &p.enc2, d1, opts)?;
    let d2 = g.avg_pool2(e2)?;
    let d2 = conv(g, b, d2, p.down2, None)?;
    let bot = ssab_forward(g, b, &p.bottleneck, d2, opts)?;

    let u2 = g.upsample2(bot)?;
    let u2 = conv(g, b, u2, p.up2, None)?;
    let s2 = if skip { e2 } else { g.scale(e2, 0.0) };
    let c2 = g.concat(&[u2, s2], 0)?;
    let f2 = conv(g, b, c2, p.fuse2, None)?;
    let dec2 = ssab_forward(g, b, &p.dec2, f2, opts)?;

    let u1 = g.upsample2(dec2)?;
    let u1 = conv(g, b, u1, p.up1, None)?;
    let s1 = if skip { e1 } else { g.scale(e1, 0.0) };
    let c1 = g.concat(&[u1, s1], 0)?;
    let f1 = conv(g, b, c1, p.fuse1, None)?;
    let xf = ssab_forward(g, b, &p.dec1, f1, opts)?;

    let r = conv(g, b, xf, p.out_w, Some(p.out_b))?;
    g.add(x, r)
}
