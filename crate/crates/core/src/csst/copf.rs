use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, Bound, CheckpointManifest, Graph, LinearMap, ParamStore, Tensor, Var,
};
use crate::error::{dim_err, AdisError, Result};
use crate::optics::PsfStack;
use crate::recon::{power_iteration, scaled_adjoint};
use crate::sensor::ForwardOperator;
use crate::spectral::{HsiCube, Measurement};

use super::qpenet::{qpenet_forward, QpeParams};
use super::sst::{sst_forward, SstParams};
use super::{Init, InitKind, ModelConfig};

/// Channel count of each prior map.
pub const PRIOR_GROUPS: usize = 3;

/// Step value used by [`InitKind::Identity`].
const IDENTITY_STEP: f64 = 1e-12;

/// Splits `bands` into `groups` contiguous, near-equal ranges. With fewer
/// bands than groups the last band is repeated.
pub fn band_groups(bands: usize, groups: usize) -> Vec<Range<usize>> {
    (0..groups)
        .map(|i| {
            let lo = (i * bands / groups).min(bands - 1);
            let hi = ((i + 1) * bands / groups).max(lo + 1).min(bands);
            lo..hi
        })
        .collect()
}

fn group_mean(stack: &Array3<f64>, groups: usize) -> Array3<f64> {
    let (k, h, w) = stack.dim();
    let mut out = Array3::zeros((groups, h, w));
    for (gi, r) in band_groups(k, groups).into_iter().enumerate() {
        let n = r.len() as f64;
        for b in r {
            let mut dst = out.index_axis_mut(Axis(0), gi);
            dst.scaled_add(1.0 / n, &stack.index_axis(Axis(0), b));
        }
    }
    out
}

/// Filter transmittance on the cube grid, averaged over three band groups.
pub fn filter_prior(op: &ForwardOperator) -> Array3<f64> {
    let (_, h, w) = op.in_shape();
    let m = op.margin() as isize;
    group_mean(&op.mosaic().response_map(h, w, -m, -m), PRIOR_GROUPS)
}

fn resample_bilinear(src: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (sh, sw) = src.dim();
    let coord = |i: usize, n: usize, sn: usize| -> (usize, usize, f64) {
        if n <= 1 || sn <= 1 {
            let c = (sn - 1) / 2;
            return (c, c, 0.0);
        }
        let x = i as f64 * (sn - 1) as f64 / (n - 1) as f64;
        let x0 = (x.floor() as usize).min(sn - 1);
        let x1 = (x0 + 1).min(sn - 1);
        (x0, x1, x - x0 as f64)
    };
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (y0, y1, fy) = coord(i, h, sh);
        let (x0, x1, fx) = coord(j, w, sw);
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bot = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// PSF kernels averaged over three band groups, resampled to `h × w` and
/// scaled to unit peak.
pub fn psf_prior(psf: &PsfStack, h: usize, w: usize) -> Array3<f64> {
    let grouped = group_mean(psf.kernels(), PRIOR_GROUPS);
    let mut out = Array3::zeros((PRIOR_GROUPS, h, w));
    for gi in 0..PRIOR_GROUPS {
        let mut r = resample_bilinear(grouped.index_axis(Axis(0), gi), h, w);
        let peak = r.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            r.mapv_inplace(|v| v / peak);
        }
        out.index_axis_mut(Axis(0), gi).assign(&r);
    }
    out
}

fn to_tensor<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.iter().copied().collect()).expect("rank <= 4")
}

/// Everything the unrolled loop needs for one measurement, computed once.
#[derive(Debug, Clone)]
pub struct CopfInputs {
    pub op: Arc<ForwardOperator>,
    /// Measurement as `(1, H_s, W_s)`.
    pub y: Tensor,
    /// Starting estimate `c·Aᵀy`, `(K, H, W)`.
    pub x0: Tensor,
    /// Step-estimator input: band-mean of `x0` and both priors, `(7, H, W)`.
    pub qpe_input: Tensor,
    pub sigma: Tensor,
    pub varsigma: Tensor,
    /// `‖A‖²`; step maps are expressed in units of `1/L`.
    pub lipschitz: f64,
}

impl CopfInputs {
    pub fn prepare(meas: &Measurement, op: Arc<ForwardOperator>) -> Result<Self> {
        let (hs, ws) = op.out_shape();
        if meas.data().dim() != (hs, ws) {
            return dim_err(format!(
                "measurement {:?} does not match operator output ({hs}, {ws})",
                meas.data().dim()
            ));
        }
        let (k, h, w) = op.in_shape();
        let yv: Vec<f64> = meas.data().iter().copied().collect();
        let x0 = scaled_adjoint(op.as_ref(), &yv);
        let lipschitz = power_iteration(op.as_ref(), 50, 0)?.lipschitz;
        let sigma = filter_prior(&op);
        let varsigma = psf_prior(op.psf(), h, w);
        let mut qin = Vec::with_capacity((1 + 2 * PRIOR_GROUPS) * h * w);
        let plane = h * w;
        qin.extend((0..plane).map(|p| (0..k).map(|b| x0[b * plane + p]).sum::<f64>() / k as f64));
        qin.extend(sigma.iter().copied());
        qin.extend(varsigma.iter().copied());
        Ok(Self {
            y: Tensor::new(vec![1, hs, ws], yv)?,
            x0: Tensor::new(vec![k, h, w], x0)?,
            qpe_input: Tensor::new(vec![1 + 2 * PRIOR_GROUPS, h, w], qin)?,
            sigma: to_tensor(&sigma),
            varsigma: to_tensor(&varsigma),
            lipschitz,
            op,
        })
    }
}

/// Unrolled reconstruction model: step estimator plus `k` denoisers.
#[derive(Debug)]
pub struct CopfModel {
    config: ModelConfig,
    bands: usize,
    store: ParamStore,
    qpe: QpeParams,
    ssts: Vec<SstParams>,
    calls: AtomicUsize,
}

impl CopfModel {
    pub fn new(config: ModelConfig, bands: usize) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let random = config.init == InitKind::Random;
        let (qpe, ssts) = {
            let mut init = Init::new(&mut store, config.seed);
            let qpe = QpeParams::with_init(&mut init, "qpe", config.stages, !random)?;
            let n = if config.share_denoiser { 1 } else { config.stages };
            let ssts = (0..n)
                .map(|j| SstParams::with_init(&mut init, &format!("sst{j}"), bands, config.channels, !random))
                .collect::<Result<Vec<_>>>()?;
            (qpe, ssts)
        };
        if config.init == InitKind::Identity {
            qpe.set_constant_output(&mut store, IDENTITY_STEP)?;
        }
        Ok(Self {
            config,
            bands,
            store,
            qpe,
            ssts,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn qpe(&self) -> &QpeParams {
        &self.qpe
    }

    /// Denoiser evaluations since construction or the last reset.
    pub fn denoiser_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_denoiser_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    /// Sets every step map to the constant `value` (units of `1/L`).
    pub fn set_constant_step(&mut self, value: f64) -> Result<()> {
        self.qpe.set_constant_output(&mut self.store, value)
    }

    /// Builds the unrolled loop on `g`; the result is not clamped.
    pub fn forward(&self, g: &mut Graph, b: &Bound, inp: &CopfInputs) -> Result<Var> {
        let (k, h, w) = inp.op.in_shape();
        if k != self.bands {
            return dim_err(format!("model for {} bands, operator has {k}", self.bands));
        }
        let op: Arc<dyn LinearMap> = inp.op.clone();
        let y = g.constant(inp.y.clone());
        let sigma = g.constant(inp.sigma.clone());
        let varsigma = g.constant(inp.varsigma.clone());
        let qin = g.constant(inp.qpe_input.clone());
        let betas = qpenet_forward(g, b, &self.qpe, qin)?;
        let opts = self.config.attn_opts();
        let inv_l = 1.0 / inp.lipschitz;

        let mut x = g.constant(inp.x0.clone());
        for j in 0..self.config.stages {
            let ax = g.linear(x, op.clone())?;
            let r = g.sub(ax, y)?;
            let grad = g.linear_adjoint(r, op.clone())?;
            let bj = g.slice(betas, 0, j, 1)?;
            let step = g.scale(bj, inv_l);
            let rep = vec![step; k];
            let step_k = g.concat(&rep, 0)?;
            let delta = g.mul(step_k, grad)?;
            let z = g.sub(x, delta)?;
            let sst = &self.ssts[if self.config.share_denoiser { 0 } else { j }];
            x = sst_forward(g, b, sst, z, bj, sigma, varsigma, opts, true)?;
            self.calls.fetch_add(1, Ordering::Relaxed);
        }
        debug_assert_eq!(g.shape(x), &[k, h, w]);
        Ok(x)
    }

    /// Evaluates the model without gradients and clamps to `x ≥ 0`.
    pub fn reconstruct(&self, inp: &CopfInputs) -> Result<Array3<f64>> {
        let mut g = Graph::new();
        let b = self.store.bind_constants(&mut g);
        let x = self.forward(&mut g, &b, inp)?;
        g.check_finite()?;
        let (k, h, w) = inp.op.in_shape();
        let data = g.value(x).data().iter().map(|v| v.max(0.0)).collect();
        Ok(Array3::from_shape_vec((k, h, w), data).expect("shape"))
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<CheckpointManifest> {
        let meta = serde_json::json!({ "architecture": self.config.architecture(self.bands) });
        save_checkpoint(&self.store, meta, stem)
    }

    /// Rebuilds a model from a checkpoint. `shift_step` is a runtime
    /// choice and is not stored.
    pub fn load(stem: &Path, shift_step: usize) -> Result<Self> {
        let (store, manifest) = load_checkpoint(stem)?;
        let arch = manifest
            .meta
            .get("architecture")
            .ok_or_else(|| AdisError::Data("checkpoint has no architecture record".into()))?;
        let field = |name: &str| {
            arch.get(name)
                .cloned()
                .ok_or_else(|| AdisError::Data(format!("checkpoint architecture lacks '{name}'")))
        };
        let bands: usize = serde_json::from_value(field("bands")?)?;
        let config = ModelConfig {
            stages: serde_json::from_value(field("stages")?)?,
            channels: serde_json::from_value(field("channels")?)?,
            share_denoiser: serde_json::from_value(field("share_denoiser")?)?,
            shuffle_groups: serde_json::from_value(field("shuffle_groups")?)?,
            shift_step,
            init: InitKind::Random,
            seed: 0,
        };
        let mut model = Self::new(config, bands)?;
        model.store.assign_from(&store)?;
        Ok(model)
    }
}

/// Runs `model` on `meas` and returns the clamped cube.
pub fn copf_forward(meas: &Measurement, op: Arc<ForwardOperator>, model: &CopfModel) -> Result<HsiCube> {
    let grid = op.psf().grid().clone();
    let inp = CopfInputs::prepare(meas, op)?;
    HsiCube::new(grid, model.reconstruct(&inp)?)
}
