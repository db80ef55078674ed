use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::power::{dot, power_iteration};
use super::prox::{tv1d_prox, tv2d, tv2d_prox};
use crate::autodiff::LinearMap;
use crate::error::{dim_err, param_err, Result};
use crate::sensor::ForwardOperator;
use crate::spectral::{HsiCube, Measurement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    None,
    /// `Σ |x[k+1] − x[k]|` along the band axis of every pixel.
    L1SpectralGradient,
    /// Isotropic total variation of every band.
    Tv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepRule {
    /// `1/L` with `L` from power iteration.
    InverseLipschitz,
    /// Fixed step; must not exceed `1/L`.
    Fixed { value: f64 },
    /// Armijo-type backtracking, growing the local Lipschitz guess by `eta`.
    Backtracking { eta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub iterations: usize,
    pub step: StepRule,
    pub regularizer: Regularizer,
    pub lambda_reg: f64,
    /// Stop early once the relative objective decrease drops below this; 0 disables.
    pub tolerance: f64,
    pub power_iters: usize,
    pub tv_inner_iters: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            step: StepRule::InverseLipschitz,
            regularizer: Regularizer::Tv,
            lambda_reg: 3e-4,
            tolerance: 0.0,
            power_iters: 50,
            tv_inner_iters: 10,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return param_err("iterations must be >= 1");
        }
        if !(self.lambda_reg >= 0.0) {
            return param_err("lambda_reg must be >= 0");
        }
        if !(self.tolerance >= 0.0) {
            return param_err("tolerance must be >= 0");
        }
        match self.step {
            StepRule::Fixed { value } if !(value > 0.0) => param_err("fixed step must be positive"),
            StepRule::Backtracking { eta } if !(eta > 1.0) => param_err("backtracking eta must exceed 1"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FistaResult {
    pub cube: HsiCube,
    /// Objective at the start point followed by one value per iteration.
    pub objective: Vec<f64>,
    pub lipschitz: f64,
}

/// `c·Aᵀy` with `c` minimising `‖c·AAᵀy − y‖`.
pub fn scaled_adjoint<M: LinearMap + ?Sized>(op: &M, y: &[f64]) -> Vec<f64> {
    let b = op.adjoint(y);
    let ab = op.apply(&b);
    let den = dot(&ab, &ab);
    let c = if den > 0.0 { dot(&ab, y) / den } else { 0.0 };
    b.into_iter().map(|v| c * v).collect()
}

struct Problem<'a, M: ?Sized> {
    op: &'a M,
    y: &'a [f64],
    reg: Regularizer,
    lambda: f64,
    tv_iters: usize,
    shape: (usize, usize, usize),
}

impl<M: LinearMap + ?Sized> Problem<'_, M> {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.op.apply(x);
        r.iter_mut().zip(self.y).for_each(|(a, b)| *a -= b);
        r
    }

    fn smooth(&self, x: &[f64]) -> f64 {
        let r = self.residual(x);
        0.5 * dot(&r, &r)
    }

    fn reg_value(&self, x: &[f64]) -> f64 {
        let (k, h, w) = self.shape;
        let plane = h * w;
        match self.reg {
            Regularizer::None => 0.0,
            Regularizer::L1SpectralGradient => (0..k.saturating_sub(1))
                .map(|b| {
                    x[b * plane..(b + 1) * plane]
                        .iter()
                        .zip(&x[(b + 1) * plane..(b + 2) * plane])
                        .map(|(a, c)| (c - a).abs())
                        .sum::<f64>()
                })
                .sum(),
            Regularizer::Tv => x.chunks(plane).map(|p| tv2d(p, h, w)).sum(),
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.smooth(x) + self.lambda * self.reg_value(x)
    }

    /// Prox of `step·λ·R`, then projection onto `x ≥ 0`.
    fn prox(&self, v: &mut [f64], step: f64) {
        let theta = step * self.lambda;
        let (k, h, w) = self.shape;
        let plane = h * w;
        if theta > 0.0 {
            match self.reg {
                Regularizer::None => {}
                Regularizer::L1SpectralGradient => {
                    let mut spec = vec![0.0; k];
                    let mut out = vec![0.0; k];
                    for p in 0..plane {
                        for b in 0..k {
                            spec[b] = v[b * plane + p];
                        }
                        tv1d_prox(&spec, theta, &mut out);
                        for b in 0..k {
                            v[b * plane + p] = out[b];
                        }
                    }
                }
                Regularizer::Tv => {
                    let tv_iters = self.tv_iters;
                    v.par_chunks_mut(plane).for_each(|band| {
                        let u = tv2d_prox(band, h, w, theta, tv_iters);
                        band.copy_from_slice(&u);
                    });
                }
            }
        }
        v.iter_mut().for_each(|x| *x = x.max(0.0));
    }
}

/// Monotone FISTA on `½‖Ax − y‖² + λ·R(x)` subject to `x ≥ 0`.
///
/// `x0` defaults to [`scaled_adjoint`].
pub fn fista<M: LinearMap + ?Sized>(
    op: &M,
    y: &[f64],
    cfg: &SolverConfig,
    x0: Option<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    cfg.validate()?;
    let in_shape = op.in_shape();
    let shape = match in_shape[..] {
        [k, h, w] => (k, h, w),
        [n] => (1, 1, n),
        _ => return dim_err(format!("solver expects a (K, H, W) operator, got {in_shape:?}")),
    };
    if y.len() != op.out_shape().iter().product::<usize>() {
        return dim_err(format!(
            "measurement has {} values, operator produces {:?}",
            y.len(),
            op.out_shape()
        ));
    }
    let n: usize = in_shape.iter().product();
    let lip = power_iteration(op, cfg.power_iters.max(super::MIN_POWER_ITERS), cfg.seed)?.lipschitz;
    let fixed_step = match cfg.step {
        StepRule::InverseLipschitz => Some(1.0 / lip),
        StepRule::Fixed { value } => {
            if value > (1.0 + 1e-9) / lip {
                return param_err(format!(
                    "fixed step {value:e} exceeds 1/L = {:e}; use backtracking or a smaller step",
                    1.0 / lip
                ));
            }
            Some(value)
        }
        StepRule::Backtracking { .. } => None,
    };
    let prob = Problem {
        op,
        y,
        reg: cfg.regularizer,
        lambda: cfg.lambda_reg,
        tv_iters: cfg.tv_inner_iters,
        shape,
    };

    let mut x = x0.unwrap_or_else(|| scaled_adjoint(op, y));
    if x.len() != n {
        return dim_err(format!("start point has {} values, expected {n}", x.len()));
    }
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut fx = prob.objective(&x);
    let mut trace = vec![fx];
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut local_l = lip / 4.0;

    for _ in 0..cfg.iterations {
        let r = prob.residual(&yk);
        let grad = op.adjoint(&r);
        let z = match (fixed_step, cfg.step) {
            (Some(s), _) => {
                let mut z: Vec<f64> = yk.iter().zip(&grad).map(|(a, g)| a - s * g).collect();
                prob.prox(&mut z, s);
                z
            }
            (None, StepRule::Backtracking { eta }) => {
                let fy = 0.5 * dot(&r, &r);
                loop {
                    let s = 1.0 / local_l;
                    let mut z: Vec<f64> = yk.iter().zip(&grad).map(|(a, g)| a - s * g).collect();
                    prob.prox(&mut z, s);
                    let d: Vec<f64> = z.iter().zip(&yk).map(|(a, b)| a - b).collect();
                    let bound = fy + dot(&d, &grad) + 0.5 * local_l * dot(&d, &d);
                    if prob.smooth(&z) <= bound * (1.0 + 1e-12) + 1e-300 || local_l > 1e6 * lip {
                        break z;
                    }
                    local_l *= eta;
                }
            }
            _ => unreachable!("step rule covered above"),
        };
        let fz = prob.objective(&z);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let accepted = fz <= fx;
        let x_next = if accepted { z.clone() } else { x.clone() };
        yk = (0..n)
            .map(|i| x_next[i] + (t / t_next) * (z[i] - x_next[i]) + ((t - 1.0) / t_next) * (x_next[i] - x[i]))
            .collect();
        let f_next = if accepted { fz } else { fx };
        let decrease = fx - f_next;
        x = x_next;
        t = t_next;
        trace.push(f_next);
        let stop = cfg.tolerance > 0.0 && decrease <= cfg.tolerance * fx.abs().max(f64::MIN_POSITIVE);
        fx = f_next;
        if stop {
            break;
        }
    }
    Ok((x, trace, lip))
}

/// Reconstructs a cube from `meas` with [`fista`].
pub fn fista_reconstruct(
    meas: &Measurement,
    op: &ForwardOperator,
    cfg: &SolverConfig,
    init: Option<&HsiCube>,
) -> Result<FistaResult> {
    let y: Vec<f64> = meas.data().iter().copied().collect();
    let x0 = init.map(|c| c.data().iter().copied().collect());
    let (x, objective, lipschitz) = fista(op, &y, cfg, x0)?;
    let data = ndarray::Array3::from_shape_vec(op.in_shape(), x).expect("operator shape");
    Ok(FistaResult {
        cube: HsiCube::from_clamped(op.psf().grid().clone(), data)?,
        objective,
        lipschitz,
    })
}
