use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{param_err, Result};

pub const DEFAULT_PROBES: usize = 20;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|ad − fd| / max(|ad|, |fd|)` over all probes.
    pub max_rel_error: f64,
    pub probes: usize,
    pub step: f64,
}

/// Compares reverse-mode directional derivatives of `f` at `x` against
/// central differences along random unit directions. Non-scalar outputs
/// are sum-reduced.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, probes: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    check_inputs(&[x.clone()], |g, v| f(g, v[0]), step, probes, seed)
}

/// Same as [`grad_check`] over every parameter of `store` at once.
pub fn grad_check_params<F>(store: &ParamStore, f: F, step: f64, probes: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_inputs(store.tensors(), f, step, probes, seed)
}

fn scalar_out<F>(inputs: &[Tensor], f: &F, g: &mut Graph) -> Result<(Var, Vec<Var>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(g, &vars)?;
    let out = if g.value(out).numel() == 1 { out } else { g.sum(out) };
    g.check_finite()?;
    Ok((out, vars))
}

fn check_inputs<F>(inputs: &[Tensor], f: F, step: f64, probes: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&step) {
        return param_err(format!("finite-difference step {step:e} outside [1e-7, 1e-4]"));
    }
    if probes == 0 {
        return param_err("need at least one probe");
    }
    let mut g = Graph::new();
    let (out, vars) = scalar_out(inputs, &f, &mut g)?;
    let grads = g.backward(out)?;
    let ad_grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |shift: &[Vec<f64>], sign: f64| -> Result<f64> {
        let moved: Vec<Tensor> = inputs
            .iter()
            .zip(shift)
            .map(|(t, d)| {
                let v = t.data().iter().zip(d).map(|(a, b)| a + sign * step * b).collect();
                Tensor::new(t.shape().to_vec(), v).expect("shape")
            })
            .collect();
        let mut g = Graph::new();
        let (o, _) = scalar_out(&moved, &f, &mut g)?;
        Ok(g.value(o).data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let mut dir: Vec<Vec<f64>> = inputs
            .iter()
            .map(|t| (0..t.numel()).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        // unit length, so `step` is the size of the perturbation
        let len = dir.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().flatten().for_each(|v| *v /= len);
        let ad: f64 = ad_grads
            .iter()
            .zip(&dir)
            .map(|(g, d)| g.data().iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let fd = (eval(&dir, 1.0)? - eval(&dir, -1.0)?) / (2.0 * step);
        let scale = ad.abs().max(fd.abs());
        let rel = if scale == 0.0 { 0.0 } else { (ad - fd).abs() / scale };
        worst = worst.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        probes,
        step,
    })
}
