//! Gradient checks run by `adis gradcheck`.

use std::sync::Arc;

use adis_core::autodiff::{grad_check, grad_check_params, Bound, Graph, ParamStore, Tensor, Var};
use adis_core::csst::{ssab_forward, AttnOpts, CopfInputs, CopfModel, InitKind, ModelConfig, SsabParams};
use adis_core::io::{synth_scene, SceneKind};
use adis_core::sensor::forward_apply;
use adis_core::{Boundary, ForwardOperator, MosaicPattern, PsfStack, Result, WavelengthGrid};
use ndarray::Array3;

use crate::CheckTarget;

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const BLOCK_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

pub struct CheckResult {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

/// Deterministic values in ±[0.1, 1.1), away from the ReLU kink.
fn probe_tensor(shape: &[usize], salt: usize) -> Tensor {
    Tensor::from_fn(shape, |i| {
        let v = ((i * 7919 + salt * 104_729) as f64 * 0.618_033_988_75).fract() * 2.0 - 1.0;
        v.signum() * (0.1 + v.abs())
    })
}

fn weighted_sum(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::from_fn(&shape, |i| ((i as f64) * 0.37).sin()));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn tiny_operator() -> Arc<ForwardOperator> {
    let grid = WavelengthGrid::uniform(450e-9, 650e-9, 2).expect("grid");
    let mut k = Array3::from_shape_fn((2, 3, 3), |(b, i, j)| 1.0 + (b + 2 * i + 3 * j) as f64 * 0.1);
    normalise(&mut k);
    let psf = PsfStack::new(grid.clone(), k, 1e-5, None).expect("stack");
    let mosaic = MosaicPattern::preset("bayer", &grid).expect("mosaic");
    Arc::new(ForwardOperator::new(psf, mosaic, 5, 6, Boundary::Same).expect("operator"))
}

fn normalise(k: &mut Array3<f64>) {
    for mut band in k.outer_iter_mut() {
        let s = band.sum();
        band.mapv_inplace(|v| v / s);
    }
}

type Prim = (&'static str, Vec<Vec<usize>>, fn(&mut Graph, &[Var]) -> Result<Var>);

fn primitives() -> Vec<Prim> {
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], |g, v| g.add(v[0], v[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |g, v| g.mul(v[0], v[1])),
        ("gelu", vec![vec![4, 5]], |g, v| Ok(g.gelu(v[0]))),
        ("softplus", vec![vec![4, 5]], |g, v| Ok(g.softplus(v[0]))),
        ("matmul", vec![vec![3, 4], vec![4, 5]], |g, v| g.matmul(v[0], v[1])),
        ("softmax", vec![vec![3, 5]], |g, v| Ok(g.softmax_last(v[0]))),
        ("layer_norm", vec![vec![3, 6]], |g, v| Ok(g.layer_norm_last(v[0], 1e-5))),
        ("conv2d", vec![vec![2, 5, 6], vec![3, 2, 3, 3]], |g, v| {
            g.conv2d(v[0], v[1])
        }),
        ("avg_pool2", vec![vec![2, 4, 6]], |g, v| g.avg_pool2(v[0])),
        ("upsample2", vec![vec![2, 3, 2]], |g, v| g.upsample2(v[0])),
        ("circular_shift", vec![vec![2, 4, 5]], |g, v| {
            g.circular_shift(v[0], 1, -2)
        }),
        ("channel_shuffle", vec![vec![3, 6]], |g, v| {
            g.channel_shuffle(v[0], 1, 2)
        }),
        ("forward_operator", vec![vec![2, 5, 6]], |g, v| {
            g.linear(v[0], tiny_operator())
        }),
        ("adjoint_operator", vec![vec![1, 5, 6]], |g, v| {
            g.linear_adjoint(v[0], tiny_operator())
        }),
    ]
}

pub fn run(target: CheckTarget, step: f64, probes: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let all = target == CheckTarget::All;
    if all || target == CheckTarget::Primitives {
        for (i, (name, shapes, f)) in primitives().into_iter().enumerate() {
            let mut store = ParamStore::new();
            for (j, s) in shapes.iter().enumerate() {
                store.add(format!("in{j}"), probe_tensor(s, i * 4 + j))?;
            }
            let r = grad_check_params(
                &store,
                |g, v| {
                    let y = f(g, v)?;
                    weighted_sum(g, y)
                },
                step,
                probes,
                seed + i as u64,
            )?;
            out.push(CheckResult {
                name: name.into(),
                error: r.max_rel_error,
                tolerance: PRIMITIVE_TOL,
            });
        }
    }
    if all || target == CheckTarget::Ssab {
        let mut store = ParamStore::new();
        let p = SsabParams::new(&mut store, "ssab", 8, seed + 1, false)?;
        p.randomize_positional(&mut store, seed + 2);
        let x = probe_tensor(&[8, 6, 6], 99);
        let opts = AttnOpts { shift: 1, groups: 2 };
        let wrt_x = grad_check(
            |g, xv| {
                let b = store.bind_constants(g);
                let y = ssab_forward(g, &b, &p, xv, opts)?;
                weighted_sum(g, y)
            },
            &x,
            step,
            probes,
            seed,
        )?;
        let wrt_p = grad_check_params(
            &store,
            |g, v| {
                let xv = g.constant(x.clone());
                let y = ssab_forward(g, &Bound::from_vars(v), &p, xv, opts)?;
                weighted_sum(g, y)
            },
            step,
            probes,
            seed,
        )?;
        out.push(CheckResult {
            name: "ssab".into(),
            error: wrt_x.max_rel_error.max(wrt_p.max_rel_error),
            tolerance: BLOCK_TOL,
        });
    }
    if all || target == CheckTarget::Copf {
        let grid = WavelengthGrid::uniform(450e-9, 650e-9, 4)?;
        let mut k = Array3::from_shape_fn((4, 5, 5), |(b, i, j)| {
            let r2 = (i as f64 - 2.0 - 0.3 * b as f64).powi(2) + (j as f64 - 2.0).powi(2);
            (-r2 / 2.0).exp()
        });
        normalise(&mut k);
        let psf = PsfStack::new(grid.clone(), k, 1e-5, None)?;
        let op = Arc::new(ForwardOperator::new(
            psf,
            MosaicPattern::preset("bayer", &grid)?,
            16,
            16,
            Boundary::Same,
        )?);
        let scene = synth_scene(SceneKind::Patches, 16, 16, &grid, seed)?;
        let inp = CopfInputs::prepare(&forward_apply(&scene, &op)?, op)?;
        let model = CopfModel::new(
            ModelConfig {
                stages: 2,
                init: InitKind::Random,
                seed,
                ..ModelConfig::default()
            },
            4,
        )?;
        let r = grad_check_params(
            model.store(),
            |g, v| {
                let y = model.forward(g, &Bound::from_vars(v), &inp)?;
                weighted_sum(g, y)
            },
            step,
            probes,
            seed,
        )?;
        out.push(CheckResult {
            name: "copf (16x16x4, k=2)".into(),
            error: r.max_rel_error,
            tolerance: MODEL_TOL,
        });
    }
    Ok(out)
}
