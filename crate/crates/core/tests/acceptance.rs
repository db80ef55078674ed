//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p adis-core --test acceptance [N ...]` runs all criteria or
//! only the listed ones.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use adis_core::autodiff::{grad_check, grad_check_params, Bound, Graph, LinearMap, ParamStore, Tensor, Var};
use adis_core::csst::{
    ssab_forward, train_toy, AttnOpts, CopfInputs, CopfModel, InitKind, ModelConfig, SsabParams, TrainConfig,
};
use adis_core::io::SceneKind;
use adis_core::optics::{
    build_psf_stack, depth_psf, minimum_side, numeric_intensity, psf_analytic, psf_numeric, zero_first_ratio, MaskField,
};
use adis_core::recon::{fista_reconstruct, scaled_adjoint, SolverConfig};
use adis_core::sensor::forward_apply;
use adis_core::{psnr, Boundary, ForwardOperator, MosaicPattern, OpticsConfig, PsfStack, WavelengthGrid};
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORDER_TOL: f64 = 1e-6;
const RATIO_TOL: f64 = 1e-10;
const PSF_REL_L2: f64 = 1e-3;
const PSF_BUDGET_S: f64 = 30.0;
const TRANSLATION_REL_L2: f64 = 1e-6;
const DEPTH_REL_L2: f64 = 0.01;
const BABINET_TOL: f64 = 1e-6;
const OPERATOR_TOL: f64 = 1e-10;
const DISPERSION_STEP: f64 = 0.5;
const DISPERSION_TOL: f64 = 0.25;
const PRIMITIVE_GRAD_TOL: f64 = 1e-6;
const SSAB_GRAD_TOL: f64 = 1e-4;
const COPF_GRAD_TOL: f64 = 1e-3;
const OVERFIT_FACTOR: f64 = 10.0;
const OVERFIT_BUDGET_S: f64 = 600.0;
const FISTA_GAIN_DB: f64 = 5.0;
const MONOTONE_SLACK: f64 = 1e-12;

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_l2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.1e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn design_cfg() -> OpticsConfig {
    OpticsConfig {
        a: 5e-6,
        b: 5e-6,
        d: 10e-6,
        ..OpticsConfig::default()
    }
}

fn order_math() -> Result<String, String> {
    let t = Instant::now();
    let cfg = design_cfg();
    let a: Vec<f64> = (0..5).map(|m| cfg.order_amplitude(m).unwrap()).collect();
    let expect = [1.0, 4.0 / (PI * PI), 0.0, 4.0 / (9.0 * PI * PI), 0.0];
    let table_err = a.iter().zip(expect).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    // same table read off the far-field intensity at each order position
    let lam = 550e-9;
    let i0 = cfg.intensity(0.0, 0.0, lam);
    let field_err = (0..5)
        .map(|m| {
            let x = m as f64 * cfg.order_spacing(lam);
            (cfg.intensity(x, 0.0, lam) / i0 - expect[m]).abs()
        })
        .fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    ensure(
        (a[1] - 0.405285).abs() < ORDER_TOL
            && a[2] == 0.0
            && a[4] == 0.0
            && table_err < ORDER_TOL
            && field_err < ORDER_TOL
            && secs < 1.0,
        format!("A = {a:.6?}, table err {table_err:.1e}, field err {field_err:.1e}, {secs:.3} s"),
    )
}

fn ratio_law() -> Result<String, String> {
    let at2 = zero_first_ratio(2.0).unwrap();
    let a1 = design_cfg().order_amplitude(1).unwrap();
    let ms = [2.0, 4.0, 16.0, 1e2, 1e4, 1e6, 1e8];
    let r: Vec<f64> = ms.iter().map(|&m| zero_first_ratio(m).unwrap()).collect();
    let increasing = r.windows(2).all(|w| w[1] >= w[0]);
    let tail = (1.0 - r[r.len() - 1]).abs();
    ensure(
        (at2 - a1).abs() < RATIO_TOL && increasing && tail < RATIO_TOL,
        format!(
            "ratio(2) − A₁ = {:.1e}, 1 − ratio(1e8) = {tail:.1e}, increasing: {increasing}",
            at2 - a1
        ),
    )
}

fn psf_equivalence() -> Result<String, String> {
    let t = Instant::now();
    let cfg = OpticsConfig {
        supersample: 4,
        ..design_cfg()
    };
    let side = minimum_side(&cfg, 650e-9).unwrap();
    let mask = MaskField::orthogonal(&cfg, 12, 0).unwrap();
    let mut worst: f64 = 0.0;
    for lam in WavelengthGrid::uniform(450e-9, 650e-9, 5).unwrap().lambdas() {
        let a = psf_analytic(*lam, &cfg, side).unwrap();
        let n = psf_numeric(*lam, &mask, &cfg, side).unwrap();
        worst = worst.max(rel_l2(&n, &a));
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(
        worst < PSF_REL_L2 && secs < PSF_BUDGET_S,
        format!("worst rel L2 {worst:.2e} over 5 bands, side {side}, {secs:.1} s"),
    )
}

fn small_cfg() -> OpticsConfig {
    OpticsConfig {
        n_slits: 8,
        supersample: 2,
        order_truncation: Some(1),
        ..design_cfg()
    }
}

fn robustness() -> Result<String, String> {
    let cfg = small_cfg();
    let lam = 550e-9;
    let side = minimum_side(&cfg, lam).unwrap();
    let mask = MaskField::orthogonal(&cfg, 12, 1).unwrap();
    let base = psf_numeric(lam, &mask, &cfg, side).unwrap();
    let h = cfg.d / 2.0;
    let mut shift_err: f64 = 0.0;
    for (px, py) in [(h, 0.0), (0.0, h), (h, -h), (-h / 2.0, h / 3.0)] {
        let moved = mask.translate(px, py).unwrap();
        shift_err = shift_err.max(rel_l2(&psf_numeric(lam, &moved, &cfg, side).unwrap(), &base));
    }

    let flat = MaskField::orthogonal(&cfg, 12, 0).unwrap();
    let plane = psf_numeric(lam, &flat, &cfg, side).unwrap();
    let dev: Vec<f64> = [10.0, 100.0, 1000.0, 10000.0]
        .iter()
        .map(|z| rel_l2(&depth_psf(&flat, &cfg, z * cfg.f2, lam, side).unwrap(), &plane))
        .collect();
    let non_increasing = dev.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK);
    ensure(
        shift_err < TRANSLATION_REL_L2 && dev[1] < DEPTH_REL_L2 && non_increasing,
        format!(
            "translation {shift_err:.1e}, depth deviation at 10..1e4·f2 {}",
            fmt_list(&dev)
        ),
    )
}

fn babinet() -> Result<String, String> {
    // Pixel pitch equal to one DFT bin of the 16-period field, so the
    // chirp-z samples land on exact DFT frequencies.
    let cfg = OpticsConfig {
        n_slits: 16,
        supersample: 1,
        order_truncation: None,
        pixel_pitch: 550e-9 * 50e-3 / (16.0 * 10e-6),
        ..design_cfg()
    };
    let lam = 550e-9;
    let side = 113;
    let mask = MaskField::orthogonal(&cfg, 12, 0).unwrap();
    let comp = mask.complement();
    let open = (mask.open_fraction(), comp.open_fraction());
    let a = numeric_intensity(lam, &mask, &cfg, side).unwrap();
    let b = numeric_intensity(lam, &comp, &cfg, side).unwrap();
    let c = side / 2;
    let peak = a
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != c * side + c)
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for ((i, j), v) in a.indexed_iter() {
        if (i, j) != (c, c) {
            worst = worst.max((v - b[[i, j]]).abs() / peak);
        }
    }
    ensure(
        open == (0.25, 0.75) && worst < BABINET_TOL,
        format!("open fractions {open:?}, off-zero lobe mismatch {worst:.1e} of peak"),
    )
}

// Independent O(H·W·K·S²) reference: output (y, x) sits over cube pixel
// (y + m, x + m), m being the operator margin.
fn loop_oracle(cube: &Array3<f64>, op: &ForwardOperator) -> Array2<f64> {
    let (k, h, w) = cube.dim();
    let (oh, ow) = op.out_shape();
    let s = op.psf().side() as isize;
    let c = (s - 1) / 2;
    let m = op.margin() as isize;
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let mut total = 0.0;
            for b in 0..k {
                let kern = op.psf().kernel(b);
                let mut acc = 0.0;
                for u in 0..s {
                    for v in 0..s {
                        let sy = y as isize + m + c - u;
                        let sx = x as isize + m + c - v;
                        if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                            acc += cube[[b, sy as usize, sx as usize]] * kern[[u as usize, v as usize]];
                        }
                    }
                }
                total += acc * op.mosaic().response(x, y, b).unwrap();
            }
            out[[y, x]] = total;
        }
    }
    out
}

fn random_stack(bands: usize, side: usize, seed: u64) -> PsfStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = Array3::from_shape_fn((bands, side, side), |_| rng.random::<f64>());
    for mut band in k.axis_iter_mut(Axis(0)) {
        let s = band.sum();
        band.mapv_inplace(|v| v / s);
    }
    PsfStack::new(common::grid(bands), k, 1e-5, None).unwrap()
}

fn operator_correctness() -> Result<String, String> {
    let mut adj_worst: f64 = 0.0;
    for boundary in [Boundary::Same, Boundary::Valid] {
        let op = common::operator(8, 64, 64, "3x3", boundary);
        let (hs, ws) = op.out_shape();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..8 * 64 * 64).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..hs * ws).map(|_| rng.random::<f64>() - 0.5).collect();
            let ax = LinearMap::apply(&op, &x);
            let aty = LinearMap::adjoint(&op, &y);
            let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
            adj_worst = adj_worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
        }
    }

    let g = common::grid(4);
    let physical = common::operator(4, 16, 16, "bayer", Boundary::Same);
    let ops = [
        physical,
        ForwardOperator::new(
            random_stack(4, 5, 1),
            MosaicPattern::preset("bayer", &g).unwrap(),
            16,
            16,
            Boundary::Valid,
        )
        .unwrap(),
        ForwardOperator::new(
            random_stack(4, 5, 2),
            MosaicPattern::preset("3x3", &g).unwrap(),
            16,
            16,
            Boundary::Same,
        )
        .unwrap(),
    ];
    let mut fwd_worst: f64 = 0.0;
    for (i, op) in ops.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + i as u64);
        let cube = Array3::from_shape_fn((4, 16, 16), |_| rng.random::<f64>());
        let want = loop_oracle(&cube, op);
        let got = op.apply(cube.view()).unwrap();
        let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        fwd_worst = fwd_worst.max(err);
    }
    ensure(
        adj_worst < OPERATOR_TOL && fwd_worst < OPERATOR_TOL,
        format!("adjoint mismatch {adj_worst:.1e} (40 runs), forward vs loops {fwd_worst:.1e} (3 operators)"),
    )
}

fn dispersion() -> Result<String, String> {
    let cfg = OpticsConfig::default();
    let grid = WavelengthGrid::standard_28();
    let side = minimum_side(&cfg, grid.max()).unwrap();
    let stack = build_psf_stack(&cfg, &grid, side).unwrap();
    let c = stack.first_order_centroids(&cfg);
    let steps: Vec<f64> = c.windows(2).map(|w| w[1] - w[0]).collect();
    let (lo, hi) = steps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let ok = stack
        .verify_dispersion_step(&cfg, DISPERSION_STEP, DISPERSION_TOL)
        .is_ok();
    ensure(
        ok,
        format!("28 bands, adjacent centroid steps in [{lo:.4}, {hi:.4}] px"),
    )
}

fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> adis_core::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::from_fn(&shape, |_| rng.random::<f64>() - 0.5));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

struct Shuffle4;

impl LinearMap for Shuffle4 {
    fn in_shape(&self) -> Vec<usize> {
        vec![2, 3]
    }
    fn out_shape(&self) -> Vec<usize> {
        vec![4]
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0] + 2.0 * x[5], x[1] - x[2], 3.0 * x[3], x[4] + x[0]]
    }
    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        vec![y[0] + y[3], y[1], -y[1], 3.0 * y[2], y[3], 2.0 * y[0]]
    }
}

type Prim = (
    &'static str,
    Vec<Vec<usize>>,
    fn(&mut Graph, &[Var]) -> adis_core::Result<Var>,
);

fn primitives() -> Vec<Prim> {
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![3, 4], vec![3, 4]], |g, v| g.sub(v[0], v[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |g, v| g.mul(v[0], v[1])),
        ("scale", vec![vec![5]], |g, v| Ok(g.scale(v[0], -1.7))),
        ("relu", vec![vec![4, 5]], |g, v| Ok(g.relu(v[0]))),
        ("gelu", vec![vec![4, 5]], |g, v| Ok(g.gelu(v[0]))),
        ("softplus", vec![vec![4, 5]], |g, v| Ok(g.softplus(v[0]))),
        ("sum", vec![vec![2, 3, 4]], |g, v| {
            let s = g.sum(v[0]);
            g.mul(s, s)
        }),
        ("mse", vec![vec![3, 4], vec![3, 4]], |g, v| g.mse(v[0], v[1])),
        ("reshape", vec![vec![2, 6]], |g, v| g.reshape(v[0], &[3, 4])),
        ("matmul", vec![vec![3, 4], vec![4, 5]], |g, v| g.matmul(v[0], v[1])),
        ("transpose", vec![vec![3, 4]], |g, v| g.transpose(v[0])),
        ("add_along", vec![vec![3, 4, 2], vec![4]], |g, v| {
            g.add_along(v[0], v[1], 1)
        }),
        ("mul_along", vec![vec![3, 4, 2], vec![4]], |g, v| {
            g.mul_along(v[0], v[1], 1)
        }),
        ("softmax_last", vec![vec![3, 5]], |g, v| Ok(g.softmax_last(v[0]))),
        ("layer_norm_last", vec![vec![3, 6]], |g, v| {
            Ok(g.layer_norm_last(v[0], 1e-5))
        }),
        ("conv2d", vec![vec![2, 5, 6], vec![3, 2, 3, 3]], |g, v| {
            g.conv2d(v[0], v[1])
        }),
        ("avg_pool2", vec![vec![2, 4, 6]], |g, v| g.avg_pool2(v[0])),
        ("upsample2", vec![vec![2, 3, 2]], |g, v| g.upsample2(v[0])),
        ("concat", vec![vec![2, 3], vec![4, 3]], |g, v| {
            g.concat(&[v[0], v[1]], 0)
        }),
        ("slice", vec![vec![3, 6]], |g, v| g.slice(v[0], 1, 2, 3)),
        ("circular_shift", vec![vec![2, 4, 5]], |g, v| {
            g.circular_shift(v[0], 1, -2)
        }),
        ("permute_axis", vec![vec![4, 3]], |g, v| {
            g.permute_axis(v[0], 0, &[2, 0, 3, 1])
        }),
        ("channel_shuffle", vec![vec![3, 6]], |g, v| {
            g.channel_shuffle(v[0], 1, 2)
        }),
        ("channel_unshuffle", vec![vec![3, 6]], |g, v| {
            g.channel_unshuffle(v[0], 1, 3)
        }),
        ("linear", vec![vec![2, 3]], |g, v| g.linear(v[0], Arc::new(Shuffle4))),
        ("linear_adjoint", vec![vec![4]], |g, v| {
            g.linear_adjoint(v[0], Arc::new(Shuffle4))
        }),
    ]
}

fn autodiff() -> Result<String, String> {
    let mut prim_worst = (0.0f64, "");
    for (i, (name, shapes, f)) in primitives().into_iter().enumerate() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        for (j, s) in shapes.iter().enumerate() {
            // keep relu inputs clear of the kink
            let t = Tensor::from_fn(s, |_| {
                let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
                v.signum() * (0.1 + v.abs())
            });
            store.add(format!("in{j}"), t).unwrap();
        }
        let r = grad_check_params(
            &store,
            |g, v| {
                let y = f(g, v)?;
                weighted_sum(g, y, 99)
            },
            1e-5,
            20,
            i as u64,
        )
        .unwrap();
        if r.max_rel_error > prim_worst.0 {
            prim_worst = (r.max_rel_error, name);
        }
    }

    let mut store = ParamStore::new();
    let p = SsabParams::new(&mut store, "ssab", 8, 3, false).unwrap();
    p.randomize_positional(&mut store, 4);
    let x = Tensor::from_fn(&[8, 4, 6], |i| (i as f64 * 0.71).sin());
    let opts = AttnOpts { shift: 1, groups: 2 };
    let ssab = grad_check(
        |g, xv| {
            let b = store.bind_constants(g);
            let y = ssab_forward(g, &b, &p, xv, opts)?;
            weighted_sum(g, y, 5)
        },
        &x,
        1e-5,
        20,
        6,
    )
    .unwrap();
    let ssab_params = grad_check_params(
        &store,
        |g, v| {
            let b = Bound::from_vars(v);
            let xv = g.constant(x.clone());
            let y = ssab_forward(g, &b, &p, xv, opts)?;
            weighted_sum(g, y, 5)
        },
        1e-5,
        20,
        7,
    )
    .unwrap();
    let ssab_worst = ssab.max_rel_error.max(ssab_params.max_rel_error);

    let op = Arc::new(common::operator(4, 16, 16, "bayer", Boundary::Same));
    let scene = common::scene(SceneKind::Patches, 4, 16, 16, 2);
    let inp = CopfInputs::prepare(&forward_apply(&scene, &op).unwrap(), op).unwrap();
    let model = CopfModel::new(
        ModelConfig {
            stages: 2,
            init: InitKind::Random,
            ..ModelConfig::default()
        },
        4,
    )
    .unwrap();
    let copf = grad_check_params(
        model.store(),
        |g, v| {
            let y = model.forward(g, &Bound::from_vars(v), &inp)?;
            weighted_sum(g, y, 8)
        },
        1e-5,
        20,
        9,
    )
    .unwrap();
    ensure(
        prim_worst.0 < PRIMITIVE_GRAD_TOL && ssab_worst < SSAB_GRAD_TOL && copf.max_rel_error < COPF_GRAD_TOL,
        format!(
            "{} primitives worst {:.1e} ({}), SSAB {ssab_worst:.1e}, COPF {:.1e} over {} parameters",
            primitives().len(),
            prim_worst.0,
            prim_worst.1,
            copf.max_rel_error,
            model.store().num_values()
        ),
    )
}

fn shift_neutrality() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for shift in [1, 0] {
        let sub = dir.path().join(format!("shift{shift}"));
        std::fs::create_dir(&sub).unwrap();
        let stem = sub.join("model");
        let model = CopfModel::new(
            ModelConfig {
                shift_step: shift,
                ..ModelConfig::default()
            },
            8,
        )
        .unwrap();
        model.save(&stem).unwrap();
        CopfModel::load(&stem, 1 - shift).unwrap();
        texts.push(std::fs::read(stem.with_extension("json")).unwrap());
    }
    ensure(
        texts[0] == texts[1],
        format!(
            "manifests of {} bytes, identical: {}",
            texts[0].len(),
            texts[0] == texts[1]
        ),
    )
}

fn toy_overfit() -> Result<String, String> {
    let op = Arc::new(common::operator(8, 32, 32, "3x3", Boundary::Same));
    let scene = common::scene(SceneKind::Patches, 8, 32, 32, 1);
    let data = vec![common::sample(&scene, op)];
    let mut model = CopfModel::new(ModelConfig::default(), 8).unwrap();
    let cfg = TrainConfig::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t = Instant::now();
    let trace = pool.install(|| train_toy(&mut model, &data, &cfg)).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let tail = &trace[trace.len() - 10..];
    let last = tail.iter().sum::<f64>() / tail.len() as f64;
    let factor = trace[0] / last;
    ensure(
        trace.len() == 500 && factor >= OVERFIT_FACTOR && secs < OVERFIT_BUDGET_S,
        format!(
            "loss {:.3e} → {last:.3e} ({factor:.1}×) in {} steps, {secs:.0} s on one thread",
            trace[0],
            trace.len()
        ),
    )
}

fn fista_gain() -> Result<String, String> {
    let op = common::operator(8, 32, 32, "3x3", Boundary::Same);
    let scene = common::scene(SceneKind::Patches, 8, 32, 32, 1);
    let meas = forward_apply(&scene, &op).unwrap();
    let y: Vec<f64> = meas.data().iter().copied().collect();
    let x0 = Array3::from_shape_vec((8, 32, 32), scaled_adjoint(&op, &y)).unwrap();
    let cfg = SolverConfig::default();
    let r = fista_reconstruct(&meas, &op, &cfg, None).unwrap();
    let (p0, p1) = (
        psnr(scene.data(), &x0).unwrap(),
        psnr(scene.data(), r.cube.data()).unwrap(),
    );
    let monotone = r
        .objective
        .windows(2)
        .all(|w| w[1] <= w[0] + MONOTONE_SLACK * w[0].abs().max(1.0));
    ensure(
        p1 - p0 >= FISTA_GAIN_DB && monotone,
        format!(
            "PSNR {p0:.2} → {p1:.2} dB (+{:.2}), {} iterations, objective monotone: {monotone}",
            p1 - p0,
            r.objective.len() - 1
        ),
    )
}

fn main() {
    let checks: [(u32, &str, Check); 11] = [
        (1, "order math", order_math),
        (2, "ratio law", ratio_law),
        (3, "analytic/numeric PSF", psf_equivalence),
        (4, "robustness", robustness),
        (5, "Babinet complement", babinet),
        (6, "operator correctness", operator_correctness),
        (7, "dispersion step", dispersion),
        (8, "autodiff", autodiff),
        (9, "shift neutrality", shift_neutrality),
        (10, "toy overfit", toy_overfit),
        (11, "classical reconstruction", fista_gain),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, title, check) in checks {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("criterion {id:>2} PASS  {title}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {title}: {d}");
            }
        }
    }
    if only.is_empty() || only.contains(&12) {
        println!("criterion 12 SKIP  full-scale benchmark and prototype results: needs full training and hardware");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
