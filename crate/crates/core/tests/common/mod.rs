#![allow(dead_code)]

use std::sync::Arc;
use std::time::Instant;

use adis_core::csst::{CopfInputs, TrainSample};
use adis_core::io::{synth_scene, SceneKind};
use adis_core::optics::build_psf_stack;
use adis_core::sensor::forward_apply;
use adis_core::{Boundary, ForwardOperator, HsiCube, MosaicPattern, OpticsConfig, WavelengthGrid};

/// Eight slits, first orders only, 0.5 px dispersion step on `grid`.
pub fn small_optics(grid: &WavelengthGrid) -> OpticsConfig {
    OpticsConfig {
        n_slits: 8,
        supersample: 2,
        order_truncation: Some(1),
        ..OpticsConfig::default()
    }
    .with_dispersion_step(grid, 0.5)
    .unwrap()
}

pub fn grid(bands: usize) -> WavelengthGrid {
    WavelengthGrid::uniform(450e-9, 650e-9, bands).unwrap()
}

pub fn operator(bands: usize, h: usize, w: usize, mosaic: &str, boundary: Boundary) -> ForwardOperator {
    let g = grid(bands);
    let cfg = small_optics(&g);
    let side = adis_core::optics::minimum_side(&cfg, g.max()).unwrap();
    let psf = build_psf_stack(&cfg, &g, side).unwrap();
    ForwardOperator::new(psf, MosaicPattern::preset(mosaic, &g).unwrap(), h, w, boundary).unwrap()
}

pub fn sample(scene: &HsiCube, op: Arc<ForwardOperator>) -> TrainSample {
    let meas = forward_apply(scene, &op).unwrap();
    let inputs = CopfInputs::prepare(&meas, op).unwrap();
    let truth = adis_core::autodiff::Tensor::new(
        vec![scene.bands(), scene.height(), scene.width()],
        scene.data().iter().copied().collect(),
    )
    .unwrap();
    TrainSample { truth, inputs }
}

pub fn scene(kind: SceneKind, bands: usize, h: usize, w: usize, seed: u64) -> HsiCube {
    synth_scene(kind, h, w, &grid(bands), seed).unwrap()
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}
