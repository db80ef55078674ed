//! Fixtures shared by the criterion benches.

use adis_core::io::{synth_scene, SceneKind};
use adis_core::optics::{build_psf_stack, minimum_side};
use adis_core::{Boundary, ForwardOperator, HsiCube, MosaicPattern, OpticsConfig, PsfStack, WavelengthGrid};

pub fn grid(bands: usize) -> WavelengthGrid {
    WavelengthGrid::uniform(450e-9, 650e-9, bands).expect("grid")
}

/// Default optics with the pitch set for a half-pixel step per band.
pub fn optics(grid: &WavelengthGrid) -> OpticsConfig {
    OpticsConfig {
        supersample: 2,
        ..OpticsConfig::default()
    }
    .with_dispersion_step(grid, 0.5)
    .expect("optics")
}

pub fn psf(bands: usize) -> PsfStack {
    let g = grid(bands);
    let cfg = optics(&g);
    let side = minimum_side(&cfg, g.max()).expect("truncated orders");
    build_psf_stack(&cfg, &g, side).expect("psf")
}

pub fn operator(bands: usize, size: usize) -> ForwardOperator {
    let g = grid(bands);
    ForwardOperator::new(
        psf(bands),
        MosaicPattern::preset("3x3", &g).expect("mosaic"),
        size,
        size,
        Boundary::Same,
    )
    .expect("operator")
}

pub fn scene(bands: usize, size: usize) -> HsiCube {
    synth_scene(SceneKind::Patches, size, size, &grid(bands), 0).expect("scene")
}
