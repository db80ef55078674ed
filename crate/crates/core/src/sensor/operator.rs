//! The measurement operator: per-band PSF convolution, mosaic weighting and
//! summation over bands, with its exact transpose.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::MosaicPattern;
use crate::autodiff::LinearMap;
use crate::error::{dim_err, param_err, Result};
use crate::optics::PsfStack;
use crate::spectral::{HsiCube, Measurement};

/// Kernels at or below this side use direct summation.
const DIRECT_MAX_SIDE: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Output shrinks by `side − 1`; no padding.
    Valid,
    /// Output matches input; zero padding outside the cube.
    Same,
}

pub struct ForwardOperator {
    psf: PsfStack,
    mosaic: MosaicPattern,
    boundary: Boundary,
    in_shape: (usize, usize, usize),
    out_shape: (usize, usize),
    /// Mosaic response per band on the sensor grid.
    response: Array3<f64>,
    fft: Option<FftPlan>,
}

impl std::fmt::Debug for ForwardOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardOperator")
            .field("in_shape", &self.in_shape)
            .field("out_shape", &self.out_shape)
            .field("boundary", &self.boundary)
            .field("kernel_side", &self.psf.side())
            .finish()
    }
}

impl ForwardOperator {
    /// Operator for cubes of `in_height × in_width` pixels.
    pub fn new(
        psf: PsfStack,
        mosaic: MosaicPattern,
        in_height: usize,
        in_width: usize,
        boundary: Boundary,
    ) -> Result<Self> {
        if mosaic.bands() != psf.bands() {
            return dim_err(format!(
                "mosaic has {} bands, psf stack {}",
                mosaic.bands(),
                psf.bands()
            ));
        }
        let s = psf.side();
        let (oh, ow) = match boundary {
            Boundary::Valid => {
                if in_height < s || in_width < s {
                    return param_err(format!("cube {in_height}x{in_width} smaller than kernel side {s}"));
                }
                (in_height - s + 1, in_width - s + 1)
            }
            Boundary::Same => (in_height, in_width),
        };
        if oh == 0 || ow == 0 {
            return param_err("empty operator output");
        }
        let response = mosaic.response_map(oh, ow, 0, 0);
        let fft = (s > DIRECT_MAX_SIDE).then(|| FftPlan::new(in_height.max(oh) + s - 1, in_width.max(ow) + s - 1));
        Ok(Self {
            in_shape: (psf.bands(), in_height, in_width),
            out_shape: (oh, ow),
            psf,
            mosaic,
            boundary,
            response,
            fft,
        })
    }

    pub fn psf(&self) -> &PsfStack {
        &self.psf
    }

    pub fn mosaic(&self) -> &MosaicPattern {
        &self.mosaic
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// `(bands, height, width)` of the cube side.
    pub fn in_shape(&self) -> (usize, usize, usize) {
        self.in_shape
    }

    /// `(height, width)` of the sensor side.
    pub fn out_shape(&self) -> (usize, usize) {
        self.out_shape
    }

    /// Offset of output pixel `(0, 0)` relative to the cube origin, minus
    /// the kernel half-width.
    fn offset(&self) -> usize {
        match self.boundary {
            Boundary::Valid => 0,
            Boundary::Same => (self.psf.side() - 1) / 2,
        }
    }

    /// Cube-plane margin between the cube origin and sensor pixel `(0, 0)`.
    pub fn margin(&self) -> usize {
        (self.psf.side() - 1) / 2 - self.offset()
    }

    pub fn response(&self) -> &Array3<f64> {
        &self.response
    }

    pub fn apply(&self, cube: ArrayView3<f64>) -> Result<Array2<f64>> {
        if cube.dim() != self.in_shape {
            return dim_err(format!(
                "cube shape {:?} != operator input {:?}",
                cube.dim(),
                self.in_shape
            ));
        }
        let bands: Vec<Array2<f64>> = (0..self.in_shape.0)
            .into_par_iter()
            .map(|k| {
                let mut b = self.convolve_band(cube.index_axis(Axis(0), k), k);
                b *= &self.response.index_axis(Axis(0), k);
                b
            })
            .collect();
        // Fixed-order accumulation keeps results independent of scheduling.
        let mut out = Array2::zeros(self.out_shape);
        for b in &bands {
            out += b;
        }
        Ok(out)
    }

    pub fn adjoint(&self, meas: ArrayView2<f64>) -> Result<Array3<f64>> {
        if meas.dim() != self.out_shape {
            return dim_err(format!(
                "measurement shape {:?} != operator output {:?}",
                meas.dim(),
                self.out_shape
            ));
        }
        let bands: Vec<Array2<f64>> = (0..self.in_shape.0)
            .into_par_iter()
            .map(|k| {
                let weighted = &meas * &self.response.index_axis(Axis(0), k);
                self.correlate_band(weighted.view(), k)
            })
            .collect();
        let (k, h, w) = self.in_shape;
        let mut out = Array3::zeros((k, h, w));
        for (i, b) in bands.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), i).assign(&b);
        }
        Ok(out)
    }

    fn convolve_band(&self, img: ArrayView2<f64>, band: usize) -> Array2<f64> {
        let kern = self.psf.kernel(band);
        let s = kern.nrows();
        let o = self.offset();
        let (oh, ow) = self.out_shape;
        match &self.fft {
            None => {
                let (h, w) = img.dim();
                let mut out = Array2::zeros((oh, ow));
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = 0.0;
                        for i in 0..s {
                            let yy = (y + i) as isize - o as isize;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            for j in 0..s {
                                let xx = (x + j) as isize - o as isize;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                acc += img[[yy as usize, xx as usize]] * kern[[s - 1 - i, s - 1 - j]];
                            }
                        }
                        out[[y, x]] = acc;
                    }
                }
                out
            }
            Some(plan) => {
                let full = plan.convolve(img, kern);
                let off = s - 1 - o;
                full.slice(s![off..off + oh, off..off + ow]).to_owned()
            }
        }
    }

    fn correlate_band(&self, r: ArrayView2<f64>, band: usize) -> Array2<f64> {
        let kern = self.psf.kernel(band);
        let s = kern.nrows();
        let o = self.offset();
        let (_, h, w) = self.in_shape;
        match &self.fft {
            None => {
                let (oh, ow) = r.dim();
                let mut out = Array2::zeros((h, w));
                for y in 0..oh {
                    for x in 0..ow {
                        let v = r[[y, x]];
                        if v == 0.0 {
                            continue;
                        }
                        for i in 0..s {
                            let yy = (y + i) as isize - o as isize;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            for j in 0..s {
                                let xx = (x + j) as isize - o as isize;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                out[[yy as usize, xx as usize]] += v * kern[[s - 1 - i, s - 1 - j]];
                            }
                        }
                    }
                }
                out
            }
            Some(plan) => {
                let mut flipped = kern.to_owned();
                flipped.invert_axis(Axis(0));
                flipped.invert_axis(Axis(1));
                let full = plan.convolve(r, flipped.view());
                full.slice(s![o..o + h, o..o + w]).to_owned()
            }
        }
    }
}

impl LinearMap for ForwardOperator {
    fn in_shape(&self) -> Vec<usize> {
        let (k, h, w) = self.in_shape;
        vec![k, h, w]
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![1, self.out_shape.0, self.out_shape.1]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = ArrayView3::from_shape(self.in_shape, x).expect("shape checked by graph");
        self.apply(v)
            .expect("shape checked by graph")
            .into_raw_vec_and_offset()
            .0
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let v = ArrayView2::from_shape(self.out_shape, y).expect("shape checked by graph");
        ForwardOperator::adjoint(self, v)
            .expect("shape checked by graph")
            .into_raw_vec_and_offset()
            .0
    }
}

/// `Q[x, y, band]` lookup on the operator's mosaic.
pub fn mosaic_response(mosaic: &MosaicPattern, x: usize, y: usize, band: usize) -> Result<f64> {
    mosaic.response(x, y, band)
}

pub fn forward_apply(cube: &HsiCube, op: &ForwardOperator) -> Result<Measurement> {
    let (k, h, w) = op.in_shape();
    if cube.bands() != k || cube.height() != h || cube.width() != w {
        return dim_err(format!(
            "cube {:?} does not match operator input ({h}, {w}, {k})",
            cube.shape()
        ));
    }
    Measurement::from_clamped(op.apply(cube.data().view())?)
}

pub fn adjoint_apply(meas: &Measurement, op: &ForwardOperator) -> Result<HsiCube> {
    let back = op.adjoint(meas.data().view())?;
    HsiCube::from_clamped(op.psf().grid().clone(), back)
}

/// 2D linear convolution through zero-padded FFTs of a fixed size.
struct FftPlan {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

/// Smallest 2^a·3^b·5^c not below `n`.
fn smooth_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

impl FftPlan {
    fn new(min_rows: usize, min_cols: usize) -> Self {
        let rows = smooth_len(min_rows);
        let cols = smooth_len(min_cols);
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (row_fft, col_fft) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row_fft.process(buf);
        let mut col = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                col[r] = buf[r * self.cols + c];
            }
            col_fft.process(&mut col);
            for r in 0..self.rows {
                buf[r * self.cols + c] = col[r];
            }
        }
    }

    fn padded(&self, img: ArrayView2<f64>) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.rows * self.cols];
        for ((i, j), v) in img.indexed_iter() {
            buf[i * self.cols + j] = Complex64::new(*v, 0.0);
        }
        buf
    }

    /// Full linear convolution, `(h + s − 1) × (w + s − 1)`.
    fn convolve(&self, img: ArrayView2<f64>, kern: ArrayView2<f64>) -> Array2<f64> {
        let (h, w) = img.dim();
        let s = kern.nrows();
        debug_assert!(h + s - 1 <= self.rows && w + s - 1 <= self.cols);
        let mut a = self.padded(img);
        let mut b = self.padded(kern);
        self.transform(&mut a, false);
        self.transform(&mut b, false);
        for (x, y) in a.iter_mut().zip(&b) {
            *x *= y;
        }
        self.transform(&mut a, true);
        let norm = (self.rows * self.cols) as f64;
        Array2::from_shape_fn((h + s - 1, w + s - 1), |(i, j)| a[i * self.cols + j].re / norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::WavelengthGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_stack(bands: usize, side: usize, seed: u64) -> PsfStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = WavelengthGrid::uniform(450e-9, 650e-9, bands).unwrap();
        let mut k = Array3::from_shape_fn((bands, side, side), |_| rng.random::<f64>());
        for mut band in k.axis_iter_mut(Axis(0)) {
            let s = band.sum();
            band.mapv_inplace(|v| v / s);
        }
        PsfStack::new(grid, k, 1e-5, None).unwrap()
    }

    fn random_cube(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(shape, |_| rng.random::<f64>())
    }

    // O(H·W·K·S²) reference, written independently of the operator.
    fn brute_force(cube: &Array3<f64>, psf: &PsfStack, mosaic: &MosaicPattern, boundary: Boundary) -> Array2<f64> {
        let (k, h, w) = cube.dim();
        let s = psf.side();
        let c = (s - 1) / 2;
        let (oh, ow, shift) = match boundary {
            Boundary::Valid => (h - s + 1, w - s + 1, c as isize),
            Boundary::Same => (h, w, 0),
        };
        let mut out = Array2::zeros((oh, ow));
        for y in 0..oh {
            for x in 0..ow {
                let mut total = 0.0;
                for b in 0..k {
                    let kern = psf.kernel(b);
                    let mut acc = 0.0;
                    // output sample sits over cube pixel (y + shift, x + shift)
                    for dy in -(c as isize)..=(c as isize) {
                        for dx in -(c as isize)..=(c as isize) {
                            let sy = y as isize + shift - dy;
                            let sx = x as isize + shift - dx;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += cube[[b, sy as usize, sx as usize]]
                                * kern[[(c as isize + dy) as usize, (c as isize + dx) as usize]];
                        }
                    }
                    total += acc * mosaic.response(x, y, b).unwrap();
                }
                out[[y, x]] = total;
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_direct_and_fft() {
        let grid = WavelengthGrid::uniform(450e-9, 650e-9, 4).unwrap();
        for (side, boundary) in [
            (5, Boundary::Valid),
            (5, Boundary::Same),
            (13, Boundary::Valid),
            (13, Boundary::Same),
        ] {
            let psf = random_stack(4, side, 3);
            let mosaic = MosaicPattern::bayer(&grid);
            let (h, w) = (16 + side - 1, 18 + side - 1);
            let op = ForwardOperator::new(psf.clone(), mosaic.clone(), h, w, boundary).unwrap();
            let cube = random_cube((4, h, w), 9);
            let got = op.apply(cube.view()).unwrap();
            let want = brute_force(&cube, &psf, &mosaic, boundary);
            let err = (&got - &want).iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "side {side} {boundary:?}: {err}");
        }
    }

    #[test]
    fn adjoint_identity_both_paths() {
        let grid = WavelengthGrid::uniform(450e-9, 650e-9, 3).unwrap();
        for (side, boundary) in [
            (3, Boundary::Valid),
            (7, Boundary::Same),
            (15, Boundary::Valid),
            (15, Boundary::Same),
        ] {
            let psf = random_stack(3, side, 5);
            let op = ForwardOperator::new(psf, MosaicPattern::mosaic_3x3(&grid), 30, 27, boundary).unwrap();
            let x = random_cube((3, 30, 27), 1);
            let (oh, ow) = op.out_shape();
            let y = random_cube((1, oh, ow), 2).index_axis_move(Axis(0), 0);
            let ax = op.apply(x.view()).unwrap();
            let aty = op.adjoint(y.view()).unwrap();
            let lhs = (&ax * &y).sum();
            let rhs = (&x * &aty).sum();
            assert!(((lhs - rhs) / lhs).abs() < 1e-12, "{lhs} {rhs}");
        }
    }

    #[test]
    fn delta_reproduces_kernel() {
        let psf = random_stack(2, 9, 4);
        let s = 9;
        let op = ForwardOperator::new(
            psf.clone(),
            MosaicPattern::all_pass(2),
            2 * s - 1,
            2 * s - 1,
            Boundary::Valid,
        )
        .unwrap();
        let mut cube = Array3::zeros((2, 2 * s - 1, 2 * s - 1));
        cube[[1, s - 1, s - 1]] = 1.0;
        let m = op.apply(cube.view()).unwrap();
        let err = (&m - &psf.kernel(1)).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn flux_interior_ones() {
        let psf = random_stack(1, 5, 8);
        let op = ForwardOperator::new(psf, MosaicPattern::all_pass(1), 20, 20, Boundary::Valid).unwrap();
        let y = Array2::ones(op.out_shape());
        let back = op.adjoint(y.view()).unwrap();
        for i in 4..16 {
            for j in 4..16 {
                assert!((back[[0, i, j]] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let psf = random_stack(2, 5, 8);
        let op = ForwardOperator::new(psf.clone(), MosaicPattern::all_pass(2), 12, 12, Boundary::Valid).unwrap();
        assert!(op.apply(Array3::zeros((2, 11, 12)).view()).is_err());
        assert!(op.adjoint(Array2::zeros((12, 12)).view()).is_err());
        assert!(ForwardOperator::new(psf.clone(), MosaicPattern::all_pass(3), 12, 12, Boundary::Valid).is_err());
        assert!(ForwardOperator::new(psf, MosaicPattern::all_pass(2), 4, 12, Boundary::Valid).is_err());
    }

    #[test]
    fn smooth_lengths() {
        assert_eq!(smooth_len(7), 8);
        assert_eq!(smooth_len(11), 12);
        assert_eq!(smooth_len(97), 100);
    }
}
