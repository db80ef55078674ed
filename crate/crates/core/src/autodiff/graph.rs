use std::sync::Arc;

use statrs::function::erf::erf;

use super::tensor::{axis_split, Tensor};
use super::LinearMap;
use crate::error::{dim_err, param_err, AdisError, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Maps the output gradient and the parent values to one gradient per
/// parent. An empty vector means "not needed".
type Pullback = Box<dyn Fn(&[f64], &[&Tensor], &[bool]) -> Vec<Vec<f64>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    pullback: Option<Pullback>,
    requires_grad: bool,
    op: &'static str,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the
/// tape is already topologically sorted.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("shape"))
    }

    /// Gradient for `v`, zero when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(format!("{op}: shapes {:?} and {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn chw(t: &Tensor, op: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => dim_err(format!("{op}: expected (C, H, W), got {s:?}")),
    }
}

/// Range of output indices `y` with `0 <= y + off < n`.
fn valid_range(n: usize, off: isize) -> std::ops::Range<usize> {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).clamp(0, n as isize) as usize;
    lo..hi.max(lo)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shift_last2(src: &[f64], shape: &[usize], sy: isize, sx: isize) -> Vec<f64> {
    let r = shape[shape.len() - 2];
    let c = shape[shape.len() - 1];
    let mut out = vec![0.0; src.len()];
    for (b, plane) in src.chunks(r * c).enumerate() {
        let base = b * r * c;
        for i in 0..r {
            let ti = (i as isize + sy).rem_euclid(r as isize) as usize;
            for j in 0..c {
                let tj = (j as isize + sx).rem_euclid(c as isize) as usize;
                out[base + ti * c + tj] = plane[i * c + j];
            }
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// Leaf that receives gradients.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            parents: Vec::new(),
            pullback: None,
            requires_grad,
            op: "leaf",
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, parents: &[Var], op: &'static str, pullback: Pullback) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            pullback: requires_grad.then_some(pullback),
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// First node holding a NaN or infinity, with its op name.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (i, n.op))
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some((id, op)) => Err(AdisError::Numeric {
                location: format!("graph node {id} ({op})"),
            }),
            None => Ok(()),
        }
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.nodes[root.0].value.numel() != 1 {
            return dim_err(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(pb) = &node.pullback else { continue };
            let Some(g) = grads[i].take() else { continue };
            let parents: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
            let pg = pb(&g, &parents, &needs);
            for ((&p, d), need) in node.parents.iter().zip(pg).zip(needs) {
                if !need || d.is_empty() {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(d),
                }
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn unary(&mut self, a: Var, op: &'static str, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("shape");
        self.push(
            out,
            &[a],
            op,
            Box::new(move |g, p, _| vec![g.iter().zip(p[0].data()).map(|(g, &x)| g * df(x)).collect()]),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "add")?;
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect(),
        )?;
        Ok(self.push(out, &[a, b], "add", Box::new(|g, _, _| vec![g.to_vec(), g.to_vec()])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "sub")?;
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(a, b)| a - b).collect(),
        )?;
        Ok(self.push(
            out,
            &[a, b],
            "sub",
            Box::new(|g, _, _| vec![g.to_vec(), g.iter().map(|v| -v).collect()]),
        ))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "mul")?;
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(a, b)| a * b).collect(),
        )?;
        Ok(self.push(
            out,
            &[a, b],
            "mul",
            Box::new(|g, p, _| {
                vec![
                    g.iter().zip(p[1].data()).map(|(g, y)| g * y).collect(),
                    g.iter().zip(p[0].data()).map(|(g, x)| g * x).collect(),
                ]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, "scale", |x| c * x, move |_| c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, "relu", |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, "gelu", gelu, gelu_grad)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, "softplus", softplus, sigmoid)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.numel();
        let out = Tensor::scalar(x.sum());
        self.push(out, &[a], "sum", Box::new(move |g, _, _| vec![vec![g[0]; n]]))
    }

    /// Mean squared difference, shape `[1]`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, "mse")?;
        let n = x.numel() as f64;
        let v = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        Ok(self.push(
            Tensor::scalar(v),
            &[a, b],
            "mse",
            Box::new(move |g, p, _| {
                let d: Vec<f64> = p[0]
                    .data()
                    .iter()
                    .zip(p[1].data())
                    .map(|(a, b)| 2.0 * g[0] * (a - b) / n)
                    .collect();
                let neg = d.iter().map(|v| -v).collect();
                vec![d, neg]
            }),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        Ok(self.push(out, &[a], "reshape", Box::new(|g, _, _| vec![g.to_vec()])))
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (m, k, n) = match (x.shape(), y.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (s, t) => return dim_err(format!("matmul: {s:?} · {t:?}")),
        };
        let out = Tensor::new(vec![m, n], matmul_raw(x.data(), y.data(), m, k, n))?;
        Ok(self.push(
            out,
            &[a, b],
            "matmul",
            Box::new(move |g, p, needs| {
                let (x, y) = (p[0].data(), p[1].data());
                let mut dx = Vec::new();
                if needs[0] {
                    // g · yᵀ
                    dx = vec![0.0; m * k];
                    for i in 0..m {
                        for t in 0..k {
                            let row = &y[t * n..(t + 1) * n];
                            dx[i * k + t] = g[i * n..(i + 1) * n].iter().zip(row).map(|(a, b)| a * b).sum();
                        }
                    }
                }
                let mut dy = Vec::new();
                if needs[1] {
                    // xᵀ · g
                    dy = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for t in 0..k {
                            let xv = x[i * k + t];
                            if xv != 0.0 {
                                let drow = &mut dy[t * n..(t + 1) * n];
                                drow.iter_mut().zip(grow).for_each(|(d, g)| *d += xv * g);
                            }
                        }
                    }
                }
                vec![dx, dy]
            }),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = match *x.shape() {
            [r, c] => (r, c),
            ref s => return dim_err(format!("transpose: expected 2-D, got {s:?}")),
        };
        let out = Tensor::new(vec![c, r], transpose_raw(x.data(), r, c))?;
        Ok(self.push(
            out,
            &[a],
            "transpose",
            Box::new(move |g, _, _| vec![transpose_raw(g, c, r)]),
        ))
    }

    /// Adds the 1-D `b` along `axis` of `a`.
    pub fn add_along(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (x, bias) = (self.value(a), self.value(b));
        if axis >= x.shape().len() || bias.shape() != [x.shape()[axis]] {
            return dim_err(format!(
                "add_along: {:?} on axis {axis} of {:?}",
                bias.shape(),
                x.shape()
            ));
        }
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = x.data().to_vec();
        for o in 0..outer {
            for i in 0..n {
                let base = (o * n + i) * inner;
                out[base..base + inner].iter_mut().for_each(|v| *v += bias.data()[i]);
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            &[a, b],
            "add_along",
            Box::new(move |g, _, _| {
                let mut db = vec![0.0; n];
                for o in 0..outer {
                    for (i, d) in db.iter_mut().enumerate() {
                        let base = (o * n + i) * inner;
                        *d += g[base..base + inner].iter().sum::<f64>();
                    }
                }
                vec![g.to_vec(), db]
            }),
        ))
    }

    /// Multiplies `a` by the 1-D `s` along `axis`.
    pub fn mul_along(&mut self, a: Var, s: Var, axis: usize) -> Result<Var> {
        let (x, sc) = (self.value(a), self.value(s));
        if axis >= x.shape().len() || sc.shape() != [x.shape()[axis]] {
            return dim_err(format!("mul_along: {:?} on axis {axis} of {:?}", sc.shape(), x.shape()));
        }
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = x.data().to_vec();
        for o in 0..outer {
            for i in 0..n {
                let base = (o * n + i) * inner;
                out[base..base + inner].iter_mut().for_each(|v| *v *= sc.data()[i]);
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            &[a, s],
            "mul_along",
            Box::new(move |g, p, _| {
                let (x, sc) = (p[0].data(), p[1].data());
                let mut dx = g.to_vec();
                let mut ds = vec![0.0; n];
                for o in 0..outer {
                    for i in 0..n {
                        let base = (o * n + i) * inner;
                        for t in base..base + inner {
                            ds[i] += g[t] * x[t];
                            dx[t] *= sc[i];
                        }
                    }
                }
                vec![dx, ds]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = *x.shape().last().expect("rank >= 1");
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let y = out.clone();
        let out = Tensor::new(x.shape().to_vec(), out).expect("shape");
        self.push(
            out,
            &[a],
            "softmax",
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; g.len()];
                for ((d, gr), yr) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for t in 0..n {
                        d[t] = yr[t] * (gr[t] - dot);
                    }
                }
                vec![dx]
            }),
        )
    }

    /// Normalises each row of the last axis to zero mean and unit variance.
    pub fn layer_norm_last(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = *x.shape().last().expect("rank >= 1");
        let mut y = x.data().to_vec();
        let mut inv_std = Vec::with_capacity(y.len() / n);
        for row in y.chunks_mut(n) {
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mu) * is);
            inv_std.push(is);
        }
        let yc = y.clone();
        let out = Tensor::new(x.shape().to_vec(), y).expect("shape");
        self.push(
            out,
            &[a],
            "layer_norm",
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; g.len()];
                for (r, ((d, gr), yr)) in dx.chunks_mut(n).zip(g.chunks(n)).zip(yc.chunks(n)).enumerate() {
                    let mg = gr.iter().sum::<f64>() / n as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for t in 0..n {
                        d[t] = inv_std[r] * (gr[t] - mg - yr[t] * mgy);
                    }
                }
                vec![dx]
            }),
        )
    }

    /// Same-padded 2-D cross-correlation of `x: (Cin, H, W)` with
    /// `w: (Cout, Cin, k, k)`, `k` odd.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (ci, h, wd) = chw(self.value(x), "conv2d")?;
        let (co, k) = match *self.value(w).shape() {
            [co, c2, k, k2] if c2 == ci && k == k2 && k % 2 == 1 => (co, k),
            ref s => return dim_err(format!("conv2d: weight {s:?} for {ci} input channels")),
        };
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let p = (k / 2) as isize;
        let mut out = vec![0.0; co * h * wd];
        for o in 0..co {
            let plane = &mut out[o * h * wd..(o + 1) * h * wd];
            for c in 0..ci {
                let src = &xs[c * h * wd..(c + 1) * h * wd];
                for i in 0..k {
                    let oy = i as isize - p;
                    for j in 0..k {
                        let ox = j as isize - p;
                        let wv = ws[((o * ci + c) * k + i) * k + j];
                        if wv == 0.0 {
                            continue;
                        }
                        let xr = valid_range(wd, ox);
                        for y in valid_range(h, oy) {
                            let sy = (y as isize + oy) as usize;
                            let dst = &mut plane[y * wd + xr.start..y * wd + xr.end];
                            let s0 = (xr.start as isize + ox) as usize;
                            let s = &src[sy * wd + s0..sy * wd + s0 + xr.len()];
                            dst.iter_mut().zip(s).for_each(|(d, s)| *d += wv * s);
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![co, h, wd], out)?;
        Ok(self.push(
            out,
            &[x, w],
            "conv2d",
            Box::new(move |g, par, needs| {
                let (xs, ws) = (par[0].data(), par[1].data());
                let mut dx = if needs[0] { vec![0.0; ci * h * wd] } else { Vec::new() };
                let mut dw = if needs[1] { vec![0.0; ws.len()] } else { Vec::new() };
                for o in 0..co {
                    let gp = &g[o * h * wd..(o + 1) * h * wd];
                    for c in 0..ci {
                        let src = &xs[c * h * wd..(c + 1) * h * wd];
                        for i in 0..k {
                            let oy = i as isize - p;
                            for j in 0..k {
                                let ox = j as isize - p;
                                let widx = ((o * ci + c) * k + i) * k + j;
                                let wv = ws[widx];
                                let xr = valid_range(wd, ox);
                                let s0 = (xr.start as isize + ox) as usize;
                                let mut acc = 0.0;
                                for y in valid_range(h, oy) {
                                    let sy = (y as isize + oy) as usize;
                                    let gr = &gp[y * wd + xr.start..y * wd + xr.end];
                                    let srow = sy * wd + s0..sy * wd + s0 + xr.len();
                                    if needs[1] {
                                        acc += gr.iter().zip(&src[srow.clone()]).map(|(a, b)| a * b).sum::<f64>();
                                    }
                                    if needs[0] && wv != 0.0 {
                                        let d = &mut dx[c * h * wd..(c + 1) * h * wd][srow];
                                        d.iter_mut().zip(gr).for_each(|(d, g)| *d += wv * g);
                                    }
                                }
                                if needs[1] {
                                    dw[widx] += acc;
                                }
                            }
                        }
                    }
                }
                vec![dx, dw]
            }),
        ))
    }

    /// 2×2 average pooling of `(C, H, W)` with even `H`, `W`.
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = chw(self.value(a), "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return dim_err(format!("avg_pool2: odd spatial size {h}x{w}"));
        }
        let (h2, w2) = (h / 2, w / 2);
        let x = self.value(a).data();
        let out = Tensor::from_fn(&[c, h2, w2], |idx| {
            let (ch, r) = (idx / (h2 * w2), idx % (h2 * w2));
            let (y, xx) = (r / w2, r % w2);
            let b = ch * h * w + 2 * y * w + 2 * xx;
            0.25 * (x[b] + x[b + 1] + x[b + w] + x[b + w + 1])
        });
        Ok(self.push(
            out,
            &[a],
            "avg_pool2",
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; c * h * w];
                for (idx, gv) in g.iter().enumerate() {
                    let (ch, r) = (idx / (h2 * w2), idx % (h2 * w2));
                    let (y, xx) = (r / w2, r % w2);
                    let b = ch * h * w + 2 * y * w + 2 * xx;
                    for t in [b, b + 1, b + w, b + w + 1] {
                        dx[t] = 0.25 * gv;
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Nearest-neighbour ×2 upsampling of `(C, H, W)`.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = chw(self.value(a), "upsample2")?;
        let (h2, w2) = (2 * h, 2 * w);
        let x = self.value(a).data();
        let out = Tensor::from_fn(&[c, h2, w2], |idx| {
            let (ch, r) = (idx / (h2 * w2), idx % (h2 * w2));
            x[ch * h * w + (r / w2 / 2) * w + (r % w2) / 2]
        });
        Ok(self.push(
            out,
            &[a],
            "upsample2",
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; c * h * w];
                for (idx, gv) in g.iter().enumerate() {
                    let (ch, r) = (idx / (h2 * w2), idx % (h2 * w2));
                    dx[ch * h * w + (r / w2 / 2) * w + (r % w2) / 2] += gv;
                }
                vec![dx]
            }),
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(first) = parts.first() else {
            return param_err("concat of nothing");
        };
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return dim_err(format!("concat axis {axis} for rank {}", base.len()));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return dim_err(format!("concat: {s:?} vs {base:?} on axis {axis}"));
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                let d = self.value(*p).data();
                out.extend_from_slice(&d[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(
            out,
            parts,
            "concat",
            Box::new(move |g, _, _| {
                let mut grads: Vec<Vec<f64>> = lens.iter().map(|l| Vec::with_capacity(outer * l * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gr, &l) in grads.iter_mut().zip(&lens) {
                        gr.extend_from_slice(&g[pos..pos + l * inner]);
                        pos += l * inner;
                    }
                }
                grads
            }),
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return dim_err(format!("slice {start}..{} of axis {axis} in {shape:?}", start + len));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = (o * n + start) * inner;
            out.extend_from_slice(&x[b..b + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let out = Tensor::new(oshape, out)?;
        Ok(self.push(
            out,
            &[a],
            "slice",
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let b = (o * n + start) * inner;
                    dx[b..b + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![dx]
            }),
        ))
    }

    /// Cyclic shift of the last two axes by `(sy, sx)`.
    pub fn circular_shift(&mut self, a: Var, sy: isize, sx: isize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return dim_err(format!("circular_shift needs rank >= 2, got {shape:?}"));
        }
        let out = Tensor::new(shape.clone(), shift_last2(self.value(a).data(), &shape, sy, sx))?;
        Ok(self.push(
            out,
            &[a],
            "circular_shift",
            Box::new(move |g, _, _| vec![shift_last2(g, &shape, -sy, -sx)]),
        ))
    }

    /// Reorders `axis` so that output entry `i` is input entry `perm[i]`.
    pub fn permute_axis(&mut self, a: Var, axis: usize, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || perm.len() != shape[axis] {
            return dim_err(format!(
                "permutation of length {} for axis {axis} of {shape:?}",
                perm.len()
            ));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return param_err(format!("{perm:?} is not a permutation"));
            }
        }
        let perm = perm.to_vec();
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for (i, &src) in perm.iter().enumerate() {
                let d = (o * n + i) * inner;
                let s = (o * n + src) * inner;
                out[d..d + inner].copy_from_slice(&x[s..s + inner]);
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(
            out,
            &[a],
            "permute_axis",
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for (i, &src) in perm.iter().enumerate() {
                        let d = (o * n + i) * inner;
                        let s = (o * n + src) * inner;
                        dx[s..s + inner].copy_from_slice(&g[d..d + inner]);
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Group-transpose permutation of `axis`: the axis is viewed as
    /// `groups × (n / groups)` and transposed.
    pub fn channel_shuffle(&mut self, a: Var, axis: usize, groups: usize) -> Result<Var> {
        let n = *self.shape(a).get(axis).unwrap_or(&0);
        let perm = shuffle_permutation(n, groups)?;
        self.permute_axis(a, axis, &perm)
    }

    /// Inverse of [`Graph::channel_shuffle`].
    pub fn channel_unshuffle(&mut self, a: Var, axis: usize, groups: usize) -> Result<Var> {
        let n = *self.shape(a).get(axis).unwrap_or(&0);
        let perm = shuffle_permutation(n, groups)?;
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        self.permute_axis(a, axis, &inv)
    }

    /// Applies `op` to `a`, whose shape must equal `op.in_shape()`.
    pub fn linear(&mut self, a: Var, op: Arc<dyn LinearMap>) -> Result<Var> {
        if self.shape(a) != op.in_shape() {
            return dim_err(format!(
                "linear map expects {:?}, got {:?}",
                op.in_shape(),
                self.shape(a)
            ));
        }
        let out = Tensor::new(op.out_shape(), op.apply(self.value(a).data()))?;
        Ok(self.push(out, &[a], "linear", Box::new(move |g, _, _| vec![op.adjoint(g)])))
    }

    /// Applies the adjoint of `op` to `a`, whose shape must equal `op.out_shape()`.
    pub fn linear_adjoint(&mut self, a: Var, op: Arc<dyn LinearMap>) -> Result<Var> {
        if self.shape(a) != op.out_shape() {
            return dim_err(format!("adjoint expects {:?}, got {:?}", op.out_shape(), self.shape(a)));
        }
        let out = Tensor::new(op.in_shape(), op.adjoint(self.value(a).data()))?;
        Ok(self.push(out, &[a], "linear_adjoint", Box::new(move |g, _, _| vec![op.apply(g)])))
    }
}

/// Source index for every output channel of a `groups`-way shuffle.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || channels == 0 || channels % groups != 0 {
        return param_err(format!("{channels} channels cannot form {groups} groups"));
    }
    let per = channels / groups;
    // output position j*groups + i takes input i*per + j
    let mut perm = vec![0; channels];
    for i in 0..groups {
        for j in 0..per {
            perm[j * groups + i] = i * per + j;
        }
    }
    Ok(perm)
}

pub(crate) fn matmul_raw(x: &[f64], y: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let xv = x[i * k + t];
            if xv != 0.0 {
                orow.iter_mut()
                    .zip(&y[t * n..(t + 1) * n])
                    .for_each(|(o, y)| *o += xv * y);
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn product_rule_by_hand() {
        let mut g = Graph::new();
        let a = g.variable(t(&[2], &[1.0, 2.0]));
        let b = g.variable(t(&[2], &[3.0, -1.0]));
        let c = g.constant(t(&[2], &[5.0, 5.0]));
        let ab = g.mul(a, b).unwrap();
        let s = g.add(ab, c).unwrap();
        let sq = g.mul(s, s).unwrap();
        let r = g.sum(sq);
        assert_eq!(g.value(r).data(), &[64.0 + 9.0]);
        let gr = g.backward(r).unwrap();
        // d/da = 2 s b
        assert_eq!(gr.wrt(a).data(), &[2.0 * 8.0 * 3.0, 2.0 * 3.0 * -1.0]);
        assert_eq!(gr.wrt(b).data(), &[2.0 * 8.0 * 1.0, 2.0 * 3.0 * 2.0]);
        assert!(gr.get(c).is_none());
    }

    #[test]
    fn matmul_values() {
        let mut g = Graph::new();
        let a = g.variable(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.variable(t(&[3, 1], &[1.0, 0.0, -1.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[-2.0, -2.0]);
        let at = g.transpose(a).unwrap();
        assert_eq!(g.value(at).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[1000.0, 1001.0, 999.0, -3.0, 0.0, 2.0]));
        let s = g.softmax_last(a);
        for row in g.value(s).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 4, 5], |i| i as f64));
        let mut w = Tensor::zeros(&[2, 2, 3, 3]);
        w.data_mut()[4] = 1.0; // out 0 <- in 0 center
        w.data_mut()[9 + 9 + 9 + 4] = 1.0; // out 1 <- in 1 center
        let wv = g.constant(w);
        let y = g.conv2d(x, wv).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn shift_and_permutation_inverses() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let s = g.circular_shift(x, 1, -2).unwrap();
        let back = g.circular_shift(s, -1, 2).unwrap();
        assert_eq!(g.value(back), g.value(x));
        let p = g.permute_axis(x, 2, &[2, 0, 3, 1]).unwrap();
        let q = g.permute_axis(p, 2, &[1, 3, 0, 2]).unwrap();
        assert_eq!(g.value(q), g.value(x));
        assert!(g.permute_axis(x, 2, &[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn non_finite_node_is_reported() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1], &[f64::MAX]));
        let b = g.scale(a, 10.0);
        let e = g.check_finite().unwrap_err();
        assert!(e.to_string().contains(&format!("node {}", b.id())));
    }
}
