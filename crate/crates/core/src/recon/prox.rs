//! Proximal maps for the classical priors.

/// `sign(v)·max(|v| − θ, 0)`.
pub fn soft_threshold(v: f64, theta: f64) -> f64 {
    v.signum() * (v.abs() - theta).max(0.0)
}

/// Exact prox of `θ·Σ|x[k+1] − x[k]|` (1-D total variation) by Condat's
/// direct algorithm.
pub fn tv1d_prox(input: &[f64], theta: f64, output: &mut [f64]) {
    let n = input.len();
    assert_eq!(n, output.len());
    if n == 0 {
        return;
    }
    if theta <= 0.0 {
        output.copy_from_slice(input);
        return;
    }
    let lam = theta;
    let (mut k, mut k0) = (0usize, 0usize);
    let (mut umin, mut umax) = (lam, -lam);
    let (mut vmin, mut vmax) = (input[0] - lam, input[0] + lam);
    let (mut kplus, mut kminus) = (0usize, 0usize);
    loop {
        while k == n - 1 {
            if umin < 0.0 {
                loop {
                    output[k0] = vmin;
                    k0 += 1;
                    if k0 > kminus {
                        break;
                    }
                }
                k = k0;
                kminus = k0;
                let old_vmax = vmax;
                vmin = input[k0];
                umin = lam;
                umax = vmin + umin - old_vmax;
            } else if umax > 0.0 {
                loop {
                    output[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                k = k0;
                kplus = k0;
                let old_vmin = vmin;
                vmax = input[k0];
                umax = -lam;
                umin = vmax + umax - old_vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                while k0 <= k {
                    output[k0] = vmin;
                    k0 += 1;
                }
                return;
            }
        }
        umin += input[k + 1] - vmin;
        if umin < -lam {
            loop {
                output[k0] = vmin;
                k0 += 1;
                if k0 > kminus {
                    break;
                }
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmin = input[k0];
            vmax = vmin + 2.0 * lam;
            umin = lam;
            umax = -lam;
            continue;
        }
        umax += input[k + 1] - vmax;
        if umax > lam {
            loop {
                output[k0] = vmax;
                k0 += 1;
                if k0 > kplus {
                    break;
                }
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmax = input[k0];
            vmin = vmax - 2.0 * lam;
            umin = lam;
            umax = -lam;
        } else {
            k += 1;
            if umin >= lam {
                kminus = k;
                vmin += (umin - lam) / (kminus - k0 + 1) as f64;
                umin = lam;
            }
            if umax <= -lam {
                kplus = k;
                vmax += (umax + lam) / (kplus - k0 + 1) as f64;
                umax = -lam;
            }
        }
    }
}

/// Isotropic total variation of one `h × w` plane (forward differences).
pub fn tv2d(x: &[f64], h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = x[i * w + j];
            let dx = if j + 1 < w { x[i * w + j + 1] - v } else { 0.0 };
            let dy = if i + 1 < h { x[(i + 1) * w + j] - v } else { 0.0 };
            s += (dx * dx + dy * dy).sqrt();
        }
    }
    s
}

/// Approximate prox of `θ·TV` on one plane: Chambolle's dual projection,
/// `iters` iterations with step 1/8.
pub fn tv2d_prox(v: &[f64], h: usize, w: usize, theta: f64, iters: usize) -> Vec<f64> {
    if theta <= 0.0 {
        return v.to_vec();
    }
    let n = h * w;
    let tau = 0.125;
    let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
    let div = |px: &[f64], py: &[f64]| -> Vec<f64> {
        let mut d = vec![0.0; n];
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                let ax = if j + 1 < w { px[k] } else { 0.0 } - if j > 0 { px[k - 1] } else { 0.0 };
                let ay = if i + 1 < h { py[k] } else { 0.0 } - if i > 0 { py[k - w] } else { 0.0 };
                d[k] = ax + ay;
            }
        }
        d
    };
    for _ in 0..iters {
        let d = div(&px, &py);
        let u: Vec<f64> = d.iter().zip(v).map(|(d, v)| d - v / theta).collect();
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                let gx = if j + 1 < w { u[k + 1] - u[k] } else { 0.0 };
                let gy = if i + 1 < h { u[k + w] - u[k] } else { 0.0 };
                let m = 1.0 + tau * (gx * gx + gy * gy).sqrt();
                px[k] = (px[k] + tau * gx) / m;
                py[k] = (py[k] + tau * gy) / m;
            }
        }
    }
    let d = div(&px, &py);
    v.iter().zip(&d).map(|(v, d)| v - theta * d).collect()
}
