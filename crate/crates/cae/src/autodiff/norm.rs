//! Normalization kernels: per-channel batch normalization over `[n, c, h, w]`
//! and per-sample layer normalization over `[n, d]`.
//!
//! Conventions: biased (1/M) variance in both batch statistics and running
//! statistics, eps = 1e-5 inside the square root, running stats updated as
//! `running = 0.9 * running + 0.1 * batch`.

use rayon::prelude::*;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub struct NormSaved {
    /// Per-channel (batch norm) or per-sample (layer norm) mean used in the
    /// forward pass.
    pub mean: Vec<f64>,
    /// Matching 1/sqrt(var + eps).
    pub inv_std: Vec<f64>,
    /// Batch statistics were used (train mode); eval mode backpropagates
    /// through the affine transform only.
    pub train: bool,
}

/// Train-mode batch norm. Returns the output, the saved context for the
/// backward pass, and the biased batch statistics for the running-average
/// update.
pub fn batch_norm_train_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<f64>, NormSaved, Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    // Per-channel reductions in fixed order; channels run in parallel.
    let stats: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut sum = 0.0;
            for i in 0..n {
                let base = (i * c + ch) * hw;
                sum += x[base..base + hw].iter().sum::<f64>();
            }
            let mu = sum / m;
            let mut sq = 0.0;
            for i in 0..n {
                let base = (i * c + ch) * hw;
                for &v in &x[base..base + hw] {
                    let d = v - mu;
                    sq += d * d;
                }
            }
            (mu, sq / m)
        })
        .collect();
    let mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let var: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut y = vec![0.0; x.len()];
    y.par_chunks_mut(hw)
        .zip(x.par_chunks(hw))
        .enumerate()
        .for_each(|(block, (yb, xb))| {
            let ch = block % c;
            let (mu, inv, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for (y, &x) in yb.iter_mut().zip(xb) {
                *y = (x - mu) * inv * g + b;
            }
        });
    let saved = NormSaved {
        mean: mean.clone(),
        inv_std,
        train: true,
    };
    (y, saved, mean, var)
}

pub fn batch_norm_eval_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<f64>, NormSaved) {
    let _ = n;
    let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut y = vec![0.0; x.len()];
    y.par_chunks_mut(hw)
        .zip(x.par_chunks(hw))
        .enumerate()
        .for_each(|(block, (yb, xb))| {
            let ch = block % c;
            let (mu, inv, g, b) = (running_mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for (y, &x) in yb.iter_mut().zip(xb) {
                *y = (x - mu) * inv * g + b;
            }
        });
    let saved = NormSaved {
        mean: running_mean.to_vec(),
        inv_std,
        train: false,
    };
    (y, saved)
}

/// Returns (dx, dgamma, dbeta).
pub fn batch_norm_backward(
    x: &[f64],
    gamma: &[f64],
    dy: &[f64],
    saved: &NormSaved,
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let sums: Vec<(f64, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let (mu, inv) = (saved.mean[ch], saved.inv_std[ch]);
            let mut s1 = 0.0; // sum dy
            let mut s2 = 0.0; // sum dy * xhat
            for i in 0..n {
                let base = (i * c + ch) * hw;
                for j in 0..hw {
                    let g = dy[base + j];
                    s1 += g;
                    s2 += g * (x[base + j] - mu) * inv;
                }
            }
            (s1, s2)
        })
        .collect();
    let dbeta: Vec<f64> = sums.iter().map(|s| s.0).collect();
    let dgamma: Vec<f64> = sums.iter().map(|s| s.1).collect();

    let mut dx = vec![0.0; x.len()];
    dx.par_chunks_mut(hw)
        .zip(x.par_chunks(hw).zip(dy.par_chunks(hw)))
        .enumerate()
        .for_each(|(block, (dxb, (xb, dyb)))| {
            let ch = block % c;
            let (mu, inv) = (saved.mean[ch], saved.inv_std[ch]);
            let (s1, s2) = sums[ch];
            let gscale = gamma[ch] * inv;
            if saved.train {
                for ((dx, &x), &g) in dxb.iter_mut().zip(xb).zip(dyb) {
                    let xhat = (x - mu) * inv;
                    *dx = gscale * (g - s1 / m - xhat * s2 / m);
                }
            } else {
                for (dx, &g) in dxb.iter_mut().zip(dyb) {
                    *dx = gscale * g;
                }
            }
        });
    (dx, dgamma, dbeta)
}

pub fn layer_norm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    n: usize,
    d: usize,
) -> (Vec<f64>, NormSaved) {
    let mut mean = vec![0.0; n];
    let mut inv_std = vec![0.0; n];
    let mut y = vec![0.0; x.len()];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + BN_EPS).sqrt();
        mean[i] = mu;
        inv_std[i] = inv;
        for j in 0..d {
            y[i * d + j] = (row[j] - mu) * inv * gamma[j] + beta[j];
        }
    }
    (
        y,
        NormSaved {
            mean,
            inv_std,
            train: true,
        },
    )
}

pub fn layer_norm_backward(
    x: &[f64],
    gamma: &[f64],
    dy: &[f64],
    saved: &NormSaved,
    n: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for i in 0..n {
        let (mu, inv) = (saved.mean[i], saved.inv_std[i]);
        let row = &x[i * d..(i + 1) * d];
        let grow = &dy[i * d..(i + 1) * d];
        let mut m1 = 0.0; // mean of dy*gamma
        let mut m2 = 0.0; // mean of dy*gamma*xhat
        for j in 0..d {
            let dxhat = grow[j] * gamma[j];
            let xhat = (row[j] - mu) * inv;
            m1 += dxhat;
            m2 += dxhat * xhat;
            dgamma[j] += grow[j] * xhat;
            dbeta[j] += grow[j];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for j in 0..d {
            let dxhat = grow[j] * gamma[j];
            let xhat = (row[j] - mu) * inv;
            dx[i * d + j] = inv * (dxhat - m1 - xhat * m2);
        }
    }
    (dx, dgamma, dbeta)
}
