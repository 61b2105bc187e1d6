//! Reverse-mode automatic differentiation over real-valued tensors.
//!
//! The tape is rebuilt every step (define-by-run): op constructors evaluate
//! eagerly, record the node, and [`Tape::backward`] walks the nodes once in
//! reverse order. All complex-layer arithmetic in this crate is expressed
//! through these real primitives, so gradients flow end to end.

pub mod conv;
mod gradcheck;
pub mod norm;

pub use gradcheck::grad_check;

use rayon::prelude::*;

use crate::error::{CaeError, Result};
use crate::tensor::RealTensor;
use conv::{ConvGeom, ConvTGeom};
use norm::NormSaved;

/// Below this element count parallel dispatch costs more than it saves.
const PAR_MIN: usize = 1 << 15;

/// Deterministic elementwise map: indexed parallel iteration, each element
/// written exactly once, no pre-zeroing.
fn par_map1(a: &[f64], f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    if a.len() < PAR_MIN {
        return a.iter().map(|&x| f(x)).collect();
    }
    let mut out = Vec::new();
    a.par_iter().map(|&x| f(x)).collect_into_vec(&mut out);
    out
}

fn par_map2(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    if a.len() < PAR_MIN {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let mut out = Vec::new();
    a.par_iter()
        .zip(b.par_iter())
        .map(|(&x, &y)| f(x, y))
        .collect_into_vec(&mut out);
    out
}

fn par_map3(
    a: &[f64],
    b: &[f64],
    c: &[f64],
    f: impl Fn(f64, f64, f64) -> f64 + Sync,
) -> Vec<f64> {
    debug_assert!(a.len() == b.len() && b.len() == c.len());
    if a.len() < PAR_MIN {
        return (0..a.len()).map(|i| f(a[i], b[i], c[i])).collect();
    }
    let mut out = Vec::new();
    a.par_iter()
        .zip(b.par_iter())
        .zip(c.par_iter())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect_into_vec(&mut out);
    out
}

/// Stabilizer for gradients of magnitude and angle at the origin.
pub const EPS_GRAD: f64 = 1e-8;

/// Floor for directional normalization |z| >= sqrt(eps_grad): below it a
/// complex activation's direction is numerically meaningless and the
/// rescaled output is attenuated toward zero instead.
pub const DIR_FLOOR: f64 = 1e-4;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Running statistics owned by a batch-norm layer, updated in place by
/// train-mode forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBuffers {
    pub running_mean: RealTensor,
    pub running_var: RealTensor,
}

impl BnBuffers {
    pub fn new(channels: usize) -> Self {
        BnBuffers {
            running_mean: RealTensor::zeros(&[channels]),
            running_var: RealTensor::filled(&[channels], 1.0),
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvTGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: NormSaved,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: NormSaved,
    },
    Relu(Var),
    Sigmoid(Var),
    SqrtEps(Var),
    Atan2 {
        im: Var,
        re: Var,
    },
    Magnitude {
        re: Var,
        im: Var,
    },
    PolarRe {
        mag: Var,
        phase: Var,
    },
    PolarIm {
        mag: Var,
        phase: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    MaxScalar(Var, f64),
    MixHalf(Var, Var),
    RotChanRe {
        re: Var,
        im: Var,
        bias: Var,
    },
    RotChanIm {
        re: Var,
        im: Var,
        bias: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Reshape(Var),
    Clamp01(Var),
    Sum(Var),
    MseLoss {
        pred: Var,
        target: RealTensor,
    },
}

struct Node {
    value: RealTensor,
    op: Op,
}

/// Define-by-run computation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<RealTensor>>,
}

/// Keep multi-megabyte tensor buffers inside the heap instead of cycling
/// them through mmap/munmap; the tape allocates and frees hundreds of them
/// per training step and the page-fault churn otherwise dominates.
#[cfg(target_os = "linux")]
fn tune_allocator() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 512 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 512 << 20);
    });
}

#[cfg(not(target_os = "linux"))]
fn tune_allocator() {}

impl Tape {
    pub fn new() -> Self {
        tune_allocator();
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: RealTensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Insert a leaf (input or parameter) node.
    pub fn leaf(&mut self, value: RealTensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &RealTensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward target w.r.t. `v`; `None` when `v` does
    /// not influence it.
    pub fn grad(&self, v: Var) -> Option<&RealTensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn grad_or_zeros(&self, v: Var) -> RealTensor {
        match self.grad(v) {
            Some(g) => g.clone(),
            None => RealTensor::zeros(self.value(v).shape()),
        }
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::infer(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        if let Some(b) = b {
            if self.value(b).shape() != [geom.c_out] {
                return Err(CaeError::ShapeMismatch(format!(
                    "conv2d bias {:?} vs {} output channels",
                    self.value(b).shape(),
                    geom.c_out
                )));
            }
        }
        let y = conv::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let value = RealTensor::from_vec(&geom.out_shape(), y)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let geom = ConvTGeom::infer(
            self.value(x).shape(),
            self.value(w).shape(),
            stride,
            pad,
            output_pad,
        )?;
        if let Some(b) = b {
            if self.value(b).shape() != [geom.c_out] {
                return Err(CaeError::ShapeMismatch(format!(
                    "conv_transpose2d bias {:?} vs {} output channels",
                    self.value(b).shape(),
                    geom.c_out
                )));
            }
        }
        let y = conv::conv_transpose2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let value = RealTensor::from_vec(&geom.out_shape(), y)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(CaeError::ShapeMismatch(format!(
                "linear expects x [n, d], w [e, d]; got {:?} and {:?}",
                xs, ws
            )));
        }
        let (n, d, e) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.value(b).shape() != [e] {
                return Err(CaeError::ShapeMismatch(format!(
                    "linear bias {:?} vs {} output features",
                    self.value(b).shape(),
                    e
                )));
            }
        }
        let y = conv::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            n,
            d,
            e,
        );
        let value = RealTensor::from_vec(&[n, e], y)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    fn norm_shapes(&self, x: Var, gamma: Var, beta: Var, rank: usize) -> Result<Vec<usize>> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != rank {
            return Err(CaeError::ShapeMismatch(format!(
                "normalization expects rank-{} input, got {:?}",
                rank, xs
            )));
        }
        let features = if rank == 4 { xs[1] } else { xs[1] };
        if self.value(gamma).shape() != [features] || self.value(beta).shape() != [features] {
            return Err(CaeError::ShapeMismatch(format!(
                "normalization scale/shift must have shape [{}]",
                features
            )));
        }
        Ok(xs)
    }

    /// Train-mode batch norm over `[n, c, h, w]`: standardizes with batch
    /// statistics and updates `bufs` in place with the momentum rule.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        bufs: &mut BnBuffers,
    ) -> Result<Var> {
        let xs = self.norm_shapes(x, gamma, beta, 4)?;
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        if n < 2 {
            return Err(CaeError::InvalidArgument(
                "train-mode batch norm needs batch size >= 2".into(),
            ));
        }
        let (y, saved, mean, var) = norm::batch_norm_train_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            n,
            c,
            hw,
        );
        for ch in 0..c {
            let rm = &mut bufs.running_mean.data_mut()[ch];
            *rm = (1.0 - norm::BN_MOMENTUM) * *rm + norm::BN_MOMENTUM * mean[ch];
            let rv = &mut bufs.running_var.data_mut()[ch];
            *rv = (1.0 - norm::BN_MOMENTUM) * *rv + norm::BN_MOMENTUM * var[ch];
        }
        let value = RealTensor::from_vec(&xs, y)?;
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, saved }))
    }

    /// Eval-mode batch norm: standardizes with the running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        bufs: &BnBuffers,
    ) -> Result<Var> {
        let xs = self.norm_shapes(x, gamma, beta, 4)?;
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let (y, saved) = norm::batch_norm_eval_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            bufs.running_mean.data(),
            bufs.running_var.data(),
            n,
            c,
            hw,
        );
        let value = RealTensor::from_vec(&xs, y)?;
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, saved }))
    }

    /// Per-sample standardization over the feature axis of `[n, d]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.norm_shapes(x, gamma, beta, 2)?;
        let (n, d) = (xs[0], xs[1]);
        let (y, saved) = norm::layer_norm_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            n,
            d,
        );
        let value = RealTensor::from_vec(&xs, y)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, saved }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = par_map1(self.value(x).data(), |v| v.max(0.0));
        let value = RealTensor::from_vec(self.value(x).shape(), data).expect("relu shape");
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = par_map1(self.value(x).data(), |v| 1.0 / (1.0 + (-v).exp()));
        let value = RealTensor::from_vec(self.value(x).shape(), data).expect("sigmoid shape");
        self.push(value, Op::Sigmoid(x))
    }

    /// sqrt(x + eps_grad); total, with gradient bounded by 1/(2 sqrt(eps)).
    pub fn sqrt_eps(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| (v + EPS_GRAD).sqrt());
        self.push(value, Op::SqrtEps(x))
    }

    /// Elementwise atan2(im, re). Gradients use eps-stabilized denominators.
    pub fn atan2(&mut self, im: Var, re: Var) -> Result<Var> {
        self.check_same(im, re)?;
        let data = par_map2(self.value(im).data(), self.value(re).data(), f64::atan2);
        let value = RealTensor::from_vec(self.value(im).shape(), data)?;
        Ok(self.push(value, Op::Atan2 { im, re }))
    }

    /// Elementwise sqrt(re^2 + im^2). The value is exact; the gradient
    /// denominator is clamped at sqrt(eps_grad) so it stays bounded at the
    /// origin.
    pub fn magnitude(&mut self, re: Var, im: Var) -> Result<Var> {
        self.check_same(re, im)?;
        let data = par_map2(self.value(re).data(), self.value(im).data(), |r, i| {
            (r * r + i * i).sqrt()
        });
        let value = RealTensor::from_vec(self.value(re).shape(), data)?;
        Ok(self.push(value, Op::Magnitude { re, im }))
    }

    fn check_same(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CaeError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// mag * cos(phase)
    pub fn polar_re(&mut self, mag: Var, phase: Var) -> Result<Var> {
        let value = self.value(mag).zip_map(self.value(phase), |m, p| m * p.cos())?;
        Ok(self.push(value, Op::PolarRe { mag, phase }))
    }

    /// mag * sin(phase)
    pub fn polar_im(&mut self, mag: Var, phase: Var) -> Result<Var> {
        let value = self.value(mag).zip_map(self.value(phase), |m, p| m * p.sin())?;
        Ok(self.push(value, Op::PolarIm { mag, phase }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let data = par_map2(self.value(a).data(), self.value(b).data(), |a, b| a + b);
        let value = RealTensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let data = par_map2(self.value(a).data(), self.value(b).data(), |a, b| a - b);
        let value = RealTensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let data = par_map2(self.value(a).data(), self.value(b).data(), |a, b| a * b);
        let value = RealTensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let data = par_map2(self.value(a).data(), self.value(b).data(), |a, b| a / b);
        let value = RealTensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(value, Op::Div(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).scale(c);
        self.push(value, Op::Scale(x, c))
    }

    /// Elementwise max(x, c); subgradient 0 at the kink.
    pub fn max_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v.max(c));
        self.push(value, Op::MaxScalar(x, c))
    }

    fn rot_chan_values(
        &self,
        re: Var,
        im: Var,
        bias: Var,
        f: impl Fn(f64, f64, f64, f64) -> f64 + Sync,
    ) -> Result<RealTensor> {
        let xs = self.value(re).shape().to_vec();
        let bs = self.value(bias).shape();
        if self.value(im).shape() != xs.as_slice()
            || !(xs.len() == 4 || xs.len() == 2)
            || bs.len() != 1
            || bs[0] != xs[1]
        {
            return Err(CaeError::ShapeMismatch(format!(
                "channel rotation: re {:?}, im {:?}, bias {:?}",
                xs,
                self.value(im).shape(),
                bs
            )));
        }
        let hw: usize = xs[2..].iter().product();
        let c = xs[1];
        let cs: Vec<(f64, f64)> = self.value(bias).iter().map(|&b| (b.cos(), b.sin())).collect();
        let (rev, imv) = (self.value(re).data(), self.value(im).data());
        let mut out = vec![0.0; rev.len()];
        out.par_chunks_mut(hw)
            .zip(rev.par_chunks(hw).zip(imv.par_chunks(hw)))
            .enumerate()
            .for_each(|(block, (ob, (rb, ib)))| {
                let (cb, sb) = cs[block % c];
                for ((o, &r), &i) in ob.iter_mut().zip(rb).zip(ib) {
                    *o = f(r, i, cb, sb);
                }
            });
        RealTensor::from_vec(&xs, out)
    }

    /// Real part of (re + i im) * e^{i bias_c}, bias per channel.
    pub fn rot_chan_re(&mut self, re: Var, im: Var, bias: Var) -> Result<Var> {
        let value = self.rot_chan_values(re, im, bias, |r, i, c, s| r * c - i * s)?;
        Ok(self.push(value, Op::RotChanRe { re, im, bias }))
    }

    /// Imaginary part of (re + i im) * e^{i bias_c}, bias per channel.
    pub fn rot_chan_im(&mut self, re: Var, im: Var, bias: Var) -> Result<Var> {
        let value = self.rot_chan_values(re, im, bias, |r, i, c, s| r * s + i * c)?;
        Ok(self.push(value, Op::RotChanIm { re, im, bias }))
    }

    /// Fixed equal-weight mix 0.5 a + 0.5 b.
    pub fn mix_half(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let data = par_map2(self.value(a).data(), self.value(b).data(), |a, b| {
            0.5 * a + 0.5 * b
        });
        let value = RealTensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(value, Op::MixHalf(a, b)))
    }

    /// Broadcast a per-channel bias over `[n, c, h, w]` or a per-feature bias
    /// over `[n, d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if !(xs.len() == 4 || xs.len() == 2) || bs.len() != 1 || bs[0] != xs[1] {
            return Err(CaeError::ShapeMismatch(format!(
                "add_bias: input {:?} vs bias {:?}",
                xs, bs
            )));
        }
        let hw: usize = xs[2..].iter().product();
        let c = xs[1];
        let b = self.value(bias).data().to_vec();
        let mut y = self.value(x).data().to_vec();
        y.par_chunks_mut(hw).enumerate().for_each(|(block, yb)| {
            let bv = b[block % c];
            for v in yb {
                *v += bv;
            }
        });
        let value = RealTensor::from_vec(&xs, y)?;
        Ok(self.push(value, Op::AddBias { x, bias }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn clamp01(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.clamp(0.0, 1.0));
        self.push(value, Op::Clamp01(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).iter().sum();
        self.push(RealTensor::scalar(total), Op::Sum(x))
    }

    /// Mean over all elements of (pred - target)^2.
    pub fn mse_loss(&mut self, pred: Var, target: &RealTensor) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(CaeError::ShapeMismatch(format!(
                "mse_loss: pred {:?} vs target {:?}",
                self.value(pred).shape(),
                target.shape()
            )));
        }
        let m = target.len() as f64;
        let loss = self
            .value(pred)
            .iter()
            .zip(target.iter())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<f64>()
            / m;
        Ok(self.push(
            RealTensor::scalar(loss),
            Op::MseLoss {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Reverse pass from a scalar loss: visits every node at most once in
    /// reverse creation order and accumulates gradients into the leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.is_empty() {
            return Err(CaeError::InvalidArgument("backward on an empty tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(CaeError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<RealTensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(RealTensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.apply_backward(i, &gy, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn apply_backward(&self, i: usize, gy: &RealTensor, grads: &mut [Option<RealTensor>]) {
        fn acc(grads: &mut [Option<RealTensor>], v: Var, delta: RealTensor) {
            match &mut grads[v.0] {
                Some(g) => {
                    let gd = g.data_mut();
                    if gd.len() < PAR_MIN {
                        for (a, b) in gd.iter_mut().zip(delta.data()) {
                            *a += b;
                        }
                    } else {
                        gd.par_iter_mut().zip(delta.data().par_iter()).for_each(|(a, b)| {
                            *a += b;
                        });
                    }
                }
                slot => *slot = Some(delta),
            }
        }

        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = conv::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy.data(),
                    geom,
                );
                acc(
                    grads,
                    *x,
                    RealTensor::from_vec(self.value(*x).shape(), dx).expect("conv dx shape"),
                );
                acc(
                    grads,
                    *w,
                    RealTensor::from_vec(self.value(*w).shape(), dw).expect("conv dw shape"),
                );
                if let Some(b) = b {
                    acc(grads, *b, RealTensor::from_vec(&[geom.c_out], db).expect("conv db shape"));
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (dx, dw, db) = conv::conv_transpose2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy.data(),
                    geom,
                );
                acc(
                    grads,
                    *x,
                    RealTensor::from_vec(self.value(*x).shape(), dx).expect("tconv dx shape"),
                );
                acc(
                    grads,
                    *w,
                    RealTensor::from_vec(self.value(*w).shape(), dw).expect("tconv dw shape"),
                );
                if let Some(b) = b {
                    acc(grads, *b, RealTensor::from_vec(&[geom.c_out], db).expect("tconv db shape"));
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let (n, d, e) = (xs[0], xs[1], ws[0]);
                let (dx, dw, db) = conv::linear_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy.data(),
                    n,
                    d,
                    e,
                );
                acc(grads, *x, RealTensor::from_vec(&[n, d], dx).expect("linear dx shape"));
                acc(grads, *w, RealTensor::from_vec(&[e, d], dw).expect("linear dw shape"));
                if let Some(b) = b {
                    acc(grads, *b, RealTensor::from_vec(&[e], db).expect("linear db shape"));
                }
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let xs = self.value(*x).shape();
                let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                let (dx, dgamma, dbeta) = norm::batch_norm_backward(
                    self.value(*x).data(),
                    self.value(*gamma).data(),
                    gy.data(),
                    saved,
                    n,
                    c,
                    hw,
                );
                acc(grads, *x, RealTensor::from_vec(xs, dx).expect("bn dx shape"));
                acc(grads, *gamma, RealTensor::from_vec(&[c], dgamma).expect("bn dgamma shape"));
                acc(grads, *beta, RealTensor::from_vec(&[c], dbeta).expect("bn dbeta shape"));
            }
            Op::LayerNorm { x, gamma, beta, saved } => {
                let xs = self.value(*x).shape();
                let (n, d) = (xs[0], xs[1]);
                let (dx, dgamma, dbeta) = norm::layer_norm_backward(
                    self.value(*x).data(),
                    self.value(*gamma).data(),
                    gy.data(),
                    saved,
                    n,
                    d,
                );
                acc(grads, *x, RealTensor::from_vec(xs, dx).expect("ln dx shape"));
                acc(grads, *gamma, RealTensor::from_vec(&[d], dgamma).expect("ln dgamma shape"));
                acc(grads, *beta, RealTensor::from_vec(&[d], dbeta).expect("ln dbeta shape"));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = par_map2(xv.data(), gy.data(), |x, g| if x > 0.0 { g } else { 0.0 });
                acc(grads, *x, RealTensor::from_vec(xv.shape(), data).expect("relu shapes"));
            }
            Op::Sigmoid(x) => {
                let data = par_map2(node.value.data(), gy.data(), |y, g| g * y * (1.0 - y));
                acc(
                    grads,
                    *x,
                    RealTensor::from_vec(node.value.shape(), data).expect("sigmoid shapes"),
                );
            }
            Op::SqrtEps(x) => {
                let d = node.value.zip_map(gy, |y, g| g * 0.5 / y).expect("sqrt shapes");
                acc(grads, *x, d);
            }
            Op::Atan2 { im, re } => {
                let (rev, imv) = (self.value(*re), self.value(*im));
                let dim = par_map3(rev.data(), imv.data(), gy.data(), |r, i, g| {
                    g * r / (r * r + i * i + EPS_GRAD)
                });
                let dre = par_map3(rev.data(), imv.data(), gy.data(), |r, i, g| {
                    -g * i / (r * r + i * i + EPS_GRAD)
                });
                acc(grads, *im, RealTensor::from_vec(imv.shape(), dim).expect("atan2 dim shape"));
                acc(grads, *re, RealTensor::from_vec(rev.shape(), dre).expect("atan2 dre shape"));
            }
            Op::Magnitude { re, im } => {
                let (rev, imv) = (self.value(*re), self.value(*im));
                let floor = EPS_GRAD.sqrt();
                let dre = par_map3(rev.data(), node.value.data(), gy.data(), |r, m, g| {
                    g * r / m.max(floor)
                });
                let dim = par_map3(imv.data(), node.value.data(), gy.data(), |i, m, g| {
                    g * i / m.max(floor)
                });
                acc(grads, *re, RealTensor::from_vec(rev.shape(), dre).expect("mag dre shape"));
                acc(grads, *im, RealTensor::from_vec(imv.shape(), dim).expect("mag dim shape"));
            }
            Op::PolarRe { mag, phase } => {
                let p = self.value(*phase);
                let m = self.value(*mag);
                let dm = p.zip_map(gy, |p, g| g * p.cos()).expect("polar shapes");
                let dp = m
                    .zip_map(p, |m, p| -m * p.sin())
                    .and_then(|t| t.mul(gy))
                    .expect("polar shapes");
                acc(grads, *mag, dm);
                acc(grads, *phase, dp);
            }
            Op::PolarIm { mag, phase } => {
                let p = self.value(*phase);
                let m = self.value(*mag);
                let dm = p.zip_map(gy, |p, g| g * p.sin()).expect("polar shapes");
                let dp = m
                    .zip_map(p, |m, p| m * p.cos())
                    .and_then(|t| t.mul(gy))
                    .expect("polar shapes");
                acc(grads, *mag, dm);
                acc(grads, *phase, dp);
            }
            Op::Add(a, b) => {
                acc(grads, *a, gy.clone());
                acc(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, gy.clone());
                acc(grads, *b, gy.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let shape = gy.shape().to_vec();
                let da = par_map2(self.value(*b).data(), gy.data(), |b, g| b * g);
                let db = par_map2(self.value(*a).data(), gy.data(), |a, g| a * g);
                acc(grads, *a, RealTensor::from_vec(&shape, da).expect("mul shapes"));
                acc(grads, *b, RealTensor::from_vec(&shape, db).expect("mul shapes"));
            }
            Op::Div(a, b) => {
                let shape = gy.shape().to_vec();
                let da = par_map2(self.value(*b).data(), gy.data(), |b, g| g / b);
                let db = par_map3(self.value(*a).data(), self.value(*b).data(), gy.data(), |a, b, g| {
                    -g * a / (b * b)
                });
                acc(grads, *a, RealTensor::from_vec(&shape, da).expect("div shapes"));
                acc(grads, *b, RealTensor::from_vec(&shape, db).expect("div shapes"));
            }
            Op::Scale(x, c) => {
                acc(grads, *x, gy.scale(*c));
            }
            Op::MaxScalar(x, c) => {
                let d = self
                    .value(*x)
                    .zip_map(gy, |x, g| if x > *c { g } else { 0.0 })
                    .expect("max shapes");
                acc(grads, *x, d);
            }
            Op::MixHalf(a, b) => {
                acc(grads, *a, gy.scale(0.5));
                acc(grads, *b, gy.scale(0.5));
            }
            Op::RotChanRe { re, im, bias } | Op::RotChanIm { re, im, bias } => {
                let re_part = matches!(node.op, Op::RotChanRe { .. });
                let xs = self.value(*re).shape().to_vec();
                let hw: usize = xs[2..].iter().product();
                let c = xs[1];
                let cs: Vec<(f64, f64)> =
                    self.value(*bias).iter().map(|&b| (b.cos(), b.sin())).collect();
                let (rev, imv) = (self.value(*re).data(), self.value(*im).data());
                let mut dre = vec![0.0; rev.len()];
                let mut dim = vec![0.0; rev.len()];
                let mut dbias = vec![0.0; c];
                // dbias accumulates per block in fixed block order.
                let block_sums: Vec<f64> = dre
                    .par_chunks_mut(hw)
                    .zip(dim.par_chunks_mut(hw))
                    .zip(gy.data().par_chunks(hw).zip(rev.par_chunks(hw).zip(imv.par_chunks(hw))))
                    .enumerate()
                    .map(|(block, ((dr, di), (gb, (rb, ib))))| {
                        let (cb, sb) = cs[block % c];
                        let mut s = 0.0;
                        if re_part {
                            for i in 0..gb.len() {
                                let g = gb[i];
                                dr[i] = g * cb;
                                di[i] = -g * sb;
                                // d(re cos b - im sin b)/db = -(re sin b + im cos b)
                                s -= g * (rb[i] * sb + ib[i] * cb);
                            }
                        } else {
                            for i in 0..gb.len() {
                                let g = gb[i];
                                dr[i] = g * sb;
                                di[i] = g * cb;
                                // d(re sin b + im cos b)/db = re cos b - im sin b
                                s += g * (rb[i] * cb - ib[i] * sb);
                            }
                        }
                        s
                    })
                    .collect();
                for (block, s) in block_sums.iter().enumerate() {
                    dbias[block % c] += s;
                }
                acc(grads, *re, RealTensor::from_vec(&xs, dre).expect("rot shapes"));
                acc(grads, *im, RealTensor::from_vec(&xs, dim).expect("rot shapes"));
                acc(grads, *bias, RealTensor::from_vec(&[c], dbias).expect("rot bias"));
            }
            Op::AddBias { x, bias } => {
                acc(grads, *x, gy.clone());
                let xs = self.value(*x).shape();
                let (c, hw): (usize, usize) = (xs[1], xs[2..].iter().product());
                let mut db = vec![0.0; c];
                for chunk in gy.data().chunks_exact(c * hw) {
                    for (ch, acc_v) in db.iter_mut().enumerate() {
                        *acc_v += chunk[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                    }
                }
                acc(grads, *bias, RealTensor::from_vec(&[c], db).expect("bias shape"));
            }
            Op::Reshape(x) => {
                let d = gy
                    .reshaped(self.value(*x).shape())
                    .expect("reshape preserves element count");
                acc(grads, *x, d);
            }
            Op::Clamp01(x) => {
                let d = self
                    .value(*x)
                    .zip_map(gy, |x, g| if x > 0.0 && x < 1.0 { g } else { 0.0 })
                    .expect("clamp shapes");
                acc(grads, *x, d);
            }
            Op::Sum(x) => {
                let g = gy.data()[0];
                acc(grads, *x, RealTensor::filled(self.value(*x).shape(), g));
            }
            Op::MseLoss { pred, target } => {
                let g = gy.data()[0];
                let m = target.len() as f64;
                let d = self
                    .value(*pred)
                    .zip_map(target, |p, t| g * 2.0 * (p - t) / m)
                    .expect("mse shapes");
                acc(grads, *pred, d);
            }
        }
    }
}
