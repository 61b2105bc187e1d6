//! Convolution kernels: im2col/col2im plus gemm-backed forward and backward
//! passes for `conv2d` and `conv_transpose2d`.
//!
//! Parallelism is over samples only and every output element is accumulated
//! in a fixed order, so results are bitwise identical for any thread count.

use rayon::prelude::*;

use crate::error::{CaeError, Result};

/// Patch extraction geometry over a `[ch, ih, iw]` space producing `oh*ow`
/// patch positions. Shared by the four conv kernels: transposed convolution
/// scatters with the same geometry its adjoint gathers with.
#[derive(Debug, Clone, Copy)]
pub struct PatchGeom {
    pub ch: usize,
    pub ih: usize,
    pub iw: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvTGeom {
    pub n: usize,
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

fn out_dim(i: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = i + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

impl ConvGeom {
    /// Validate shapes `x: [n, c_in, h, w]`, `w: [c_out, c_in, kh, kw]`.
    pub fn infer(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return Err(CaeError::ShapeMismatch(format!(
                "conv2d expects 4-d input/weight, got {:?} and {:?}",
                x_shape, w_shape
            )));
        }
        if x_shape[1] != w_shape[1] {
            return Err(CaeError::ShapeMismatch(format!(
                "conv2d channel mismatch: input {:?} vs weight {:?}",
                x_shape, w_shape
            )));
        }
        if stride == 0 {
            return Err(CaeError::Geometry("conv2d stride must be positive".into()));
        }
        let (kh, kw) = (w_shape[2], w_shape[3]);
        let h_out = out_dim(x_shape[2], kh, stride, pad);
        let w_out = out_dim(x_shape[3], kw, stride, pad);
        match (h_out, w_out) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Ok(ConvGeom {
                n: x_shape[0],
                c_in: x_shape[1],
                h_in: x_shape[2],
                w_in: x_shape[3],
                c_out: w_shape[0],
                kh,
                kw,
                stride,
                pad,
                h_out: h,
                w_out: w,
            }),
            _ => Err(CaeError::Geometry(format!(
                "conv2d output size is non-positive for input {:?}, kernel {:?}, stride {}, pad {}",
                x_shape, w_shape, stride, pad
            ))),
        }
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.c_out, self.h_out, self.w_out]
    }

    fn patch(&self) -> PatchGeom {
        PatchGeom {
            ch: self.c_in,
            ih: self.h_in,
            iw: self.w_in,
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            pad: self.pad,
            oh: self.h_out,
            ow: self.w_out,
        }
    }
}

impl ConvTGeom {
    /// Validate shapes `x: [n, c_in, h, w]`, `w: [c_in, c_out, kh, kw]`.
    pub fn infer(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return Err(CaeError::ShapeMismatch(format!(
                "conv_transpose2d expects 4-d input/weight, got {:?} and {:?}",
                x_shape, w_shape
            )));
        }
        if x_shape[1] != w_shape[0] {
            return Err(CaeError::ShapeMismatch(format!(
                "conv_transpose2d channel mismatch: input {:?} vs weight {:?}",
                x_shape, w_shape
            )));
        }
        if stride == 0 || out_pad >= stride {
            return Err(CaeError::Geometry(format!(
                "conv_transpose2d needs stride > 0 and output padding < stride, got {} / {}",
                stride, out_pad
            )));
        }
        let (kh, kw) = (w_shape[2], w_shape[3]);
        let h_full = (x_shape[2] - 1) * stride + kh + out_pad;
        let w_full = (x_shape[3] - 1) * stride + kw + out_pad;
        if h_full < 2 * pad + 1 || w_full < 2 * pad + 1 {
            return Err(CaeError::Geometry(format!(
                "conv_transpose2d output size is non-positive for input {:?}, kernel {:?}, stride {}, pad {}, output pad {}",
                x_shape, w_shape, stride, pad, out_pad
            )));
        }
        Ok(ConvTGeom {
            n: x_shape[0],
            c_in: x_shape[1],
            h_in: x_shape[2],
            w_in: x_shape[3],
            c_out: w_shape[1],
            kh,
            kw,
            stride,
            pad,
            out_pad,
            h_out: h_full - 2 * pad,
            w_out: w_full - 2 * pad,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.c_out, self.h_out, self.w_out]
    }

    fn patch(&self) -> PatchGeom {
        PatchGeom {
            ch: self.c_out,
            ih: self.h_out,
            iw: self.w_out,
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            pad: self.pad,
            oh: self.h_in,
            ow: self.w_in,
        }
    }
}

/// Gather patches: `col[(c*kh+ki)*kw+kj, oy*ow+ox] = src[c, oy*s-p+ki, ox*s-p+kj]`
/// with zero padding outside the source.
pub fn im2col(src: &[f64], g: &PatchGeom, col: &mut [f64]) {
    debug_assert_eq!(src.len(), g.ch * g.ih * g.iw);
    debug_assert_eq!(col.len(), g.ch * g.kh * g.kw * g.oh * g.ow);
    let positions = g.oh * g.ow;
    for c in 0..g.ch {
        let plane = &src[c * g.ih * g.iw..(c + 1) * g.ih * g.iw];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * positions;
                let dst = &mut col[row..row + positions];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.ih as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.iw..(iy as usize + 1) * g.iw];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        out_row[ox] = if ix < 0 || ix >= g.iw as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add patches back: adjoint of [`im2col`]. `dst` must be zeroed.
pub fn col2im(col: &[f64], g: &PatchGeom, dst: &mut [f64]) {
    debug_assert_eq!(dst.len(), g.ch * g.ih * g.iw);
    debug_assert_eq!(col.len(), g.ch * g.kh * g.kw * g.oh * g.ow);
    let positions = g.oh * g.ow;
    for c in 0..g.ch {
        let plane = &mut dst[c * g.ih * g.iw..(c + 1) * g.ih * g.iw];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * positions;
                let src = &col[row..row + positions];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.ih as isize {
                        continue;
                    }
                    let dst_row =
                        &mut plane[iy as usize * g.iw..(iy as usize + 1) * g.iw];
                    let src_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.iw as isize {
                            dst_row[ix as usize] += src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// c = a * b for row-major operands with explicit strides, beta = 0.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Samples per gemm call. Fixed so results never depend on thread count.
const SAMPLE_CHUNK: usize = 8;

/// Gather `chunk` samples into one column matrix `[ckk, chunk * positions]`
/// with sample-major column blocks.
fn im2col_chunk(xs: &[f64], x_stride: usize, chunk: usize, p: &PatchGeom, col: &mut [f64]) {
    let positions = p.oh * p.ow;
    let total = chunk * positions;
    let rows = p.ch * p.kh * p.kw;
    debug_assert_eq!(col.len(), rows * total);
    let mut scratch = vec![0.0; rows * positions];
    for s in 0..chunk {
        im2col(&xs[s * x_stride..(s + 1) * x_stride], p, &mut scratch);
        for r in 0..rows {
            col[r * total + s * positions..r * total + (s + 1) * positions]
                .copy_from_slice(&scratch[r * positions..(r + 1) * positions]);
        }
    }
}

pub fn conv2d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let p = g.patch();
    let hw_out = g.h_out * g.w_out;
    let ckk = g.c_in * g.kh * g.kw;
    let x_stride = g.c_in * g.h_in * g.w_in;
    let y_stride = g.c_out * hw_out;
    let mut y = vec![0.0; g.n * y_stride];
    y.par_chunks_mut(SAMPLE_CHUNK * y_stride)
        .zip(x.par_chunks(SAMPLE_CHUNK * x_stride))
        .for_each(|(yc, xc)| {
            let chunk = xc.len() / x_stride;
            let total = chunk * hw_out;
            let mut col = vec![0.0; ckk * total];
            im2col_chunk(xc, x_stride, chunk, &p, &mut col);
            let mut out = vec![0.0; g.c_out * total];
            gemm(g.c_out, ckk, total, w, ckk as isize, 1, &col, total as isize, 1, &mut out);
            for s in 0..chunk {
                for o in 0..g.c_out {
                    let src = &out[o * total + s * hw_out..o * total + (s + 1) * hw_out];
                    let dst = &mut yc[s * y_stride + o * hw_out..s * y_stride + (o + 1) * hw_out];
                    match bias {
                        Some(b) => {
                            let bv = b[o];
                            for (d, &v) in dst.iter_mut().zip(src.iter()) {
                                *d = v + bv;
                            }
                        }
                        None => dst.copy_from_slice(src),
                    }
                }
            }
        });
    y
}

/// Gather `chunk` output-gradient samples into `[c_out, chunk * positions]`.
fn gather_dy_chunk(dyc: &[f64], y_stride: usize, c_out: usize, hw_out: usize, out: &mut [f64]) {
    let chunk = dyc.len() / y_stride;
    let total = chunk * hw_out;
    for s in 0..chunk {
        for o in 0..c_out {
            out[o * total + s * hw_out..o * total + (s + 1) * hw_out]
                .copy_from_slice(&dyc[s * y_stride + o * hw_out..s * y_stride + (o + 1) * hw_out]);
        }
    }
}

/// Returns (dx, dw, db). One pass per sample chunk computes both the input
/// and the weight gradients; weight partials are folded in fixed order, so
/// results are independent of thread count.
pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = g.patch();
    let hw_out = g.h_out * g.w_out;
    let ckk = g.c_in * g.kh * g.kw;
    let x_stride = g.c_in * g.h_in * g.w_in;
    let y_stride = g.c_out * hw_out;

    let mut dx = vec![0.0; g.n * x_stride];
    let partials: Vec<Vec<f64>> = dx
        .par_chunks_mut(SAMPLE_CHUNK * x_stride)
        .zip(x.par_chunks(SAMPLE_CHUNK * x_stride))
        .zip(dy.par_chunks(SAMPLE_CHUNK * y_stride))
        .map(|((dxc, xc), dyc)| {
            let chunk = dyc.len() / y_stride;
            let total = chunk * hw_out;
            let mut dyg = vec![0.0; g.c_out * total];
            gather_dy_chunk(dyc, y_stride, g.c_out, hw_out, &mut dyg);

            // dx: dcol = w^T · dy, then scatter back per sample.
            let mut dcol = vec![0.0; ckk * total];
            gemm(ckk, g.c_out, total, w, 1, ckk as isize, &dyg, total as isize, 1, &mut dcol);
            let mut scratch = vec![0.0; ckk * hw_out];
            for s in 0..chunk {
                for r in 0..ckk {
                    scratch[r * hw_out..(r + 1) * hw_out].copy_from_slice(
                        &dcol[r * total + s * hw_out..r * total + (s + 1) * hw_out],
                    );
                }
                col2im(&scratch, &p, &mut dxc[s * x_stride..(s + 1) * x_stride]);
            }

            // dw partial: dy · col^T over the same chunk.
            let mut col = dcol;
            im2col_chunk(xc, x_stride, chunk, &p, &mut col);
            let mut dwc = vec![0.0; g.c_out * ckk];
            gemm(g.c_out, total, ckk, &dyg, total as isize, 1, &col, 1, total as isize, &mut dwc);
            dwc
        })
        .collect();
    let mut dw = vec![0.0; g.c_out * ckk];
    for part in &partials {
        for (acc, &v) in dw.iter_mut().zip(part.iter()) {
            *acc += v;
        }
    }

    let mut db = vec![0.0; g.c_out];
    for i in 0..g.n {
        for o in 0..g.c_out {
            let base = i * y_stride + o * hw_out;
            db[o] += dy[base..base + hw_out].iter().sum::<f64>();
        }
    }

    (dx, dw, db)
}

/// Gather `chunk` samples of a `[c, hw]`-per-sample tensor into
/// `[c, chunk * hw]`.
fn gather_chunk(src: &[f64], stride: usize, c: usize, hw: usize, out: &mut [f64]) {
    let chunk = src.len() / stride;
    let total = chunk * hw;
    for s in 0..chunk {
        for ch in 0..c {
            out[ch * total + s * hw..ch * total + (s + 1) * hw]
                .copy_from_slice(&src[s * stride + ch * hw..s * stride + (ch + 1) * hw]);
        }
    }
}

pub fn conv_transpose2d_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    g: &ConvTGeom,
) -> Vec<f64> {
    let p = g.patch();
    let hw_in = g.h_in * g.w_in;
    let ckk = g.c_out * g.kh * g.kw;
    let x_stride = g.c_in * hw_in;
    let y_stride = g.c_out * g.h_out * g.w_out;
    let mut y = vec![0.0; g.n * y_stride];
    y.par_chunks_mut(SAMPLE_CHUNK * y_stride)
        .zip(x.par_chunks(SAMPLE_CHUNK * x_stride))
        .for_each(|(yc, xc)| {
            let chunk = xc.len() / x_stride;
            let total = chunk * hw_in;
            let mut xg = vec![0.0; g.c_in * total];
            gather_chunk(xc, x_stride, g.c_in, hw_in, &mut xg);
            let mut col = vec![0.0; ckk * total];
            // col = w^T (c_in x ckk)^T · x
            gemm(ckk, g.c_in, total, w, 1, ckk as isize, &xg, total as isize, 1, &mut col);
            let mut scratch = vec![0.0; ckk * hw_in];
            let hw_out = g.h_out * g.w_out;
            for s in 0..chunk {
                for r in 0..ckk {
                    scratch[r * hw_in..(r + 1) * hw_in]
                        .copy_from_slice(&col[r * total + s * hw_in..r * total + (s + 1) * hw_in]);
                }
                let yn = &mut yc[s * y_stride..(s + 1) * y_stride];
                col2im(&scratch, &p, yn);
                if let Some(b) = bias {
                    for (o, &bv) in b.iter().enumerate() {
                        for v in &mut yn[o * hw_out..(o + 1) * hw_out] {
                            *v += bv;
                        }
                    }
                }
            }
        });
    y
}

pub fn conv_transpose2d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvTGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = g.patch();
    let hw_in = g.h_in * g.w_in;
    let ckk = g.c_out * g.kh * g.kw;
    let x_stride = g.c_in * hw_in;
    let y_stride = g.c_out * g.h_out * g.w_out;

    let mut dx = vec![0.0; g.n * x_stride];
    let partials: Vec<Vec<f64>> = dx
        .par_chunks_mut(SAMPLE_CHUNK * x_stride)
        .zip(x.par_chunks(SAMPLE_CHUNK * x_stride))
        .zip(dy.par_chunks(SAMPLE_CHUNK * y_stride))
        .map(|((dxc, xc), dyc)| {
            let chunk = dyc.len() / y_stride;
            let total = chunk * hw_in;
            let mut col = vec![0.0; ckk * total];
            im2col_chunk(dyc, y_stride, chunk, &p, &mut col);

            // dx = w (c_in x ckk) · col, then ungather per sample.
            let mut dxg = vec![0.0; g.c_in * total];
            gemm(g.c_in, ckk, total, w, ckk as isize, 1, &col, total as isize, 1, &mut dxg);
            for s in 0..chunk {
                for ch in 0..g.c_in {
                    dxc[s * x_stride + ch * hw_in..s * x_stride + (ch + 1) * hw_in]
                        .copy_from_slice(
                            &dxg[ch * total + s * hw_in..ch * total + (s + 1) * hw_in],
                        );
                }
            }

            // dw partial over the same chunk: x · col^T.
            let mut xg = dxg;
            gather_chunk(xc, x_stride, g.c_in, hw_in, &mut xg);
            let mut dwc = vec![0.0; g.c_in * ckk];
            gemm(g.c_in, total, ckk, &xg, total as isize, 1, &col, 1, total as isize, &mut dwc);
            dwc
        })
        .collect();
    let mut dw = vec![0.0; g.c_in * ckk];
    for part in &partials {
        for (acc, &v) in dw.iter_mut().zip(part.iter()) {
            *acc += v;
        }
    }

    let hw_out = g.h_out * g.w_out;
    let mut db = vec![0.0; g.c_out];
    for i in 0..g.n {
        for o in 0..g.c_out {
            let base = i * y_stride + o * hw_out;
            db[o] += dy[base..base + hw_out].iter().sum::<f64>();
        }
    }

    (dx, dw, db)
}

/// y = x · w^T + b for `x: [n, d]`, `w: [e, d]`.
pub fn linear_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, n: usize, d: usize, e: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * e];
    gemm(n, d, e, x, d as isize, 1, w, 1, d as isize, &mut y);
    if let Some(b) = bias {
        for row in y.chunks_exact_mut(e) {
            for (v, &bv) in row.iter_mut().zip(b.iter()) {
                *v += bv;
            }
        }
    }
    y
}

pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n: usize,
    d: usize,
    e: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; n * d];
    gemm(n, e, d, dy, e as isize, 1, w, d as isize, 1, &mut dx);
    let mut dw = vec![0.0; e * d];
    gemm(e, n, d, dy, 1, e as isize, x, d as isize, 1, &mut dw);
    let mut db = vec![0.0; e];
    for row in dy.chunks_exact(e) {
        for (acc, &v) in db.iter_mut().zip(row.iter()) {
            *acc += v;
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn naive_conv2d(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
        let mut y = vec![0.0; g.n * g.c_out * g.h_out * g.w_out];
        for n in 0..g.n {
            for o in 0..g.c_out {
                for oy in 0..g.h_out {
                    for ox in 0..g.w_out {
                        let mut acc = b.map_or(0.0, |b| b[o]);
                        for c in 0..g.c_in {
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= g.h_in as isize
                                        || ix >= g.w_in as isize
                                    {
                                        continue;
                                    }
                                    let xi = ((n * g.c_in + c) * g.h_in + iy as usize) * g.w_in
                                        + ix as usize;
                                    let wi = ((o * g.c_in + c) * g.kh + ki) * g.kw + kj;
                                    acc += x[xi] * w[wi];
                                }
                            }
                        }
                        y[((n * g.c_out + o) * g.h_out + oy) * g.w_out + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_all_ones_3x3() {
        let g = ConvGeom::infer(&[1, 1, 3, 3], &[1, 1, 3, 3], 1, 0).unwrap();
        let y = conv2d_forward(&[1.0; 9], &[1.0; 9], None, &g);
        assert_eq!(y, vec![9.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let g = ConvGeom::infer(&[1, 1, 4, 4], &[1, 1, 1, 1], 1, 0).unwrap();
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let y = conv2d_forward(&x, &[1.0], Some(&[0.0]), &g);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = stream_rng(11, Stream::Noise, 0);
        let g = ConvGeom::infer(&[1, 2, 5, 5], &[3, 2, 3, 3], 2, 1).unwrap();
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = conv2d_forward(&x, &w, Some(&b), &g);
        let slow = naive_conv2d(&x, &w, Some(&b), &g);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn conv_rejects_empty_output() {
        assert!(ConvGeom::infer(&[1, 1, 2, 2], &[1, 1, 3, 3], 1, 0).is_err());
    }

    #[test]
    fn transposed_conv_table_geometry() {
        // 4x4 input, k=3, stride 2, pad 1, output pad 1 -> 8x8
        let g = ConvTGeom::infer(&[1, 64, 4, 4], &[64, 64, 3, 3], 2, 1, 1).unwrap();
        assert_eq!(g.out_shape(), [1, 64, 8, 8]);
        let g = ConvTGeom::infer(&[2, 32, 16, 16], &[32, 1, 3, 3], 2, 1, 1).unwrap();
        assert_eq!(g.out_shape(), [2, 1, 32, 32]);
        assert!(ConvTGeom::infer(&[1, 4, 4, 4], &[4, 4, 3, 3], 2, 1, 2).is_err());
    }

    #[test]
    fn transposed_conv_stride1_is_flipped_correlation() {
        // stride 1, pad = kh-1, no output padding: out[i] = sum_j x[i+j] w[k-1-j]
        let mut rng = stream_rng(3, Stream::Noise, 0);
        let x: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = ConvTGeom::infer(&[1, 1, 6, 6], &[1, 1, 3, 3], 1, 2, 0).unwrap();
        assert_eq!(g.out_shape(), [1, 1, 4, 4]);
        let y = conv_transpose2d_forward(&x, &w, None, &g);
        for oy in 0..4 {
            for ox in 0..4 {
                let mut acc = 0.0;
                for ki in 0..3 {
                    for kj in 0..3 {
                        acc += x[(oy + ki) * 6 + (ox + kj)] * w[(2 - ki) * 3 + (2 - kj)];
                    }
                }
                assert!((y[oy * 4 + ox] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_and_transpose_are_adjoint() {
        // <conv(x), u> == <x, conv_transpose(u)> with shared weights, no bias.
        let mut rng = stream_rng(5, Stream::Noise, 0);
        let g = ConvGeom::infer(&[2, 3, 6, 6], &[4, 3, 3, 3], 2, 1).unwrap();
        let x: Vec<f64> = (0..2 * 3 * 6 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..4 * 3 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = conv2d_forward(&x, &w, None, &g);
        let u: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // Close the geometry back to [2, 3, 6, 6] (output padding 1).
        let out_pad = g.h_in - ((g.h_out - 1) * g.stride + g.kh - 2 * g.pad);
        assert_eq!(out_pad, 1);
        let gt = ConvTGeom::infer(
            &[g.n, g.c_out, g.h_out, g.w_out],
            &[g.c_out, g.c_in, g.kh, g.kw],
            g.stride,
            g.pad,
            out_pad,
        )
        .unwrap();
        assert_eq!(gt.out_shape(), [2, 3, 6, 6]);
        let xt = conv_transpose2d_forward(&u, &w, None, &gt);

        let lhs: f64 = y.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(xt.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn linear_matches_naive_loop() {
        let mut rng = stream_rng(7, Stream::Noise, 0);
        let (n, d, e) = (3, 5, 4);
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..e * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..e).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = linear_forward(&x, &w, Some(&b), n, d, e);
        for i in 0..n {
            for j in 0..e {
                let mut acc = b[j];
                for kk in 0..d {
                    acc += x[i * d + kk] * w[j * d + kk];
                }
                assert!((y[i * e + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let mut rng = stream_rng(9, Stream::Noise, 0);
        let g = ConvGeom::infer(&[4, 3, 8, 8], &[5, 3, 3, 3], 2, 1).unwrap();
        let x: Vec<f64> = (0..4 * 3 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..5 * 3 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let y1 = pool1.install(|| conv2d_forward(&x, &w, None, &g));
        let y4 = pool4.install(|| conv2d_forward(&x, &w, None, &g));
        assert_eq!(y1, y4);
        let dy: Vec<f64> = (0..y1.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b1 = pool1.install(|| conv2d_backward(&x, &w, &dy, &g));
        let b4 = pool4.install(|| conv2d_backward(&x, &w, &dy, &g));
        assert_eq!(b1, b4);
    }
}
