//! Raw numeric kernels: convolution (im2col + matmul), transposed
//! convolution, pooling, nearest upsampling and batch normalization,
//! together with their analytic gradients. The autograd tape wraps these.

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};
use rayon::prelude::*;

/// Output spatial extent of a cross-correlation.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::ShapeMismatch(format!(
            "kernel {k} larger than padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Output spatial extent of a transposed convolution.
pub fn tconv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let grown = (input - 1) * stride + k;
    if grown < 2 * pad {
        return Err(Error::ShapeMismatch(format!(
            "padding {pad} swallows transposed output of extent {grown}"
        )));
    }
    Ok(grown - 2 * pad)
}

/// C = A (m x inner) * B (inner x n), row-major, rows of C in parallel.
/// Each output element is a fixed serial reduction, so the result is
/// bitwise independent of the thread count.
fn matmul<F: Elem>(a: &[F], b: &[F], m: usize, inner: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * inner);
    debug_assert_eq!(b.len(), inner * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        row.fill(F::zero());
        let arow = &a[i * inner..][..inner];
        for (t, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &b[t * n..][..n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
}

/// C = A (m x inner) * B^T where B is (n x inner), row-major.
fn matmul_bt<F: Elem>(a: &[F], b: &[F], m: usize, inner: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * inner);
    debug_assert_eq!(b.len(), n * inner);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let arow = &a[i * inner..][..inner];
        for (j, o) in row.iter_mut().enumerate() {
            let brow = &b[j * inner..][..inner];
            let mut acc = F::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    });
}

/// Lower one image (C,H,W slice) to the (C*k*k) x (Ho*Wo) patch matrix.
fn im2col<F: Elem>(
    x: &[F],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [F],
) {
    debug_assert_eq!(cols.len(), c * k * k * ho * wo);
    cols.par_chunks_mut(ho * wo).enumerate().for_each(|(row, dst)| {
        let ci = row / (k * k);
        let ki = (row / k) % k;
        let kj = row % k;
        let plane = &x[ci * h * w..][..h * w];
        for oi in 0..ho {
            let ii = (oi * stride + ki) as isize - pad as isize;
            let base = oi * wo;
            if ii < 0 || ii >= h as isize {
                dst[base..base + wo].fill(F::zero());
                continue;
            }
            let src_row = &plane[ii as usize * w..][..w];
            for oj in 0..wo {
                let jj = (oj * stride + kj) as isize - pad as isize;
                dst[base + oj] = if jj < 0 || jj >= w as isize {
                    F::zero()
                } else {
                    src_row[jj as usize]
                };
            }
        }
    });
}

fn kernel_dims<F: Elem>(w: &Tensor<F>) -> Result<(usize, usize, usize)> {
    match w.shape()[..] {
        [co, ci, kh, kw] if kh == kw => Ok((co, ci, kh)),
        _ => Err(Error::InvalidShape(format!(
            "kernel must be [C_out, C_in, k, k], got {:?}",
            w.shape()
        ))),
    }
}

/// Cross-correlation (deep-learning "convolution") with optional bias.
/// Weight layout [C_out, C_in, k, k].
pub fn conv2d<F: Elem>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let (co, ci, k) = kernel_dims(weight)?;
    if ci != c {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: input has {c} channels, kernel expects {ci}"
        )));
    }
    let ho = conv_out_extent(h, k, stride, pad)?;
    let wo = conv_out_extent(w, k, stride, pad)?;
    let inner = c * k * k;
    let mut cols = vec![F::zero(); inner * ho * wo];
    let mut out = vec![F::zero(); n * co * ho * wo];
    for ni in 0..n {
        im2col(
            &x.data()[ni * c * h * w..][..c * h * w],
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
            &mut cols,
        );
        matmul(
            weight.data(),
            &cols,
            co,
            inner,
            ho * wo,
            &mut out[ni * co * ho * wo..][..co * ho * wo],
        );
    }
    if let Some(b) = bias {
        if b.numel() != co {
            return Err(Error::ShapeMismatch(format!(
                "conv2d bias has {} entries, expected {co}",
                b.numel()
            )));
        }
        for ni in 0..n {
            for coi in 0..co {
                let bv = b.data()[coi];
                for v in &mut out[(ni * co + coi) * ho * wo..][..ho * wo] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, ho, wo], out)
}

/// Weight gradient of conv2d: dL/dW given input and output gradient.
pub fn conv2d_weight_grad<F: Elem>(
    x: &Tensor<F>,
    grad_out: &Tensor<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let (n2, co, ho, wo) = grad_out.dims4()?;
    debug_assert_eq!(n, n2);
    let inner = c * k * k;
    let mut cols = vec![F::zero(); inner * ho * wo];
    let mut dw = vec![F::zero(); co * inner];
    let mut dwn = vec![F::zero(); co * inner];
    for ni in 0..n {
        im2col(
            &x.data()[ni * c * h * w..][..c * h * w],
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
            &mut cols,
        );
        matmul_bt(
            &grad_out.data()[ni * co * ho * wo..][..co * ho * wo],
            &cols,
            co,
            ho * wo,
            inner,
            &mut dwn,
        );
        for (a, &b) in dw.iter_mut().zip(&dwn) {
            *a += b;
        }
    }
    Tensor::from_vec(&[co, c, k, k], dw)
}

/// Per-output-channel bias gradient: sum of grad_out over N, H, W.
pub fn bias_grad<F: Elem>(grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, co, ho, wo) = grad_out.dims4()?;
    let mut db = vec![F::zero(); co];
    for ni in 0..n {
        for coi in 0..co {
            for &v in &grad_out.data()[(ni * co + coi) * ho * wo..][..ho * wo] {
                db[coi] += v;
            }
        }
    }
    Tensor::from_vec(&[co], db)
}

/// Transposed convolution. Weight layout [C_in, C_out, k, k]; the same
/// buffer read as a conv kernel maps C_out back to C_in, which makes this
/// operation exactly the input-gradient (adjoint) of that convolution.
pub fn transposed_conv2d<F: Elem>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let (ci, co, k) = kernel_dims(weight)?;
    if ci != c {
        return Err(Error::ShapeMismatch(format!(
            "transposed_conv2d: input has {c} channels, kernel expects {ci}"
        )));
    }
    let ho = tconv_out_extent(h, k, stride, pad)?;
    let wo = tconv_out_extent(w, k, stride, pad)?;

    let mut out = if stride == 1 && pad <= k - 1 {
        // stride-1 fast path: correlation with the flipped, channel-swapped
        // kernel at padding k-1-pad
        let mut flipped = vec![F::zero(); co * ci * k * k];
        for a in 0..ci {
            for b in 0..co {
                for m in 0..k {
                    for nn in 0..k {
                        flipped[((b * ci + a) * k + (k - 1 - m)) * k + (k - 1 - nn)] =
                            weight.data()[((a * co + b) * k + m) * k + nn];
                    }
                }
            }
        }
        let wflip = Tensor::from_vec(&[co, ci, k, k], flipped)?;
        conv2d(x, &wflip, None, 1, k - 1 - pad)?
    } else {
        // general gather form
        let mut out = vec![F::zero(); n * co * ho * wo];
        let xs = x.data();
        let ws = weight.data();
        out.par_chunks_mut(ho * wo).enumerate().for_each(|(idx, dst)| {
            let ni = idx / co;
            let coi = idx % co;
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut acc = F::zero();
                    for cii in 0..c {
                        let plane = &xs[(ni * c + cii) * h * w..][..h * w];
                        let wk = &ws[(cii * co + coi) * k * k..][..k * k];
                        for m in 0..k {
                            let it = oi as isize + pad as isize - m as isize;
                            if it < 0 || it % stride as isize != 0 {
                                continue;
                            }
                            let i = it as usize / stride;
                            if i >= h {
                                continue;
                            }
                            for nn in 0..k {
                                let jt = oj as isize + pad as isize - nn as isize;
                                if jt < 0 || jt % stride as isize != 0 {
                                    continue;
                                }
                                let j = jt as usize / stride;
                                if j >= w {
                                    continue;
                                }
                                acc += plane[i * w + j] * wk[m * k + nn];
                            }
                        }
                    }
                    dst[oi * wo + oj] = acc;
                }
            }
        });
        Tensor::from_vec(&[n, co, ho, wo], out)?
    };

    if let Some(b) = bias {
        if b.numel() != co {
            return Err(Error::ShapeMismatch(format!(
                "transposed_conv2d bias has {} entries, expected {co}",
                b.numel()
            )));
        }
        let data = out.data_mut();
        for ni in 0..n {
            for coi in 0..co {
                let bv = b.data()[coi];
                for v in &mut data[(ni * co + coi) * ho * wo..][..ho * wo] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Input gradient of conv2d: a transposed convolution by the same weight.
pub fn conv2d_input_grad<F: Elem>(
    grad_out: &Tensor<F>,
    weight: &Tensor<F>,
    stride: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor<F>> {
    // Direct adjoint gather. Growing the output gradient and running a
    // transposed convolution computes this only up to the extent
    // (out-1)*stride - 2*pad + k, which for strided convs can fall short of
    // the true input extent while those trailing rows/columns still carry
    // nonzero gradient, so we gather at the requested extent instead.
    let (n, co, oh, ow) = grad_out.dims4()?;
    let (cow, ci, k) = kernel_dims(weight)?;
    if cow != co {
        return Err(Error::ShapeMismatch(format!(
            "conv2d_input_grad: gradient has {co} channels, kernel maps to {cow}"
        )));
    }
    let mut out = vec![F::zero(); n * ci * in_h * in_w];
    let gs = grad_out.data();
    let ws = weight.data();
    out.par_chunks_mut(in_h * in_w).enumerate().for_each(|(idx, dst)| {
        let ni = idx / ci;
        let cii = idx % ci;
        for i in 0..in_h {
            for j in 0..in_w {
                let mut acc = F::zero();
                for coi in 0..co {
                    let plane = &gs[(ni * co + coi) * oh * ow..][..oh * ow];
                    let wk = &ws[(coi * ci + cii) * k * k..][..k * k];
                    for m in 0..k {
                        let it = i as isize + pad as isize - m as isize;
                        if it < 0 || it % stride as isize != 0 {
                            continue;
                        }
                        let oi = it as usize / stride;
                        if oi >= oh {
                            continue;
                        }
                        for nn in 0..k {
                            let jt = j as isize + pad as isize - nn as isize;
                            if jt < 0 || jt % stride as isize != 0 {
                                continue;
                            }
                            let oj = jt as usize / stride;
                            if oj >= ow {
                                continue;
                            }
                            acc += plane[oi * ow + oj] * wk[m * k + nn];
                        }
                    }
                }
                dst[i * in_w + j] = acc;
            }
        }
    });
    Tensor::from_vec(&[n, ci, in_h, in_w], out)
}

/// Weight gradient of a transposed convolution; result in [C_in, C_out, k, k]
/// layout. Same contraction as the conv weight gradient with the roles of
/// input and output gradient swapped.
pub fn transposed_conv2d_weight_grad<F: Elem>(
    x: &Tensor<F>,
    grad_out: &Tensor<F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    conv2d_weight_grad(grad_out, x, k, stride, pad)
}

fn even_dims<F: Elem>(x: &Tensor<F>) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pool2 requires even spatial extents, got {h}x{w}; pad first"
        )));
    }
    Ok((n, c, h, w))
}

/// 2x2 max pooling; also returns the flat argmax index per output cell for
/// the backward pass.
pub fn max_pool2<F: Elem>(x: &Tensor<F>) -> Result<(Tensor<F>, Vec<usize>)> {
    let (n, c, h, w) = even_dims(x)?;
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for pc in 0..n * c {
        let plane = &x.data()[pc * h * w..][..h * w];
        for oi in 0..ho {
            for oj in 0..wo {
                let base = (2 * oi) * w + 2 * oj;
                let cand = [base, base + 1, base + w, base + w + 1];
                let mut best = cand[0];
                for &idx in &cand[1..] {
                    if plane[idx] > plane[best] {
                        best = idx;
                    }
                }
                out.push(plane[best]);
                arg.push(pc * h * w + best);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, ho, wo], out)?, arg))
}

pub fn max_pool2_backward<F: Elem>(
    grad_out: &Tensor<F>,
    arg: &[usize],
    in_shape: &[usize],
) -> Result<Tensor<F>> {
    let mut dx = Tensor::zeros(in_shape)?;
    for (&idx, &g) in arg.iter().zip(grad_out.data()) {
        dx.data_mut()[idx] += g;
    }
    Ok(dx)
}

/// 2x2 average pooling.
pub fn avg_pool2<F: Elem>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = even_dims(x)?;
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::cast_from(0.25);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for pc in 0..n * c {
        let plane = &x.data()[pc * h * w..][..h * w];
        for oi in 0..ho {
            for oj in 0..wo {
                let base = (2 * oi) * w + 2 * oj;
                out.push(
                    (plane[base] + plane[base + 1] + plane[base + w] + plane[base + w + 1])
                        * quarter,
                );
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

pub fn avg_pool2_backward<F: Elem>(grad_out: &Tensor<F>, in_shape: &[usize]) -> Result<Tensor<F>> {
    let (n, c, ho, wo) = grad_out.dims4()?;
    let (h, w) = (in_shape[2], in_shape[3]);
    let quarter = F::cast_from(0.25);
    let mut dx = Tensor::zeros(in_shape)?;
    for pc in 0..n * c {
        let plane = &mut dx.data_mut()[pc * h * w..];
        let gp = &grad_out.data()[pc * ho * wo..][..ho * wo];
        for oi in 0..ho {
            for oj in 0..wo {
                let g = gp[oi * wo + oj] * quarter;
                let base = (2 * oi) * w + 2 * oj;
                plane[base] += g;
                plane[base + 1] += g;
                plane[base + w] += g;
                plane[base + w + 1] += g;
            }
        }
    }
    Ok(dx)
}

/// Nearest-neighbor 2x upsampling: out[i,j] = x[i/2, j/2].
pub fn upsample_nearest2<F: Elem>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![F::zero(); n * c * ho * wo];
    for pc in 0..n * c {
        let plane = &x.data()[pc * h * w..][..h * w];
        let dst = &mut out[pc * ho * wo..][..ho * wo];
        for oi in 0..ho {
            let src_row = &plane[(oi / 2) * w..][..w];
            let drow = &mut dst[oi * wo..][..wo];
            for (oj, v) in drow.iter_mut().enumerate() {
                *v = src_row[oj / 2];
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

pub fn upsample_nearest2_backward<F: Elem>(
    grad_out: &Tensor<F>,
    in_shape: &[usize],
) -> Result<Tensor<F>> {
    let (n, c, ho, wo) = grad_out.dims4()?;
    let (h, w) = (in_shape[2], in_shape[3]);
    let mut dx = Tensor::zeros(in_shape)?;
    for pc in 0..n * c {
        let gp = &grad_out.data()[pc * ho * wo..][..ho * wo];
        let plane = &mut dx.data_mut()[pc * h * w..];
        for oi in 0..ho {
            for oj in 0..wo {
                plane[(oi / 2) * w + oj / 2] += gp[oi * wo + oj];
            }
        }
    }
    Ok(dx)
}

/// Intermediate values of a train-mode batch-norm forward, kept for the
/// backward pass and the running-statistics update.
pub struct BatchNormCache<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub x_hat: Tensor<F>,
}

pub fn batch_norm_train<F: Elem>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: F,
) -> Result<(Tensor<F>, BatchNormCache<F>)> {
    let (n, c, h, w) = x.dims4()?;
    let (mean, var) = x.channel_stats()?;
    let plane = h * w;
    let mut xh = vec![F::zero(); x.numel()];
    let mut out = vec![F::zero(); x.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let inv = F::one() / (var[ci] + eps).sqrt();
            let (g, b, m) = (gamma.data()[ci], beta.data()[ci], mean[ci]);
            let base = (ni * c + ci) * plane;
            for o in 0..plane {
                let v = (x.data()[base + o] - m) * inv;
                xh[base + o] = v;
                out[base + o] = g * v + b;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), out)?,
        BatchNormCache {
            mean,
            var,
            x_hat: Tensor::from_vec(x.shape(), xh)?,
        },
    ))
}

pub fn batch_norm_eval<F: Elem>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running_mean: &[F],
    running_var: &[F],
    eps: F,
) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut out = vec![F::zero(); x.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let inv = F::one() / (running_var[ci] + eps).sqrt();
            let (g, b, m) = (gamma.data()[ci], beta.data()[ci], running_mean[ci]);
            let base = (ni * c + ci) * plane;
            for o in 0..plane {
                out[base + o] = g * (x.data()[base + o] - m) * inv + b;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Train-mode batch-norm backward through the batch statistics.
/// Returns (dx, dgamma, dbeta).
pub fn batch_norm_train_backward<F: Elem>(
    grad_out: &Tensor<F>,
    gamma: &Tensor<F>,
    cache: &BatchNormCache<F>,
    eps: F,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let m = F::from_usize(n * plane).unwrap();
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for o in 0..plane {
                let g = grad_out.data()[base + o];
                dgamma[ci] += g * cache.x_hat.data()[base + o];
                dbeta[ci] += g;
            }
        }
    }
    let mut dx = vec![F::zero(); grad_out.numel()];
    for ci in 0..c {
        let inv = F::one() / (cache.var[ci] + eps).sqrt();
        let scale = gamma.data()[ci] * inv;
        let mean_dy = dbeta[ci] / m;
        let mean_dy_xhat = dgamma[ci] / m;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for o in 0..plane {
                let dy = grad_out.data()[base + o];
                let xh = cache.x_hat.data()[base + o];
                dx[base + o] = scale * (dy - mean_dy - xh * mean_dy_xhat);
            }
        }
    }
    Ok((
        Tensor::from_vec(grad_out.shape(), dx)?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

pub fn relu<F: Elem>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.max(F::zero()))
}

pub fn sigmoid<F: Elem>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| F::one() / (F::one() + (-v).exp()))
}
