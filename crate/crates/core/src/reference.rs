//! Slow, obviously-correct reference implementations used to cross-check
//! the production kernels. These stay independent of the im2col path: plain
//! nested loops, no shared helpers.

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// Direct quadruple-loop cross-correlation.
pub fn conv2d_naive<F: Elem>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let (co, ci, k, _) = {
        let s = weight.shape();
        (s[0], s[1], s[2], s[3])
    };
    if ci != c {
        return Err(Error::ShapeMismatch("naive conv channel mismatch".into()));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![F::zero(); n * co * ho * wo];
    for ni in 0..n {
        for coi in 0..co {
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut acc = bias.map_or(F::zero(), |b| b.data()[coi]);
                    for cii in 0..c {
                        for m in 0..k {
                            for nn in 0..k {
                                let i = (oi * stride + m) as isize - pad as isize;
                                let j = (oj * stride + nn) as isize - pad as isize;
                                if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
                                    continue;
                                }
                                let xv = x.data()
                                    [((ni * c + cii) * h + i as usize) * w + j as usize];
                                let wv = weight.data()[((coi * ci + cii) * k + m) * k + nn];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * co + coi) * ho + oi) * wo + oj] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, ho, wo], out)
}

/// Scatter-form transposed convolution: every input pixel stamps the kernel
/// onto the output. Weight layout [C_in, C_out, k, k].
pub fn transposed_conv2d_naive<F: Elem>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let (n, c, h, w) = x.dims4()?;
    let (ci, co, k, _) = {
        let s = weight.shape();
        (s[0], s[1], s[2], s[3])
    };
    if ci != c {
        return Err(Error::ShapeMismatch("naive tconv channel mismatch".into()));
    }
    let ho = (h - 1) * stride + k - 2 * pad;
    let wo = (w - 1) * stride + k - 2 * pad;
    let mut out = vec![F::zero(); n * co * ho * wo];
    for ni in 0..n {
        for cii in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let xv = x.data()[((ni * c + cii) * h + i) * w + j];
                    for coi in 0..co {
                        for m in 0..k {
                            for nn in 0..k {
                                let oi = (i * stride + m) as isize - pad as isize;
                                let oj = (j * stride + nn) as isize - pad as isize;
                                if oi < 0 || oj < 0 || oi >= ho as isize || oj >= wo as isize {
                                    continue;
                                }
                                let wv = weight.data()[((cii * co + coi) * k + m) * k + nn];
                                out[((ni * co + coi) * ho + oi as usize) * wo + oj as usize] +=
                                    xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        for ni in 0..n {
            for coi in 0..co {
                for v in &mut out[(ni * co + coi) * ho * wo..][..ho * wo] {
                    *v += b.data()[coi];
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, ho, wo], out)
}

/// O(N^2) direct 2D DFT magnitude, no FFT machinery involved.
pub fn dft2_magnitude_naive(map: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut re = 0.0;
            let mut im = 0.0;
            for i in 0..h {
                for j in 0..w {
                    let ang = -2.0
                        * std::f64::consts::PI
                        * (u as f64 * i as f64 / h as f64 + v as f64 * j as f64 / w as f64);
                    re += map[i * w + j] * ang.cos();
                    im += map[i * w + j] * ang.sin();
                }
            }
            out[u * w + v] = (re * re + im * im).sqrt();
        }
    }
    out
}
