//! Dense row-major tensors in NCHW layout.
//!
//! Tensors are immutable values once constructed; every operation returns a
//! fresh tensor. Only scalar broadcast is supported, full shapes must match
//! otherwise.

use crate::error::{Error, Result};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::Debug;

/// Scalar element type for tensors. `f32` is the production dtype, `f64`
/// exists so gradient checks can use tight tolerances.
pub trait Elem:
    Float + NumAssign + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    fn cast_from(v: f64) -> Self {
        Self::from(v).unwrap()
    }
    fn to_f64_(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Elem for f32 {}
impl Elem for f64 {}

/// Dense N-dimensional array, flat row-major buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("empty shape".into()));
    }
    if let Some(&bad) = shape.iter().find(|&&e| e == 0) {
        return Err(Error::InvalidShape(format!(
            "zero extent in shape {shape:?} (got {bad})"
        )));
    }
    Ok(shape.iter().product())
}

impl<F: Elem> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, F::one())
    }

    pub fn full(shape: &[usize], value: F) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} expects {n} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// View this buffer under a different shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elems) to {shape:?} ({n} elems)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Interpret as NCHW, failing on other ranks.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::ShapeMismatch(format!(
                "expected rank-4 NCHW tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a * b)
    }

    /// Division follows IEEE semantics: division by zero yields inf/nan.
    pub fn div(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a / b)
    }

    pub fn add_scalar(&self, s: F) -> Self {
        self.map(|v| v + s)
    }

    pub fn mul_scalar(&self, s: F) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Zero-pad (or constant-pad) `pad` pixels on every side of H and W.
    pub fn pad2d(&self, pad: usize, value: F) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if pad == 0 {
            return Ok(self.clone());
        }
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut out = vec![value; n * c * hp * wp];
        for ni in 0..n {
            for ci in 0..c {
                let src = &self.data[(ni * c + ci) * h * w..][..h * w];
                let dst = &mut out[(ni * c + ci) * hp * wp..];
                for i in 0..h {
                    let row = &src[i * w..][..w];
                    dst[(i + pad) * wp + pad..][..w].copy_from_slice(row);
                }
            }
        }
        Tensor::from_vec(&[n, c, hp, wp], out)
    }

    /// Inverse of `pad2d`: drop `margin` pixels from every side.
    pub fn crop2d(&self, margin: usize) -> Result<Self> {
        let (_, _, h, w) = self.dims4()?;
        if h <= 2 * margin || w <= 2 * margin {
            return Err(Error::InvalidShape(format!(
                "margin {margin} empties a {h}x{w} map"
            )));
        }
        self.crop2d_to(margin, margin, h - 2 * margin, w - 2 * margin)
    }

    /// Crop starting at (top, left) to at most (height, width).
    pub fn crop2d_to(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        let hc = height.min(h.saturating_sub(top));
        let wc = width.min(w.saturating_sub(left));
        if hc == 0 || wc == 0 {
            return Err(Error::InvalidShape(format!(
                "crop ({top},{left})+{height}x{width} empties a {h}x{w} map"
            )));
        }
        let mut out = Vec::with_capacity(n * c * hc * wc);
        for ni in 0..n {
            for ci in 0..c {
                let src = &self.data[(ni * c + ci) * h * w..][..h * w];
                for i in 0..hc {
                    out.extend_from_slice(&src[(i + top) * w + left..][..wc]);
                }
            }
        }
        Tensor::from_vec(&[n, c, hc, wc], out)
    }

    /// Concatenate along the channel axis; `self`'s channels come first.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        let (n, ca, h, w) = self.dims4()?;
        let (n2, cb, h2, w2) = other.dims4()?;
        if (n, h, w) != (n2, h2, w2) {
            return Err(Error::ShapeMismatch(format!(
                "concat_channels: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = Vec::with_capacity(n * (ca + cb) * h * w);
        let plane = h * w;
        for ni in 0..n {
            out.extend_from_slice(&self.data[ni * ca * plane..][..ca * plane]);
            out.extend_from_slice(&other.data[ni * cb * plane..][..cb * plane]);
        }
        Tensor::from_vec(&[n, ca + cb, h, w], out)
    }

    /// Split along channels at `c_first`, inverse of `concat_channels`.
    pub fn split_channels(&self, c_first: usize) -> Result<(Self, Self)> {
        let (n, c, h, w) = self.dims4()?;
        if c_first == 0 || c_first >= c {
            return Err(Error::ShapeMismatch(format!(
                "split at {c_first} of {c} channels"
            )));
        }
        let plane = h * w;
        let cb = c - c_first;
        let mut a = Vec::with_capacity(n * c_first * plane);
        let mut b = Vec::with_capacity(n * cb * plane);
        for ni in 0..n {
            let base = ni * c * plane;
            a.extend_from_slice(&self.data[base..][..c_first * plane]);
            b.extend_from_slice(&self.data[base + c_first * plane..][..cb * plane]);
        }
        Ok((
            Tensor::from_vec(&[n, c_first, h, w], a)?,
            Tensor::from_vec(&[n, cb, h, w], b)?,
        ))
    }

    /// Per-channel mean and biased variance over N, H, W.
    pub fn channel_stats(&self) -> Result<(Vec<F>, Vec<F>)> {
        let (n, c, h, w) = self.dims4()?;
        let count = F::from_usize(n * h * w).unwrap();
        let plane = h * w;
        let mut means = vec![F::zero(); c];
        let mut vars = vec![F::zero(); c];
        for ci in 0..c {
            let mut s = F::zero();
            for ni in 0..n {
                for &v in &self.data[(ni * c + ci) * plane..][..plane] {
                    s += v;
                }
            }
            means[ci] = s / count;
        }
        for ci in 0..c {
            let m = means[ci];
            let mut s = F::zero();
            for ni in 0..n {
                for &v in &self.data[(ni * c + ci) * plane..][..plane] {
                    let d = v - m;
                    s += d * d;
                }
            }
            vars[ci] = s / count;
        }
        Ok((means, vars))
    }

    /// Cast the element type, rounding through f64.
    pub fn cast<G: Elem>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| G::cast_from(v.to_f64_())).collect(),
        }
    }
}
