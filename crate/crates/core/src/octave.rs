//! Octave convolution and octave transposed convolution over two-frequency
//! feature bundles. The low-frequency map lives at half spatial resolution;
//! four kernel paths (H->H, H->L, L->H, L->L) update each frequency and
//! exchange information between them.
//!
//! Inter-frequency paths:
//!   H->L: 2x average pooling, then (transposed) convolution
//!   L->H: (transposed) convolution, then 2x nearest upsampling

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Binder, Conv2d, TransposedConv2d};
use crate::tensor::{Elem, Tensor};
use rand::Rng;

/// Fraction of a layer's channels assigned to the low-frequency group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaRatio(f64);

impl AlphaRatio {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Config(format!("alpha must be in [0,1], got {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    /// Split `c_total` into (c_high, c_low); alpha * c_total must be integral.
    pub fn split(&self, c_total: usize) -> Result<(usize, usize)> {
        let low = self.0 * c_total as f64;
        if (low - low.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "alpha {} does not split {c_total} channels into integers",
                self.0
            )));
        }
        let c_low = low.round() as usize;
        Ok((c_total - c_low, c_low))
    }
}

/// Two-frequency feature bundle on a tape; either side may be absent.
#[derive(Clone, Copy, Debug)]
pub struct OctavePair {
    pub high: Option<Var>,
    pub low: Option<Var>,
}

impl OctavePair {
    pub fn high_only(v: Var) -> Self {
        Self {
            high: Some(v),
            low: None,
        }
    }

    pub fn high(&self) -> Result<Var> {
        self.high
            .ok_or_else(|| Error::Contract("missing high-frequency map".into()))
    }

    pub fn low(&self) -> Result<Var> {
        self.low
            .ok_or_else(|| Error::Contract("missing low-frequency map".into()))
    }
}

/// Where the nonlinearity sits relative to the two-path summation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum ActivationPlacement {
    /// Sum raw path outputs, activate once at block level. Matches the
    /// octave-convolution computation graph and keeps the alpha=0 reduction
    /// to a standard (transposed) convolution exact.
    #[default]
    BlockLevel,
    /// Activate each path before summation (the strict per-path reading of
    /// the response equations).
    PerPath,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

fn activate<F: Elem>(b: &mut Binder<F>, v: Var, act: Activation) -> Var {
    match act {
        Activation::Identity => v,
        Activation::Relu => b.tape.relu(v),
        Activation::Sigmoid => b.tape.sigmoid(v),
    }
}

fn check_even_high<F: Elem>(b: &Binder<F>, x: &OctavePair) -> Result<()> {
    if let Some(h) = x.high {
        let (_, _, hh, ww) = b.tape.value(h).dims4()?;
        if hh % 2 != 0 || ww % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "high-frequency map must have even spatial extents, got {hh}x{ww}"
            )));
        }
    }
    Ok(())
}

/// Channel bookkeeping shared by both octave layer kinds.
#[derive(Clone, Copy, Debug)]
pub struct OctaveDims {
    pub c_in_high: usize,
    pub c_in_low: usize,
    pub c_out_high: usize,
    pub c_out_low: usize,
}

impl OctaveDims {
    pub fn new(c_in: usize, c_out: usize, alpha_in: AlphaRatio, alpha_out: AlphaRatio) -> Result<Self> {
        if c_in < 1 || c_out < 1 {
            return Err(Error::Config("octave layer needs c_in, c_out >= 1".into()));
        }
        let (c_in_high, c_in_low) = alpha_in.split(c_in)?;
        let (c_out_high, c_out_low) = alpha_out.split(c_out)?;
        Ok(Self {
            c_in_high,
            c_in_low,
            c_out_high,
            c_out_low,
        })
    }
}

/// Octave convolution: the four weight groups W{H->H, H->L, L->H, L->L},
/// any subset absent when an alpha is 0 or 1.
#[derive(Clone, Debug)]
pub struct OctaveConv<F: Elem> {
    pub dims: OctaveDims,
    pub hh: Option<Conv2d<F>>,
    pub hl: Option<Conv2d<F>>,
    pub lh: Option<Conv2d<F>>,
    pub ll: Option<Conv2d<F>>,
}

impl<F: Elem> OctaveConv<F> {
    pub fn new_he<R: Rng>(
        c_in: usize,
        c_out: usize,
        alpha_in: AlphaRatio,
        alpha_out: AlphaRatio,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = OctaveDims::new(c_in, c_out, alpha_in, alpha_out)?;
        let pad = (k - 1) / 2;
        let mk = |co: usize, ci: usize, rng: &mut R| -> Result<Option<Conv2d<F>>> {
            if co > 0 && ci > 0 {
                Ok(Some(Conv2d::new_he(co, ci, k, 1, pad, rng)?))
            } else {
                Ok(None)
            }
        };
        // fixed creation order keeps seeded builds reproducible
        let hh = mk(d.c_out_high, d.c_in_high, rng)?;
        let hl = mk(d.c_out_low, d.c_in_high, rng)?;
        let lh = mk(d.c_out_high, d.c_in_low, rng)?;
        let ll = mk(d.c_out_low, d.c_in_low, rng)?;
        Ok(Self { dims: d, hh, hl, lh, ll })
    }

    /// The initial-layer form: consumes a plain tensor (alpha_in = 0) and
    /// emits a pair via the H->H and H->L paths only.
    pub fn new_initial<R: Rng>(
        c_in: usize,
        c_out: usize,
        alpha_out: AlphaRatio,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new_he(c_in, c_out, AlphaRatio::new(0.0)?, alpha_out, k, rng)
    }

    /// Raw (pre-activation) octave convolution. With `PerPath` placement the
    /// activation is applied to each path before summation instead.
    pub fn forward(
        &self,
        b: &mut Binder<F>,
        x: OctavePair,
        act: Activation,
        placement: ActivationPlacement,
    ) -> Result<OctavePair> {
        check_even_high(b, &x)?;
        let per_path = placement == ActivationPlacement::PerPath && act != Activation::Identity;

        // bind parameters in canonical order: hh, hl, lh, ll
        let bound_hh = self.hh.as_ref().map(|l| {
            let w = b.bind(&l.weight);
            let bias = b.bind(&l.bias);
            (w, bias, l.padding)
        });
        let bound_hl = self.hl.as_ref().map(|l| {
            let w = b.bind(&l.weight);
            let bias = b.bind(&l.bias);
            (w, bias, l.padding)
        });
        let bound_lh = self.lh.as_ref().map(|l| {
            let w = b.bind(&l.weight);
            let bias = b.bind(&l.bias);
            (w, bias, l.padding)
        });
        let bound_ll = self.ll.as_ref().map(|l| {
            let w = b.bind(&l.weight);
            let bias = b.bind(&l.bias);
            (w, bias, l.padding)
        });

        let mut y_high: Option<Var> = None;
        let mut y_low: Option<Var> = None;
        let add_into = |b: &mut Binder<F>, slot: &mut Option<Var>, v: Var| -> Result<()> {
            let v = if per_path { activate(b, v, act) } else { v };
            *slot = Some(match *slot {
                Some(acc) => b.tape.add(acc, v)?,
                None => v,
            });
            Ok(())
        };

        if let (Some((w, bias, pad)), Some(xh)) = (bound_hh, x.high) {
            let v = b.tape.conv2d(xh, w, Some(bias), 1, pad)?;
            add_into(b, &mut y_high, v)?;
        }
        if let (Some((w, bias, pad)), Some(xh)) = (bound_hl, x.high) {
            // downsample first, then convolve
            let pooled = b.tape.avg_pool2(xh)?;
            let v = b.tape.conv2d(pooled, w, Some(bias), 1, pad)?;
            add_into(b, &mut y_low, v)?;
        }
        if let (Some((w, bias, pad)), Some(xl)) = (bound_lh, x.low) {
            // convolve at low resolution, then nearest-upsample
            let v = b.tape.conv2d(xl, w, Some(bias), 1, pad)?;
            let v = b.tape.upsample_nearest2(v)?;
            add_into(b, &mut y_high, v)?;
        }
        if let (Some((w, bias, pad)), Some(xl)) = (bound_ll, x.low) {
            let v = b.tape.conv2d(xl, w, Some(bias), 1, pad)?;
            add_into(b, &mut y_low, v)?;
        }

        Ok(OctavePair {
            high: y_high,
            low: y_low,
        })
    }
}

/// Octave transposed convolution: per-path transposed convolutions plus the
/// same inter-frequency pooling/interpolation as the convolution form.
#[derive(Clone, Debug)]
pub struct OctaveTransposedConv<F: Elem> {
    pub dims: OctaveDims,
    pub hh: Option<TransposedConv2d<F>>,
    pub hl: Option<TransposedConv2d<F>>,
    pub lh: Option<TransposedConv2d<F>>,
    pub ll: Option<TransposedConv2d<F>>,
}

impl<F: Elem> OctaveTransposedConv<F> {
    pub fn new_he<R: Rng>(
        c_in: usize,
        c_out: usize,
        alpha_in: AlphaRatio,
        alpha_out: AlphaRatio,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = OctaveDims::new(c_in, c_out, alpha_in, alpha_out)?;
        let pad = (k - 1) / 2;
        let mk = |ci: usize, co: usize, rng: &mut R| -> Result<Option<TransposedConv2d<F>>> {
            if ci > 0 && co > 0 {
                Ok(Some(TransposedConv2d::new_he(ci, co, k, 1, pad, rng)?))
            } else {
                Ok(None)
            }
        };
        let hh = mk(d.c_in_high, d.c_out_high, rng)?;
        let hl = mk(d.c_in_high, d.c_out_low, rng)?;
        let lh = mk(d.c_in_low, d.c_out_high, rng)?;
        let ll = mk(d.c_in_low, d.c_out_low, rng)?;
        Ok(Self { dims: d, hh, hl, lh, ll })
    }

    /// The final-layer form: alpha_out = 0, emitting only the high map from
    /// the H->H and L->H paths.
    pub fn new_final<R: Rng>(
        c_in: usize,
        c_out: usize,
        alpha_in: AlphaRatio,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new_he(c_in, c_out, alpha_in, AlphaRatio::new(0.0)?, k, rng)
    }

    pub fn forward(
        &self,
        b: &mut Binder<F>,
        x: OctavePair,
        act: Activation,
        placement: ActivationPlacement,
    ) -> Result<OctavePair> {
        check_even_high(b, &x)?;
        let per_path = placement == ActivationPlacement::PerPath && act != Activation::Identity;

        let bound_hh = self.hh.as_ref().map(|l| {
            let w = b.bind(&l.weight);
            let bias = b.bind(&l.bias);
            (w, bias, l.padding)
        });
        let bound_hl = self.hl.as_ref().map(|l| {
            let w = b.bind(&l.weight);
            let bias = b.bind(&l.bias);
            (w, bias, l.padding)
        });
        let bound_lh = self.lh.as_ref().map(|l| {
            let w = b.bind(&l.weight);
            let bias = b.bind(&l.bias);
            (w, bias, l.padding)
        });
        let bound_ll = self.ll.as_ref().map(|l| {
            let w = b.bind(&l.weight);
            let bias = b.bind(&l.bias);
            (w, bias, l.padding)
        });

        let mut y_high: Option<Var> = None;
        let mut y_low: Option<Var> = None;
        let add_into = |b: &mut Binder<F>, slot: &mut Option<Var>, v: Var| -> Result<()> {
            let v = if per_path { activate(b, v, act) } else { v };
            *slot = Some(match *slot {
                Some(acc) => b.tape.add(acc, v)?,
                None => v,
            });
            Ok(())
        };

        if let (Some((w, bias, pad)), Some(xh)) = (bound_hh, x.high) {
            let v = b.tape.transposed_conv2d(xh, w, Some(bias), 1, pad)?;
            add_into(b, &mut y_high, v)?;
        }
        if let (Some((w, bias, pad)), Some(xh)) = (bound_hl, x.high) {
            // average of the four adjacent locations, then transposed conv
            let pooled = b.tape.avg_pool2(xh)?;
            let v = b.tape.transposed_conv2d(pooled, w, Some(bias), 1, pad)?;
            add_into(b, &mut y_low, v)?;
        }
        if let (Some((w, bias, pad)), Some(xl)) = (bound_lh, x.low) {
            // transposed conv at low resolution, then the floor-indexed
            // nearest-neighbor upsampling
            let v = b.tape.transposed_conv2d(xl, w, Some(bias), 1, pad)?;
            let v = b.tape.upsample_nearest2(v)?;
            add_into(b, &mut y_high, v)?;
        }
        if let (Some((w, bias, pad)), Some(xl)) = (bound_ll, x.low) {
            let v = b.tape.transposed_conv2d(xl, w, Some(bias), 1, pad)?;
            add_into(b, &mut y_low, v)?;
        }

        Ok(OctavePair {
            high: y_high,
            low: y_low,
        })
    }
}

/// Value-level pair used outside the graph (feature taps, spectra).
#[derive(Clone, Debug)]
pub struct OctavePairValue<F: Elem> {
    pub high: Option<Tensor<F>>,
    pub low: Option<Tensor<F>>,
}
