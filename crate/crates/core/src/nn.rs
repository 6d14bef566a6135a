//! Single-frequency layers: convolution, transposed convolution, batch
//! normalization and He initialization. These are the building blocks the
//! octave operations compose.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Deterministic RNG used across the crate.
pub type SeedRng = rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// He (fan-in, normal) initialization for a [C_out, C_in, k, k] kernel:
/// zero mean, std = sqrt(2 / (C_in * k * k)).
pub fn he_init<F: Elem, R: Rng>(shape: &[usize], rng: &mut R) -> Result<Tensor<F>> {
    if shape.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "he_init expects a rank-4 kernel shape, got {shape:?}"
        )));
    }
    let fan_in = shape[1] * shape[2] * shape[3];
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("std > 0");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::cast_from(normal.sample(rng)))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Records parameter leaves on a tape in a fixed order, so gradients can be
/// matched back to the owning tensors after `backward`.
pub struct Binder<'a, F: Elem> {
    pub tape: &'a mut Tape<F>,
    pub vars: Vec<Var>,
}

impl<'a, F: Elem> Binder<'a, F> {
    pub fn new(tape: &'a mut Tape<F>) -> Self {
        Self {
            tape,
            vars: Vec::new(),
        }
    }

    pub fn bind(&mut self, t: &Tensor<F>) -> Var {
        let v = self.tape.leaf(t.clone());
        self.vars.push(v);
        v
    }
}

fn check_kernel_geometry(k: usize, stride: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(Error::Config(format!("kernel size must be odd, got {k}")));
    }
    if stride < 1 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    Ok(())
}

/// Standard convolution layer, weight [C_out, C_in, k, k].
#[derive(Clone, Debug)]
pub struct Conv2d<F: Elem> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
    pub padding: usize,
}

impl<F: Elem> Conv2d<F> {
    pub fn new_he<R: Rng>(
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_kernel_geometry(k, stride)?;
        Ok(Self {
            weight: he_init(&[c_out, c_in, k, k], rng)?,
            bias: Tensor::zeros(&[c_out])?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, b: &mut Binder<F>, x: Var) -> Result<Var> {
        let w = b.bind(&self.weight);
        let bias = b.bind(&self.bias);
        b.tape.conv2d(x, w, Some(bias), self.stride, self.padding)
    }
}

/// Transposed convolution layer, weight [C_in, C_out, k, k].
#[derive(Clone, Debug)]
pub struct TransposedConv2d<F: Elem> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
    pub padding: usize,
}

impl<F: Elem> TransposedConv2d<F> {
    pub fn new_he<R: Rng>(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_kernel_geometry(k, stride)?;
        // fan-in of the adjoint map is C_in * k * k as well
        Ok(Self {
            weight: he_init(&[c_in, c_out, k, k], rng)?,
            bias: Tensor::zeros(&[c_out])?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, b: &mut Binder<F>, x: Var) -> Result<Var> {
        let w = b.bind(&self.weight);
        let bias = b.bind(&self.bias);
        b.tape
            .transposed_conv2d(x, w, Some(bias), self.stride, self.padding)
    }
}

/// Batch normalization with running statistics. Running stats live outside
/// the autograd graph and are updated by train-mode forwards only.
#[derive(Clone, Debug)]
pub struct BatchNorm<F: Elem> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub momentum: F,
    pub eps: F,
}

impl<F: Elem> BatchNorm<F> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::ones(&[channels])?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: vec![F::zero(); channels],
            running_var: vec![F::one(); channels],
            momentum: F::cast_from(0.1),
            eps: F::cast_from(1e-5),
        })
    }

    pub fn forward(&mut self, b: &mut Binder<F>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = b.bind(&self.gamma);
        let beta = b.bind(&self.beta);
        match mode {
            Mode::Train => {
                let (y, mean, var) = b.tape.batch_norm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                for (r, bm) in self.running_mean.iter_mut().zip(&mean) {
                    *r = (F::one() - m) * *r + m * *bm;
                }
                for (r, bv) in self.running_var.iter_mut().zip(&var) {
                    *r = (F::one() - m) * *r + m * *bv;
                }
                Ok(y)
            }
            Mode::Eval => b.tape.batch_norm_eval(
                x,
                gamma,
                beta,
                self.running_mean.clone(),
                self.running_var.clone(),
                self.eps,
            ),
        }
    }
}
