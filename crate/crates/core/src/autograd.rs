//! Define-by-run reverse-mode differentiation. A fresh tape is recorded on
//! every forward pass; `backward` walks it once in reverse topological order
//! (the recording order), accumulating gradients additively over fan-out.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Elem, Tensor};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Gradients for parents, given parent values, own value and upstream grad.
type BackFn<F> =
    Box<dyn Fn(&[&Tensor<F>], &Tensor<F>, &Tensor<F>) -> Result<Vec<Tensor<F>>> + Send>;

struct Node<F> {
    value: Tensor<F>,
    parents: Vec<usize>,
    backward: Option<BackFn<F>>,
}

pub struct Tape<F = f32> {
    nodes: Vec<Node<F>>,
}

/// Per-node gradients produced by `Tape::backward`.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Elem> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zero-filled when the loss does not depend on it.
    pub fn get_or_zero(&self, v: Var, shape: &[usize]) -> Tensor<F> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape).expect("leaf shape is valid"),
        }
    }
}

impl<F: Elem> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Elem> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, parents: Vec<usize>, backward: Option<BackFn<F>>) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an input or parameter; gradients accumulate here.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, vec![], None)
    }

    /// A value the graph treats as a constant (no gradient tracked).
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, vec![], None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|_, _, g| Ok(vec![g.clone(), g.clone()]))),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|_, _, g| Ok(vec![g.clone(), g.mul_scalar(-F::one())]))),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|p, _, g| {
                Ok(vec![g.mul(p[1])?, g.mul(p[0])?])
            })),
        ))
    }

    pub fn mul_scalar(&mut self, a: Var, s: F) -> Var {
        let v = self.value(a).mul_scalar(s);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |_, _, g| Ok(vec![g.mul_scalar(s)]))),
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|p, _, g| {
                let s = g.data()[0];
                Ok(vec![Tensor::full(p[0].shape(), s)?])
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = ops::relu(self.value(a));
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|p, _, g| {
                p[0].zip(g, |x, gv| if x > F::zero() { gv } else { F::zero() })
                    .map(|t| vec![t])
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = ops::sigmoid(self.value(a));
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|_, y, g| {
                y.zip(g, |yv, gv| gv * yv * (F::one() - yv)).map(|t| vec![t])
            })),
        )
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let v = ops::conv2d(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let k = self.value(weight).shape()[2];
        let mut parents = vec![x.0, weight.0];
        if let Some(b) = bias {
            parents.push(b.0);
        }
        let has_bias = bias.is_some();
        Ok(self.push(
            v,
            parents,
            Some(Box::new(move |p, _, g| {
                let (xv, wv) = (p[0], p[1]);
                let (_, _, h, w) = xv.dims4()?;
                let dx = ops::conv2d_input_grad(g, wv, stride, pad, h, w)?;
                let dw = ops::conv2d_weight_grad(xv, g, k, stride, pad)?;
                let mut out = vec![dx, dw];
                if has_bias {
                    out.push(ops::bias_grad(g)?);
                }
                Ok(out)
            })),
        ))
    }

    pub fn transposed_conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let v = ops::transposed_conv2d(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let k = self.value(weight).shape()[2];
        let mut parents = vec![x.0, weight.0];
        if let Some(b) = bias {
            parents.push(b.0);
        }
        let has_bias = bias.is_some();
        Ok(self.push(
            v,
            parents,
            Some(Box::new(move |p, _, g| {
                let (xv, wv) = (p[0], p[1]);
                // adjoint of the adjoint: plain convolution by the same kernel
                let dx = ops::conv2d(g, wv, None, stride, pad)?;
                let dw = ops::transposed_conv2d_weight_grad(xv, g, k, stride, pad)?;
                let mut out = vec![dx, dw];
                if has_bias {
                    out.push(ops::bias_grad(g)?);
                }
                Ok(out)
            })),
        ))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (v, arg) = ops::max_pool2(self.value(x))?;
        Ok(self.push(
            v,
            vec![x.0],
            Some(Box::new(move |p, _, g| {
                Ok(vec![ops::max_pool2_backward(g, &arg, p[0].shape())?])
            })),
        ))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let v = ops::avg_pool2(self.value(x))?;
        Ok(self.push(
            v,
            vec![x.0],
            Some(Box::new(|p, _, g| {
                Ok(vec![ops::avg_pool2_backward(g, p[0].shape())?])
            })),
        ))
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let v = ops::upsample_nearest2(self.value(x))?;
        Ok(self.push(
            v,
            vec![x.0],
            Some(Box::new(|p, _, g| {
                Ok(vec![ops::upsample_nearest2_backward(g, p[0].shape())?])
            })),
        ))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).concat_channels(self.value(b))?;
        let ca = self.value(a).shape()[1];
        Ok(self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(move |_, _, g| {
                let (ga, gb) = g.split_channels(ca)?;
                Ok(vec![ga, gb])
            })),
        ))
    }

    /// Train-mode batch norm; the batch statistics are part of the graph.
    /// Returns the output plus the batch mean/var so the caller can update
    /// running statistics outside the graph.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: F,
    ) -> Result<(Var, Vec<F>, Vec<F>)> {
        let (v, cache) = ops::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let mean = cache.mean.clone();
        let var = cache.var.clone();
        let out = self.push(
            v,
            vec![x.0, gamma.0, beta.0],
            Some(Box::new(move |p, _, g| {
                let (dx, dgamma, dbeta) = ops::batch_norm_train_backward(g, p[1], &cache, eps)?;
                Ok(vec![dx, dgamma, dbeta])
            })),
        );
        Ok((out, mean, var))
    }

    /// Eval-mode batch norm: a per-channel affine map by the running stats.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: Vec<F>,
        running_var: Vec<F>,
        eps: F,
    ) -> Result<Var> {
        let v = ops::batch_norm_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            &running_mean,
            &running_var,
            eps,
        )?;
        Ok(self.push(
            v,
            vec![x.0, gamma.0, beta.0],
            Some(Box::new(move |p, _, g| {
                let (n, c, h, w) = g.dims4()?;
                let plane = h * w;
                let mut dx = vec![F::zero(); g.numel()];
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let inv = F::one() / (running_var[ci] + eps).sqrt();
                        let base = (ni * c + ci) * plane;
                        for o in 0..plane {
                            let gv = g.data()[base + o];
                            dx[base + o] = gv * p[1].data()[ci] * inv;
                            dgamma[ci] += gv * (p[0].data()[base + o] - running_mean[ci]) * inv;
                            dbeta[ci] += gv;
                        }
                    }
                }
                Ok(vec![
                    Tensor::from_vec(g.shape(), dx)?,
                    Tensor::from_vec(&[c], dgamma)?,
                    Tensor::from_vec(&[c], dbeta)?,
                ])
            })),
        ))
    }

    /// Class-weighted binary cross-entropy against a constant target.
    /// Predictions are clamped to [eps, 1-eps] before the logs; the gradient
    /// is zero where the clamp saturates.
    pub fn weighted_bce(
        &mut self,
        pred: Var,
        target: &Tensor<F>,
        w_pos: F,
        mean_reduction: bool,
        clamp_eps: F,
    ) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::ShapeMismatch(format!(
                "bce: pred {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        if let Some(&bad) = target
            .data()
            .iter()
            .find(|&&y| y != F::zero() && y != F::one())
        {
            return Err(Error::Data(format!(
                "bce target contains non-binary value {bad:?}"
            )));
        }
        let lo = clamp_eps;
        let hi = F::one() - clamp_eps;
        let mut loss = F::zero();
        for (&pv, &yv) in p.data().iter().zip(target.data()) {
            let pc = pv.max(lo).min(hi);
            loss -= w_pos * yv * pc.ln() + (F::one() - yv) * (F::one() - pc).ln();
        }
        let scale = if mean_reduction {
            F::one() / F::from_usize(p.numel()).unwrap()
        } else {
            F::one()
        };
        let tgt = target.clone();
        Ok(self.push(
            Tensor::scalar(loss * scale),
            vec![pred.0],
            Some(Box::new(move |p, _, g| {
                let gs = g.data()[0] * scale;
                let mut dp = vec![F::zero(); p[0].numel()];
                for ((d, &pv), &yv) in dp.iter_mut().zip(p[0].data()).zip(tgt.data()) {
                    if pv <= lo || pv >= hi {
                        continue;
                    }
                    *d = gs * (-(w_pos * yv / pv) + (F::one() - yv) / (F::one() - pv));
                }
                Ok(vec![Tensor::from_vec(p[0].shape(), dp)?])
            })),
        ))
    }

    /// Reverse sweep from a scalar loss. Leaves reachable from the loss get
    /// gradients; fan-out accumulates additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&[1])?);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if let Some(bf) = &self.nodes[i].backward {
                let pvals: Vec<&Tensor<F>> = self.nodes[i]
                    .parents
                    .iter()
                    .map(|&p| &self.nodes[p].value)
                    .collect();
                let pgrads = bf(&pvals, &self.nodes[i].value, &g)?;
                debug_assert_eq!(pgrads.len(), self.nodes[i].parents.len());
                for (&p, pg) in self.nodes[i].parents.iter().zip(pgrads) {
                    grads[p] = Some(match grads[p].take() {
                        Some(acc) => acc.add(&pg)?,
                        None => pg,
                    });
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Result of a finite-difference gradient validation.
#[derive(Debug)]
pub struct FdReport {
    /// max relative error per checked parameter
    pub per_param: Vec<f64>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl FdReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-8 {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

/// Compare analytic tape gradients against central finite differences
/// (f(x+h) - f(x-h)) / 2h for every element of every parameter.
///
/// `f` rebuilds the computation from the given parameter leaves and must be
/// deterministic; two forward passes that disagree invalidate the oracle.
pub fn finite_difference_check<F: Elem>(
    f: &dyn Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
    params: &[Tensor<F>],
    h: F,
    tolerance: f64,
) -> Result<FdReport> {
    if h <= F::zero() {
        return Err(Error::Config("finite-difference step must be > 0".into()));
    }
    let eval = |ps: &[Tensor<F>]| -> Result<F> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        if tape.value(loss).numel() != 1 {
            return Err(Error::Contract("fd check needs a scalar-valued f".into()));
        }
        Ok(tape.value(loss).data()[0])
    };

    let base = eval(params)?;
    let again = eval(params)?;
    if base != again {
        return Err(Error::Contract(format!(
            "oracle invalid: two forward passes disagree ({:?} vs {:?})",
            base.to_f64_(),
            again.to_f64_()
        )));
    }

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut per_param = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor<F>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get_or_zero(vars[pi], p.shape());
        let mut worst = 0.0f64;
        for ei in 0..p.numel() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let fp = eval(&work)?;
            work[pi].data_mut()[ei] = orig - h;
            let fm = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (fp - fm).to_f64_() / (2.0 * h.to_f64_());
            worst = worst.max(rel_err(analytic.data()[ei].to_f64_(), numeric));
        }
        per_param.push(worst);
    }
    let max_rel_err = per_param.iter().cloned().fold(0.0, f64::max);
    Ok(FdReport {
        per_param,
        max_rel_err,
        tolerance,
    })
}
