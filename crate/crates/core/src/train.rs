//! Training: class-weighted BCE configuration, Adam, learning-rate plateau
//! schedule and the epoch loop with per-epoch validation logging.

use crate::autograd::Var;
use crate::checkpoint;
use crate::data::{augment, AugmentationConfig, Sample};
use crate::error::{Error, Result};
use crate::eval::{self, ScalarMetrics};
use crate::nn::{Mode, SeedRng};
use crate::tensor::{Elem, Tensor};
use crate::unet::OctaveUNet;
use rand::seq::SliceRandom;
use rand::SeedableRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightMode {
    /// Eq. as written: w_pos = p_pos / p_neg (down-weights vessels).
    PaperRatio,
    /// w_pos = p_neg / p_pos: the conventional imbalance correction.
    InverseRatio,
    Manual(f64),
}

impl WeightMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper-ratio" => Ok(Self::PaperRatio),
            "inverse-ratio" => Ok(Self::InverseRatio),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|w| *w > 0.0)
                .map(Self::Manual)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "loss weight mode '{other}' is not paper-ratio, inverse-ratio or a positive number"
                    ))
                }),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub mode: WeightMode,
    pub mean_reduction: bool,
    pub clamp_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: WeightMode::PaperRatio,
            mean_reduction: true,
            clamp_eps: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clamp_eps > 0.0 && self.clamp_eps <= 1e-3) {
            return Err(Error::Config(format!(
                "clamp epsilon {} outside (0, 1e-3]",
                self.clamp_eps
            )));
        }
        if let WeightMode::Manual(w) = self.mode {
            if !(w > 0.0) {
                return Err(Error::Config(format!("manual w_pos {w} must be > 0")));
            }
        }
        Ok(())
    }

    /// Resolve the positive-class weight against the training truths.
    pub fn resolve_w_pos<'a, I>(&self, truths: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a Tensor<f32>>,
    {
        match self.mode {
            WeightMode::Manual(w) => Ok(w),
            WeightMode::PaperRatio => compute_pos_weight(truths),
            WeightMode::InverseRatio => Ok(1.0 / compute_pos_weight(truths)?),
        }
    }
}

/// Ratio of positive to negative pixel counts over the given truths.
pub fn compute_pos_weight<'a, I>(truths: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Tensor<f32>>,
{
    let mut pos = 0u64;
    let mut neg = 0u64;
    for t in truths {
        for &v in t.data() {
            if v == 1.0 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(format!(
            "single-class training set ({pos} positive / {neg} negative pixels)"
        )));
    }
    Ok(pos as f64 / neg as f64)
}

/// Adam with bias correction; moments are allocated lazily on the first
/// step to match the parameter shapes.
#[derive(Clone, Debug)]
pub struct Adam<F: Elem> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Elem> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Number of scalar moment entries (2x the parameter count once
    /// initialized).
    pub fn moment_count(&self) -> usize {
        self.m.iter().chain(&self.v).map(|t| t.numel()).sum()
    }

    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<F>)],
        grads: &[Tensor<F>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.shape()))
                .collect::<Result<_>>()?;
            self.v = self.m.clone();
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter '{name}' {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if let Some(bad) = g.data().iter().find(|v| !v.to_f64_().is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of '{name}' contains {bad:?}"
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let (b1, b2) = (F::cast_from(self.beta1), F::cast_from(self.beta2));
        let bc1 = F::cast_from(1.0 - self.beta1.powf(t));
        let bc2 = F::cast_from(1.0 - self.beta2.powf(t));
        let lr = F::cast_from(self.lr);
        let eps = F::cast_from(self.eps);
        let one = F::one();
        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            for ((m, v), (&g, p)) in m
                .iter_mut()
                .zip(v.iter_mut())
                .zip(g.data().iter().zip(pd.iter_mut()))
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Learning-rate plateau schedule: decay by `factor` after `patience`
/// epochs without a strict improvement beyond `tolerance`.
#[derive(Clone, Copy, Debug)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub tolerance: f64,
    best: f64,
    since_improvement: usize,
}

impl PlateauSchedule {
    pub fn new(lr0: f64) -> Self {
        Self {
            lr: lr0,
            patience: 10,
            factor: 0.9,
            tolerance: 1e-6,
            best: f64::INFINITY,
            since_improvement: 0,
        }
    }

    /// Feed one epoch loss; returns the learning rate to use next.
    pub fn observe(&mut self, loss: f64) -> Result<f64> {
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("epoch loss {loss}")));
        }
        if loss < self.best - self.tolerance {
            self.best = loss;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                self.lr *= self.factor;
                self.since_improvement = 0;
            }
        }
        Ok(self.lr)
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub loss: LossConfig,
    pub augmentation: Option<AugmentationConfig>,
    pub seed: u64,
    pub tau: f64,
    /// run validation every n epochs (always on the last)
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 1,
            lr0: 0.001,
            loss: LossConfig::default(),
            augmentation: Some(AugmentationConfig::default()),
            seed: 0,
            tau: 0.5,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 {} must be > 0", self.lr0)));
        }
        self.loss.validate()?;
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }
}

/// Per-epoch log entry; `to_csv` renders the external log line format.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub val: Option<ValMetrics>,
}

#[derive(Clone, Copy, Debug)]
pub struct ValMetrics {
    pub scalar: ScalarMetrics,
    pub auroc: f64,
    pub ap: f64,
}

impl EpochLog {
    pub fn to_csv(&self) -> String {
        match &self.val {
            Some(v) => format!(
                "{},{:.6e},{:.6e},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                self.epoch,
                self.loss,
                self.lr,
                v.scalar.acc,
                v.scalar.se,
                v.scalar.sp,
                v.scalar.f1,
                v.auroc,
                v.ap
            ),
            None => format!("{},{:.6e},{:.6e},,,,,,", self.epoch, self.loss, self.lr),
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub w_pos: f64,
    pub best_epoch: Option<usize>,
    pub best_auroc: f64,
    /// serialized checkpoint of the best-by-validation-AUROC model
    pub best_checkpoint: Option<Vec<u8>>,
}

/// Pooled validation metrics: confusion at tau plus AUROC/AP over the
/// concatenated pixels of all samples.
pub fn validate_model(
    model: &mut OctaveUNet<f32>,
    samples: &[Sample],
    tau: f64,
    fov_restricted: bool,
) -> Result<ValMetrics> {
    let mut probs = Vec::new();
    let mut truths = Vec::new();
    for s in samples {
        let y = model.forward(&s.image, Mode::Eval)?;
        for (i, (&p, &t)) in y.data().iter().zip(s.truth.data()).enumerate() {
            if fov_restricted {
                if let Some(f) = &s.fov {
                    if f.data()[i] == 0.0 {
                        continue;
                    }
                }
            }
            probs.push(p);
            truths.push(t);
        }
    }
    let p = Tensor::from_vec(&[probs.len()], probs)?;
    let t = Tensor::from_vec(&[truths.len()], truths)?;
    let counts = eval::confusion(&eval::binarize(&p, tau)?, &t, None)?;
    Ok(ValMetrics {
        scalar: eval::scalar_metrics(&counts),
        auroc: eval::auroc(&p, &t, None)?,
        ap: eval::average_precision(&p, &t, None)?,
    })
}

fn stack_batch(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (_, c, h, w) = samples[0].image.dims4()?;
    let mut images = Vec::with_capacity(samples.len() * c * h * w);
    let mut truths = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        let (_, sc, sh, sw) = s.image.dims4()?;
        if (sc, sh, sw) != (c, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "cannot batch samples of different sizes ({sh}x{sw} vs {h}x{w})"
            )));
        }
        images.extend_from_slice(s.image.data());
        truths.extend_from_slice(s.truth.data());
    }
    Ok((
        Tensor::from_vec(&[samples.len(), c, h, w], images)?,
        Tensor::from_vec(&[samples.len(), 1, h, w], truths)?,
    ))
}

/// The full training loop. Mutates `model` in place (final weights) and
/// returns logs plus the best-by-validation-AUROC checkpoint.
pub fn train(
    model: &mut OctaveUNet<f32>,
    train_samples: &[Sample],
    val_samples: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_samples.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let w_pos = config
        .loss
        .resolve_w_pos(train_samples.iter().map(|s| &s.truth))?;
    let mut rng = SeedRng::seed_from_u64(config.seed);
    let mut adam = Adam::<f32>::new(config.lr0);
    let mut schedule = PlateauSchedule::new(config.lr0);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best_auroc = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut best_checkpoint = None;

    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| match &config.augmentation {
                    Some(a) => augment(&train_samples[i], a, &mut rng),
                    None => Ok(train_samples[i].clone()),
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample> = batch.iter().collect();
            let (images, truths) = stack_batch(&refs)?;

            let mut pass = model.forward_graph(&images, Mode::Train, &[])?;
            let loss_var: Var = pass.tape.weighted_bce(
                pass.output,
                &truths,
                w_pos as f32,
                config.loss.mean_reduction,
                config.loss.clamp_eps as f32,
            )?;
            let loss = pass.tape.value(loss_var).data()[0] as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {epoch}, step {steps}"
                )));
            }
            epoch_loss += loss;
            steps += 1;

            let grads = pass.tape.backward(loss_var)?;
            let mut params = model.params_mut();
            let grad_tensors: Vec<Tensor<f32>> = pass
                .param_vars
                .iter()
                .zip(&params)
                .map(|(&v, (_, p))| grads.get_or_zero(v, p.shape()))
                .collect();
            adam.lr = schedule.lr;
            adam.step(&mut params, &grad_tensors)?;
        }
        let mean_loss = epoch_loss / steps as f64;
        let lr_used = schedule.lr;
        schedule.observe(mean_loss)?;

        let val = if !val_samples.is_empty()
            && (epoch % config.val_every == 0 || epoch == config.epochs)
        {
            let v = validate_model(model, val_samples, config.tau, false)?;
            if v.auroc > best_auroc {
                best_auroc = v.auroc;
                best_epoch = Some(epoch);
                let mut buf = Vec::new();
                checkpoint::save_model(&mut buf, model)?;
                best_checkpoint = Some(buf);
            }
            Some(v)
        } else {
            None
        };
        log.push(EpochLog {
            epoch,
            loss: mean_loss,
            lr: lr_used,
            val,
        });
    }

    Ok(TrainOutcome {
        log,
        w_pos,
        best_epoch,
        best_auroc,
        best_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::data::synth_vessels;
    use crate::octave::ActivationPlacement;
    use crate::unet::ModelConfig;

    #[test]
    fn pos_weight_examples() {
        let t = |pos: usize, neg: usize| {
            let mut d = vec![1.0f32; pos];
            d.extend(vec![0.0; neg]);
            Tensor::from_vec(&[pos + neg], d).unwrap()
        };
        let w = compute_pos_weight([&t(10, 90)]).unwrap();
        assert!((w - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(compute_pos_weight([&t(50, 50)]).unwrap(), 1.0);
        assert!(compute_pos_weight([&t(10, 0)]).is_err());
        // inverse mode
        let cfg = LossConfig {
            mode: WeightMode::InverseRatio,
            ..LossConfig::default()
        };
        assert!((cfg.resolve_w_pos([&t(10, 90)]).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn bce_hand_oracle_four_pixels() {
        // hand-summed scalar arithmetic at w_pos = 1/9
        let pred = [0.8f64, 0.3, 0.6, 0.1];
        let target = [1.0f64, 0.0, 1.0, 0.0];
        let w = 1.0 / 9.0;
        let expect: f64 = -(w * (0.8f64).ln()
            + (1.0f64 - 0.3).ln()
            + w * (0.6f64).ln()
            + (1.0f64 - 0.1).ln())
            / 4.0;
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::from_vec(&[4], pred.to_vec()).unwrap());
        let t = Tensor::from_vec(&[4], target.to_vec()).unwrap();
        let l = tape.weighted_bce(p, &t, w, true, 1e-7).unwrap();
        assert!((tape.value(l).data()[0] - expect).abs() < 1e-7);
    }

    #[test]
    fn adam_zero_grad_is_identity() {
        let mut p = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]).unwrap();
        let mut adam = Adam::new(0.01);
        let mut params = vec![("p".to_string(), &mut p)];
        adam.step(&mut params, &[g]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = Tensor::from_vec(&[2], vec![0.0f64, 0.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![3.7f64, -0.002]).unwrap();
        let mut adam = Adam::new(0.001);
        let mut params = vec![("p".to_string(), &mut p)];
        adam.step(&mut params, &[g]).unwrap();
        // bias-corrected first step = -lr * g / (|g| + eps') = -lr*sign(g)
        assert!((p.data()[0] + 0.001).abs() < 1e-6);
        assert!((p.data()[1] - 0.001).abs() < 1e-6);
    }

    #[test]
    fn adam_three_step_scalar_trace() {
        // hand-computed recurrence on a scalar parameter
        let (b1, b2, eps, lr) = (0.9f64, 0.999, 1e-8, 0.01);
        let grads = [0.5f64, -0.2, 0.1];
        let mut theta = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powf(t));
            let v_hat = v / (1.0 - b2.powf(t));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut p = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        let mut adam = Adam::new(lr);
        for &g in &grads {
            let gt = Tensor::from_vec(&[1], vec![g]).unwrap();
            let mut params = vec![("p".to_string(), &mut p)];
            adam.step(&mut params, &[gt]).unwrap();
        }
        assert!((p.data()[0] - theta).abs() < 1e-10);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let g = Tensor::from_vec(&[1], vec![f64::NAN]).unwrap();
        let mut adam = Adam::new(0.01);
        let mut params = vec![("theta".to_string(), &mut p)];
        let err = adam.step(&mut params, &[g]).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }

    #[test]
    fn adam_moment_count_is_twice_params() {
        let mut p1 = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let mut p2 = Tensor::<f64>::zeros(&[5]).unwrap();
        let g1 = Tensor::zeros(&[2, 3]).unwrap();
        let g2 = Tensor::zeros(&[5]).unwrap();
        let mut adam = Adam::new(0.01);
        let mut params = vec![("a".to_string(), &mut p1), ("b".to_string(), &mut p2)];
        adam.step(&mut params, &[g1, g2]).unwrap();
        assert_eq!(adam.moment_count(), 2 * (6 + 5));
    }

    #[test]
    fn schedule_decay_behavior() {
        let mut s = PlateauSchedule::new(0.001);
        // monotone decreasing: no decay
        for i in 0..30 {
            s.observe(1.0 - i as f64 * 0.01).unwrap();
        }
        assert_eq!(s.lr, 0.001);
        // flat for 10 epochs -> one decay
        let mut s = PlateauSchedule::new(0.001);
        s.observe(1.0).unwrap();
        for _ in 0..10 {
            s.observe(1.0).unwrap();
        }
        assert!((s.lr - 0.0009).abs() < 1e-15);
        // flat for 20 -> two decays
        for _ in 0..10 {
            s.observe(1.0).unwrap();
        }
        assert!((s.lr - 0.00081).abs() < 1e-15);
        assert!(s.observe(f64::NAN).is_err());
    }

    fn desk_model(alpha: f64, seed: u64) -> OctaveUNet<f32> {
        let cfg = ModelConfig {
            depth: 2,
            base_channels: 4,
            alpha,
            convs_per_block: 1,
            input_channels: 3,
            kernel_size: 3,
            activation_placement: ActivationPlacement::BlockLevel,
        };
        OctaveUNet::build(&cfg, &mut SeedRng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let samples = synth_vessels(2, 32, &mut SeedRng::seed_from_u64(77)).unwrap();
        let config = TrainConfig {
            epochs: 10,
            augmentation: None,
            seed: 5,
            val_every: 10,
            loss: LossConfig {
                mode: WeightMode::InverseRatio,
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut m1 = desk_model(0.5, 3);
        let out1 = train(&mut m1, &samples, &samples, &config).unwrap();
        assert!(out1.log.last().unwrap().loss < out1.log[0].loss);

        let mut m2 = desk_model(0.5, 3);
        let out2 = train(&mut m2, &samples, &samples, &config).unwrap();
        let trace1: Vec<String> = out1.log.iter().map(|l| l.to_csv()).collect();
        let trace2: Vec<String> = out2.log.iter().map(|l| l.to_csv()).collect();
        assert_eq!(trace1, trace2);
        assert_eq!(out1.best_checkpoint, out2.best_checkpoint);
        assert!(out1.best_epoch.is_some());
    }

    #[test]
    fn training_with_augmentation_and_batching_runs() {
        let samples = synth_vessels(4, 32, &mut SeedRng::seed_from_u64(78)).unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed: 1,
            ..TrainConfig::default()
        };
        let mut model = desk_model(0.5, 4);
        let out = train(&mut model, &samples, &samples[..1], &config).unwrap();
        assert_eq!(out.log.len(), 2);
        assert!(out.w_pos > 0.0 && out.w_pos < 1.0);
    }
}
