//! Encoder-decoder segmentation network built from octave convolutions and
//! octave transposed convolutions, with skip connections between matching
//! resolution levels, plus parameter and FLOPs accounting.
//!
//! Level l runs at 1/2^l of the input resolution and ch(l) = base * 2^l
//! channels. Max pooling (both frequency maps) sits between encoder levels;
//! decoding upsamples both maps, concatenates the skip frequency-wise and
//! applies one octave transposed convolution followed by one octave
//! convolution. The initial layer consumes the plain image (alpha_in = 0),
//! the final layer emits the single-channel probability map (alpha_out = 0,
//! sigmoid).

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Binder, Mode, SeedRng};
use crate::octave::{
    Activation, ActivationPlacement, AlphaRatio, OctaveConv, OctavePair, OctavePairValue,
    OctaveTransposedConv,
};
use crate::tensor::{Elem, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// number of resolution levels (pools = depth - 1)
    pub depth: usize,
    pub base_channels: usize,
    pub alpha: f64,
    pub convs_per_block: usize,
    pub input_channels: usize,
    pub kernel_size: usize,
    #[serde(default)]
    pub activation_placement: ActivationPlacement,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 64,
            alpha: 0.5,
            convs_per_block: 2,
            input_channels: 3,
            kernel_size: 3,
            activation_placement: ActivationPlacement::BlockLevel,
        }
    }
}

impl ModelConfig {
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn alpha_ratio(&self) -> Result<AlphaRatio> {
        AlphaRatio::new(self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.convs_per_block < 1 {
            return Err(Error::Config("convs_per_block must be >= 1".into()));
        }
        if self.input_channels < 1 {
            return Err(Error::Config("input_channels must be >= 1".into()));
        }
        let alpha = self.alpha_ratio()?;
        for level in 0..self.depth {
            alpha.split(self.channels_at(level)).map_err(|_| {
                Error::Config(format!(
                    "alpha {} does not split {} channels (level {level}) into integers",
                    self.alpha,
                    self.channels_at(level)
                ))
            })?;
        }
        Ok(())
    }
}

/// One octave convolution followed by per-frequency batch norm and ReLU.
#[derive(Clone, Debug)]
struct ConvUnit<F: Elem> {
    conv: OctaveConv<F>,
    bn_high: Option<BatchNorm<F>>,
    bn_low: Option<BatchNorm<F>>,
}

/// Transposed counterpart of `ConvUnit`.
#[derive(Clone, Debug)]
struct TConvUnit<F: Elem> {
    conv: OctaveTransposedConv<F>,
    bn_high: Option<BatchNorm<F>>,
    bn_low: Option<BatchNorm<F>>,
}

fn make_bns<F: Elem>(
    c_high: usize,
    c_low: usize,
) -> Result<(Option<BatchNorm<F>>, Option<BatchNorm<F>>)> {
    let bh = if c_high > 0 {
        Some(BatchNorm::new(c_high)?)
    } else {
        None
    };
    let bl = if c_low > 0 {
        Some(BatchNorm::new(c_low)?)
    } else {
        None
    };
    Ok((bh, bl))
}

impl<F: Elem> ConvUnit<F> {
    fn new(
        c_in: usize,
        c_out: usize,
        alpha_in: AlphaRatio,
        alpha_out: AlphaRatio,
        k: usize,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let conv = OctaveConv::new_he(c_in, c_out, alpha_in, alpha_out, k, rng)?;
        let (bn_high, bn_low) = make_bns(conv.dims.c_out_high, conv.dims.c_out_low)?;
        Ok(Self {
            conv,
            bn_high,
            bn_low,
        })
    }

    fn forward(
        &mut self,
        b: &mut Binder<F>,
        x: OctavePair,
        mode: Mode,
        placement: ActivationPlacement,
    ) -> Result<OctavePair> {
        let y = self.conv.forward(b, x, Activation::Relu, placement)?;
        let block_act = placement == ActivationPlacement::BlockLevel;
        let high = match (y.high, &mut self.bn_high) {
            (Some(h), Some(bn)) => {
                let h = bn.forward(b, h, mode)?;
                Some(if block_act { b.tape.relu(h) } else { h })
            }
            (h, _) => h,
        };
        let low = match (y.low, &mut self.bn_low) {
            (Some(l), Some(bn)) => {
                let l = bn.forward(b, l, mode)?;
                Some(if block_act { b.tape.relu(l) } else { l })
            }
            (l, _) => l,
        };
        Ok(OctavePair { high, low })
    }
}

impl<F: Elem> TConvUnit<F> {
    fn new(
        c_in: usize,
        c_out: usize,
        alpha_in: AlphaRatio,
        alpha_out: AlphaRatio,
        k: usize,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let conv = OctaveTransposedConv::new_he(c_in, c_out, alpha_in, alpha_out, k, rng)?;
        let (bn_high, bn_low) = make_bns(conv.dims.c_out_high, conv.dims.c_out_low)?;
        Ok(Self {
            conv,
            bn_high,
            bn_low,
        })
    }

    fn forward(
        &mut self,
        b: &mut Binder<F>,
        x: OctavePair,
        mode: Mode,
        placement: ActivationPlacement,
    ) -> Result<OctavePair> {
        let y = self.conv.forward(b, x, Activation::Relu, placement)?;
        let block_act = placement == ActivationPlacement::BlockLevel;
        let high = match (y.high, &mut self.bn_high) {
            (Some(h), Some(bn)) => {
                let h = bn.forward(b, h, mode)?;
                Some(if block_act { b.tape.relu(h) } else { h })
            }
            (h, _) => h,
        };
        let low = match (y.low, &mut self.bn_low) {
            (Some(l), Some(bn)) => {
                let l = bn.forward(b, l, mode)?;
                Some(if block_act { b.tape.relu(l) } else { l })
            }
            (l, _) => l,
        };
        Ok(OctavePair { high, low })
    }
}

#[derive(Clone, Debug)]
struct DecoderBlock<F: Elem> {
    tconv: TConvUnit<F>,
    conv: ConvUnit<F>,
}

/// The assembled network.
#[derive(Clone, Debug)]
pub struct OctaveUNet<F: Elem = f32> {
    pub config: ModelConfig,
    initial: ConvUnit<F>,
    encoders: Vec<Vec<ConvUnit<F>>>,
    decoders: Vec<DecoderBlock<F>>,
    final_layer: OctaveTransposedConv<F>,
}

/// Result of a recorded forward pass: the tape, the output node, the
/// parameter leaves in canonical order and any requested feature taps.
pub struct ForwardPass<F: Elem> {
    pub tape: Tape<F>,
    pub output: Var,
    pub param_vars: Vec<Var>,
    pub taps: Vec<(String, OctavePairValue<F>)>,
}

/// Inverts `pad_to_grid`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRecord {
    pub orig_h: usize,
    pub orig_w: usize,
}

/// Reflect-pad right/bottom so H and W become multiples of 2^depth.
pub fn pad_to_grid<F: Elem>(image: &Tensor<F>, depth: usize) -> Result<(Tensor<F>, CropRecord)> {
    let (n, c, h, w) = image.dims4()?;
    let grid = 1usize << depth;
    let ht = h.div_ceil(grid) * grid;
    let wt = w.div_ceil(grid) * grid;
    let rec = CropRecord {
        orig_h: h,
        orig_w: w,
    };
    if (ht, wt) == (h, w) {
        return Ok((image.clone(), rec));
    }
    let mut out = vec![F::zero(); n * c * ht * wt];
    let reflect = |i: usize, n: usize| -> usize {
        if i < n {
            i
        } else {
            // symmetric reflection about the last sample
            n - 1 - (i - n).min(n - 1)
        }
    };
    for ni in 0..n {
        for ci in 0..c {
            let src = &image.data()[(ni * c + ci) * h * w..][..h * w];
            let dst = &mut out[(ni * c + ci) * ht * wt..][..ht * wt];
            for i in 0..ht {
                let si = reflect(i, h);
                for j in 0..wt {
                    dst[i * wt + j] = src[si * w + reflect(j, w)];
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, ht, wt], out)?, rec))
}

/// Undo `pad_to_grid` on a network output.
pub fn crop_from_grid<F: Elem>(output: &Tensor<F>, rec: CropRecord) -> Result<Tensor<F>> {
    output.crop2d_to(0, 0, rec.orig_h, rec.orig_w)
}

/// Per-layer entry of the model inventory.
#[derive(Clone, Debug)]
pub struct LayerInfo {
    pub name: String,
    pub param_count: usize,
}

impl<F: Elem> OctaveUNet<F> {
    pub fn build(config: &ModelConfig, rng: &mut SeedRng) -> Result<Self> {
        config.validate()?;
        let alpha = config.alpha_ratio()?;
        let alpha0 = AlphaRatio::new(0.0)?;
        let k = config.kernel_size;

        let initial = ConvUnit::new(
            config.input_channels,
            config.base_channels,
            alpha0,
            alpha,
            k,
            rng,
        )?;

        let mut encoders = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let c_in = if level == 0 {
                config.base_channels
            } else {
                config.channels_at(level - 1)
            };
            let c_out = config.channels_at(level);
            let mut units = Vec::with_capacity(config.convs_per_block);
            for u in 0..config.convs_per_block {
                let ci = if u == 0 { c_in } else { c_out };
                units.push(ConvUnit::new(ci, c_out, alpha, alpha, k, rng)?);
            }
            encoders.push(units);
        }

        // decoders from the deepest level back toward level 0
        let mut decoders = Vec::new();
        for level in (0..config.depth.saturating_sub(1)).rev() {
            let c_skip = config.channels_at(level);
            let c_below = config.channels_at(level + 1);
            let tconv = TConvUnit::new(c_below + c_skip, c_skip, alpha, alpha, k, rng)?;
            let conv = ConvUnit::new(c_skip, c_skip, alpha, alpha, k, rng)?;
            decoders.push(DecoderBlock { tconv, conv });
        }

        let final_layer =
            OctaveTransposedConv::new_final(config.base_channels, 1, alpha, k, rng)?;

        Ok(Self {
            config: config.clone(),
            initial,
            encoders,
            decoders,
            final_layer,
        })
    }

    /// Valid tap names, in forward order.
    pub fn tap_names(&self) -> Vec<String> {
        let mut names = vec!["initial".to_string()];
        for l in 0..self.encoders.len() {
            names.push(format!("encoder{l}"));
        }
        for (i, _) in self.decoders.iter().enumerate() {
            // decoder blocks run deepest-first; decoder{level} names the
            // level they restore
            names.push(format!("decoder{}", self.encoders.len() - 2 - i));
        }
        names
    }

    /// Record a full forward pass on a fresh tape.
    pub fn forward_graph(
        &mut self,
        image: &Tensor<F>,
        mode: Mode,
        tap_requests: &[String],
    ) -> Result<ForwardPass<F>> {
        let valid = self.tap_names();
        for t in tap_requests {
            if !valid.contains(t) {
                return Err(Error::UnknownTap {
                    requested: t.clone(),
                    valid,
                });
            }
        }
        let (_, c, h, w) = image.dims4()?;
        if c != self.config.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        let grid = 1usize << self.config.depth;
        if h % grid != 0 || w % grid != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {h}x{w} not divisible by 2^depth = {grid}; apply pad_to_grid first"
            )));
        }

        let placement = self.config.activation_placement;
        let mut tape = Tape::new();
        let mut taps = Vec::new();
        let (output, param_vars) = {
            let mut b = Binder::new(&mut tape);
            let xvar = b.tape.constant(image.clone());

            let capture =
                |b: &Binder<F>, taps: &mut Vec<(String, OctavePairValue<F>)>, name: &str, pair: &OctavePair| {
                    if tap_requests.iter().any(|t| t == name) {
                        taps.push((
                            name.to_string(),
                            OctavePairValue {
                                high: pair.high.map(|v| b.tape.value(v).clone()),
                                low: pair.low.map(|v| b.tape.value(v).clone()),
                            },
                        ));
                    }
                };

            let mut cur = self
                .initial
                .forward(&mut b, OctavePair::high_only(xvar), mode, placement)?;
            capture(&b, &mut taps, "initial", &cur);

            let mut skips: Vec<OctavePair> = Vec::with_capacity(self.encoders.len());
            for (level, block) in self.encoders.iter_mut().enumerate() {
                if level > 0 {
                    let high = cur.high.map(|v| b.tape.max_pool2(v)).transpose()?;
                    let low = cur.low.map(|v| b.tape.max_pool2(v)).transpose()?;
                    cur = OctavePair { high, low };
                }
                for unit in block.iter_mut() {
                    cur = unit.forward(&mut b, cur, mode, placement)?;
                }
                capture(&b, &mut taps, &format!("encoder{level}"), &cur);
                skips.push(cur);
            }

            let n_levels = self.encoders.len();
            for (i, dec) in self.decoders.iter_mut().enumerate() {
                let level = n_levels - 2 - i;
                let up_high = cur.high.map(|v| b.tape.upsample_nearest2(v)).transpose()?;
                let up_low = cur.low.map(|v| b.tape.upsample_nearest2(v)).transpose()?;
                let skip = skips[level];
                let high = match (up_high, skip.high) {
                    (Some(u), Some(s)) => Some(b.tape.concat_channels(u, s)?),
                    (u, s) => u.or(s),
                };
                let low = match (up_low, skip.low) {
                    (Some(u), Some(s)) => Some(b.tape.concat_channels(u, s)?),
                    (u, s) => u.or(s),
                };
                cur = OctavePair { high, low };
                cur = dec.tconv.forward(&mut b, cur, mode, placement)?;
                cur = dec.conv.forward(&mut b, cur, mode, placement)?;
                capture(&b, &mut taps, &format!("decoder{level}"), &cur);
            }

            // final layer: raw path sum then sigmoid, so the output is a
            // probability map regardless of the placement flag
            let logits = self
                .final_layer
                .forward(&mut b, cur, Activation::Identity, ActivationPlacement::BlockLevel)?;
            let out = b.tape.sigmoid(logits.high()?);
            (out, b.vars)
        };
        Ok(ForwardPass {
            tape,
            output,
            param_vars,
            taps,
        })
    }

    /// Forward pass returning just the probability map.
    pub fn forward(&mut self, image: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let pass = self.forward_graph(image, mode, &[])?;
        Ok(pass.tape.value(pass.output).clone())
    }

    /// Capture post-activation feature maps at the requested blocks.
    pub fn extract_features(
        &mut self,
        image: &Tensor<F>,
        tap_requests: &[String],
    ) -> Result<Vec<(String, OctavePairValue<F>)>> {
        Ok(self.forward_graph(image, Mode::Eval, tap_requests)?.taps)
    }

    /// Trainable parameters, in the exact order `forward_graph` binds them.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        self.visit_state(false)
            .into_iter()
            .filter_map(|(name, r)| match r {
                StateRef::Tensor(t) => Some((name, t)),
                StateRef::Stats(_) => None,
            })
            .collect()
    }

    /// All persistent state: trainable parameters (in binding order,
    /// interleaved with) batch-norm running statistics. Used by checkpoints.
    pub fn state_mut(&mut self) -> Vec<(String, StateRef<'_, F>)> {
        self.visit_state(true)
    }

    fn visit_state(&mut self, stats: bool) -> Vec<(String, StateRef<'_, F>)> {
        fn bn_entries<'a, F: Elem>(
            prefix: &str,
            tag: &str,
            bn: &'a mut BatchNorm<F>,
            stats: bool,
            out: &mut Vec<(String, StateRef<'a, F>)>,
        ) {
            out.push((format!("{prefix}.{tag}.gamma"), StateRef::Tensor(&mut bn.gamma)));
            out.push((format!("{prefix}.{tag}.beta"), StateRef::Tensor(&mut bn.beta)));
            if stats {
                out.push((
                    format!("{prefix}.{tag}.running_mean"),
                    StateRef::Stats(&mut bn.running_mean),
                ));
                out.push((
                    format!("{prefix}.{tag}.running_var"),
                    StateRef::Stats(&mut bn.running_var),
                ));
            }
        }

        fn conv_unit<'a, F: Elem>(
            prefix: &str,
            u: &'a mut ConvUnit<F>,
            stats: bool,
            out: &mut Vec<(String, StateRef<'a, F>)>,
        ) {
            for (tag, path) in [
                ("hh", &mut u.conv.hh),
                ("hl", &mut u.conv.hl),
                ("lh", &mut u.conv.lh),
                ("ll", &mut u.conv.ll),
            ] {
                if let Some(l) = path {
                    out.push((format!("{prefix}.{tag}.weight"), StateRef::Tensor(&mut l.weight)));
                    out.push((format!("{prefix}.{tag}.bias"), StateRef::Tensor(&mut l.bias)));
                }
            }
            if let Some(bn) = &mut u.bn_high {
                bn_entries(prefix, "bn_high", bn, stats, out);
            }
            if let Some(bn) = &mut u.bn_low {
                bn_entries(prefix, "bn_low", bn, stats, out);
            }
        }

        fn tconv_unit<'a, F: Elem>(
            prefix: &str,
            u: &'a mut TConvUnit<F>,
            stats: bool,
            out: &mut Vec<(String, StateRef<'a, F>)>,
        ) {
            for (tag, path) in [
                ("hh", &mut u.conv.hh),
                ("hl", &mut u.conv.hl),
                ("lh", &mut u.conv.lh),
                ("ll", &mut u.conv.ll),
            ] {
                if let Some(l) = path {
                    out.push((format!("{prefix}.{tag}.weight"), StateRef::Tensor(&mut l.weight)));
                    out.push((format!("{prefix}.{tag}.bias"), StateRef::Tensor(&mut l.bias)));
                }
            }
            if let Some(bn) = &mut u.bn_high {
                bn_entries(prefix, "bn_high", bn, stats, out);
            }
            if let Some(bn) = &mut u.bn_low {
                bn_entries(prefix, "bn_low", bn, stats, out);
            }
        }

        let mut out: Vec<(String, StateRef<'_, F>)> = Vec::new();
        let n_levels = self.encoders.len();
        conv_unit("initial", &mut self.initial, stats, &mut out);
        for (level, block) in self.encoders.iter_mut().enumerate() {
            for (u, unit) in block.iter_mut().enumerate() {
                conv_unit(&format!("encoder{level}.conv{u}"), unit, stats, &mut out);
            }
        }
        for (i, dec) in self.decoders.iter_mut().enumerate() {
            let level = n_levels - 2 - i;
            tconv_unit(&format!("decoder{level}.tconv"), &mut dec.tconv, stats, &mut out);
            conv_unit(&format!("decoder{level}.conv"), &mut dec.conv, stats, &mut out);
        }
        for (tag, path) in [
            ("hh", &mut self.final_layer.hh),
            ("hl", &mut self.final_layer.hl),
            ("lh", &mut self.final_layer.lh),
            ("ll", &mut self.final_layer.ll),
        ] {
            if let Some(l) = path {
                out.push((format!("final.{tag}.weight"), StateRef::Tensor(&mut l.weight)));
                out.push((format!("final.{tag}.bias"), StateRef::Tensor(&mut l.bias)));
            }
        }
        out
    }

    pub fn count_params(&mut self) -> usize {
        self.params_mut().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Layer inventory: name and parameter count per unit.
    pub fn inventory(&mut self) -> Vec<LayerInfo> {
        use std::collections::BTreeMap;
        let mut by_block: BTreeMap<String, usize> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for (name, t) in self.params_mut() {
            let block = name.rsplitn(3, '.').nth(2).unwrap_or(&name).to_string();
            if !by_block.contains_key(&block) {
                order.push(block.clone());
            }
            *by_block.entry(block).or_insert(0) += t.numel();
        }
        order
            .into_iter()
            .map(|name| LayerInfo {
                param_count: by_block[&name],
                name,
            })
            .collect()
    }

    /// Multiply-accumulate count (x2 convention) of one forward pass at the
    /// given input resolution; convolution-type layers only.
    pub fn count_flops(&self, h: usize, w: usize) -> u64 {
        let k = self.config.kernel_size as u64;
        // per-path cost at the path's own output resolution
        let oct = |cih: usize, cil: usize, coh: usize, col: usize, h: usize, w: usize| -> u64 {
            let (full, quarter) = ((h * w) as u64, (h / 2) as u64 * (w / 2) as u64);
            let mut f = 0u64;
            f += 2 * k * k * cih as u64 * coh as u64 * full; // H->H
            f += 2 * k * k * cih as u64 * col as u64 * quarter; // H->L
            f += 2 * k * k * cil as u64 * coh as u64 * quarter; // L->H (conv at low res)
            f += 2 * k * k * cil as u64 * col as u64 * quarter; // L->L
            f
        };
        let mut total = 0u64;
        let d = &self.initial.conv.dims;
        total += oct(d.c_in_high, d.c_in_low, d.c_out_high, d.c_out_low, h, w);
        let (mut lh_, mut lw) = (h, w);
        for (level, block) in self.encoders.iter().enumerate() {
            if level > 0 {
                lh_ /= 2;
                lw /= 2;
            }
            for unit in block {
                let d = &unit.conv.dims;
                total += oct(d.c_in_high, d.c_in_low, d.c_out_high, d.c_out_low, lh_, lw);
            }
        }
        for dec in &self.decoders {
            lh_ *= 2;
            lw *= 2;
            let d = &dec.tconv.conv.dims;
            total += oct(d.c_in_high, d.c_in_low, d.c_out_high, d.c_out_low, lh_, lw);
            let d = &dec.conv.conv.dims;
            total += oct(d.c_in_high, d.c_in_low, d.c_out_high, d.c_out_low, lh_, lw);
        }
        let d = &self.final_layer.dims;
        total += oct(d.c_in_high, d.c_in_low, d.c_out_high, d.c_out_low, h, w);
        total
    }

    /// Cast all state to another element type (f32 <-> f64).
    pub fn cast<G: Elem>(&self) -> OctaveUNet<G> {
        // round-trips through f64
        let mut src = self.clone();
        let mut rng = <SeedRng as rand::SeedableRng>::seed_from_u64(0);
        let mut dst: OctaveUNet<G> =
            OctaveUNet::build(&self.config, &mut rng).expect("config already validated");
        for ((_, s), (_, d)) in src.visit_state(true).into_iter().zip(dst.visit_state(true)) {
            match (s, d) {
                (StateRef::Tensor(s), StateRef::Tensor(d)) => *d = s.cast(),
                (StateRef::Stats(s), StateRef::Stats(d)) => {
                    *d = s.iter().map(|&v| G::cast_from(v.to_f64_())).collect();
                }
                _ => unreachable!("identical configs traverse identically"),
            }
        }
        dst
    }
}

/// Mutable reference to one persisted state buffer.
pub enum StateRef<'a, F: Elem> {
    Tensor(&'a mut Tensor<F>),
    Stats(&'a mut Vec<F>),
}
