//! End-to-end acceptance checks, one test (and one printed pass/fail line)
//! per criterion:
//!
//!  1. gradient correctness of every layer type
//!  2. alpha = 0 reduction to a plain UNet, octave ops vs composition oracles
//!  3. compute accounting: parameter invariance and FLOPs ratios over alpha
//!  4. AUROC / AP / scalar-metric oracles
//!  5. learning sanity on the synthetic vessel benchmark
//!  6. octave-vs-baseline quality/compute trend over five seeds
//!  7. threshold-sweep properties on the trained model
//!  8. spectral analysis: DFT oracle, Parseval, low-group energy focus
//!  9. fixed-seed byte-identical logs and checkpoints
//! 10. checkpoint round trip and corruption rejection
//!
//! The trained-model criteria (5-8) share one lazily trained fixture.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use octseg::checkpoint::{load_model, save_model};
use octseg::data::{synth_vessels, Sample};
use octseg::eval::{self, ConfusionCounts};
use octseg::gradcheck::gradient_check_suite;
use octseg::nn::{Mode, SeedRng};
use octseg::octave::{ActivationPlacement, AlphaRatio, OctaveConv};
use octseg::ops;
use octseg::reference;
use octseg::spectral::{average_energy, energy_fraction_within, fft2_magnitude, GroupTag};
use octseg::train::{train, validate_model, LossConfig, TrainConfig, WeightMode};
use octseg::unet::{ModelConfig, OctaveUNet, StateRef};
use octseg::Tensor;
use rand::{Rng, SeedableRng};

fn report(criterion: usize, ok: bool, detail: &str) {
    println!(
        "criterion {criterion:2} {}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------- fixtures

/// 40 synthetic 64x64 vessel images: first 32 train, last 8 test.
fn benchmark() -> &'static (Vec<Sample>, Vec<Sample>) {
    static DATA: OnceLock<(Vec<Sample>, Vec<Sample>)> = OnceLock::new();
    DATA.get_or_init(|| {
        let mut rng = SeedRng::seed_from_u64(42);
        let mut all = synth_vessels(40, 64, &mut rng).expect("synthesis");
        let test = all.split_off(32);
        (all, test)
    })
}

fn small_config(alpha: f64) -> ModelConfig {
    ModelConfig {
        depth: 3,
        base_channels: 8,
        alpha,
        ..ModelConfig::default()
    }
}

fn bench_train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        loss: LossConfig {
            // the synthetic foreground fraction (~6%) is mild enough that
            // unweighted BCE converges fastest at this scale
            mode: WeightMode::Manual(1.0),
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    }
}

struct TrainedFixture {
    /// serialized final model (alpha = 0.5, depth 3, base 8)
    checkpoint: Vec<u8>,
    train_seconds: f64,
}

fn trained() -> &'static TrainedFixture {
    static FIX: OnceLock<TrainedFixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let (train_set, test_set) = benchmark();
        let mut rng = SeedRng::seed_from_u64(1);
        let mut model = OctaveUNet::<f32>::build(&small_config(0.5), &mut rng).unwrap();
        let start = Instant::now();
        train(&mut model, train_set, test_set, &bench_train_config(15, 1)).unwrap();
        let train_seconds = start.elapsed().as_secs_f64();
        let mut checkpoint = Vec::new();
        save_model(&mut checkpoint, &mut model).unwrap();
        TrainedFixture {
            checkpoint,
            train_seconds,
        }
    })
}

fn trained_model() -> OctaveUNet<f32> {
    load_model(&mut trained().checkpoint.as_slice()).unwrap()
}

/// Pooled test-set scores and truths of the trained fixture.
fn pooled_test_scores(model: &mut OctaveUNet<f32>) -> (Tensor<f32>, Tensor<f32>) {
    let (_, test_set) = benchmark();
    let mut probs = Vec::new();
    let mut truth = Vec::new();
    for s in test_set {
        let y = model.forward(&s.image, Mode::Eval).unwrap();
        probs.extend_from_slice(y.data());
        truth.extend_from_slice(s.truth.data());
    }
    (
        Tensor::from_vec(&[probs.len()], probs).unwrap(),
        Tensor::from_vec(&[truth.len()], truth).unwrap(),
    )
}

fn rand_t(shape: &[usize], rng: &mut SeedRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// ------------------------------------------------- criterion 1: gradients

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let results = gradient_check_suite(2024).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let all_pass = results.iter().all(|r| r.pass);
    let worst = results
        .iter()
        .map(|r| r.max_rel_err)
        .fold(0.0f64, f64::max);
    let names: Vec<&str> = results.iter().map(|r| r.name.as_str()).collect();
    report(
        1,
        all_pass && results.len() == 6 && elapsed < 60.0,
        &format!(
            "finite differences over {names:?}: worst rel err {worst:.2e}, {elapsed:.1} s"
        ),
    );
}

// --------------------------------------------- criterion 2: alpha-0 reduction

/// Owned snapshot of the model state for the hand-rolled composition.
struct Snapshot {
    tensors: BTreeMap<String, Tensor<f32>>,
    stats: BTreeMap<String, Vec<f32>>,
}

fn snapshot(model: &mut OctaveUNet<f32>) -> Snapshot {
    let mut tensors = BTreeMap::new();
    let mut stats = BTreeMap::new();
    for (name, r) in model.state_mut() {
        match r {
            StateRef::Tensor(t) => {
                tensors.insert(name, t.clone());
            }
            StateRef::Stats(v) => {
                stats.insert(name, v.clone());
            }
        }
    }
    Snapshot { tensors, stats }
}

impl Snapshot {
    fn t(&self, name: &str) -> &Tensor<f32> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
    }
    fn s(&self, name: &str) -> &[f32] {
        self.stats
            .get(name)
            .unwrap_or_else(|| panic!("missing stats {name}"))
    }

    /// conv -> eval batch norm -> relu, as one plain-UNet unit.
    fn conv_unit(&self, prefix: &str, x: &Tensor<f32>) -> Tensor<f32> {
        let w = self.t(&format!("{prefix}.hh.weight"));
        let b = self.t(&format!("{prefix}.hh.bias"));
        let y = ops::conv2d(x, w, Some(b), 1, 1).unwrap();
        let y = ops::batch_norm_eval(
            &y,
            self.t(&format!("{prefix}.bn_high.gamma")),
            self.t(&format!("{prefix}.bn_high.beta")),
            self.s(&format!("{prefix}.bn_high.running_mean")),
            self.s(&format!("{prefix}.bn_high.running_var")),
            1e-5,
        )
        .unwrap();
        ops::relu(&y)
    }

    fn tconv_unit(&self, prefix: &str, x: &Tensor<f32>) -> Tensor<f32> {
        let w = self.t(&format!("{prefix}.hh.weight"));
        let b = self.t(&format!("{prefix}.hh.bias"));
        let y = ops::transposed_conv2d(x, w, Some(b), 1, 1).unwrap();
        let y = ops::batch_norm_eval(
            &y,
            self.t(&format!("{prefix}.bn_high.gamma")),
            self.t(&format!("{prefix}.bn_high.beta")),
            self.s(&format!("{prefix}.bn_high.running_mean")),
            self.s(&format!("{prefix}.bn_high.running_var")),
            1e-5,
        )
        .unwrap();
        ops::relu(&y)
    }
}

fn concat_channels(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
    let (n, ca, h, w) = a.dims4().unwrap();
    let (_, cb, _, _) = b.dims4().unwrap();
    let mut out = Vec::with_capacity((ca + cb) * n * h * w);
    for ni in 0..n {
        out.extend_from_slice(&a.data()[ni * ca * h * w..][..ca * h * w]);
        out.extend_from_slice(&b.data()[ni * cb * h * w..][..cb * h * w]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], out).unwrap()
}

/// A plain UNet forward written directly against the value-level ops,
/// using the weights of an alpha = 0 octave model.
fn plain_unet_forward(snap: &Snapshot, cfg: &ModelConfig, x: &Tensor<f32>) -> Tensor<f32> {
    let mut cur = snap.conv_unit("initial", x);
    let mut skips = Vec::new();
    for level in 0..cfg.depth {
        if level > 0 {
            cur = ops::max_pool2(&cur).unwrap().0;
        }
        for u in 0..cfg.convs_per_block {
            cur = snap.conv_unit(&format!("encoder{level}.conv{u}"), &cur);
        }
        skips.push(cur.clone());
    }
    for level in (0..cfg.depth - 1).rev() {
        let up = ops::upsample_nearest2(&cur).unwrap();
        cur = concat_channels(&up, &skips[level]);
        cur = snap.tconv_unit(&format!("decoder{level}.tconv"), &cur);
        cur = snap.conv_unit(&format!("decoder{level}.conv"), &cur);
    }
    let w = snap.t("final.hh.weight");
    let b = snap.t("final.hh.bias");
    let logits = ops::transposed_conv2d(&cur, w, Some(b), 1, 1).unwrap();
    ops::sigmoid(&logits)
}

/// Octave conv at alpha = 0.5 against a composition of naive-convolution
/// oracles plus pooling/upsampling, per the four-path definition.
fn octave_conv_vs_oracle_max_abs() -> f64 {
    use octseg::autograd::Tape;
    use octseg::nn::Binder;
    use octseg::octave::{Activation, OctavePair};

    let mut rng = SeedRng::seed_from_u64(77);
    let alpha = AlphaRatio::new(0.5).unwrap();
    let conv = OctaveConv::<f64>::new_he(4, 4, alpha, alpha, 3, &mut rng).unwrap();
    let xh = rand_t(&[1, 2, 8, 8], &mut rng);
    let xl = rand_t(&[1, 2, 4, 4], &mut rng);

    // production path: record on a tape
    let mut tape = Tape::new();
    let (vh, vl) = {
        let mut b = Binder::new(&mut tape);
        let pair = OctavePair {
            high: Some(b.tape.constant(xh.clone())),
            low: Some(b.tape.constant(xl.clone())),
        };
        let y = conv
            .forward(&mut b, pair, Activation::Identity, ActivationPlacement::BlockLevel)
            .unwrap();
        (y.high.unwrap(), y.low.unwrap())
    };
    let got_h = tape.value(vh).clone();
    let got_l = tape.value(vl).clone();

    // oracle: naive convolutions assembled by hand
    let p = |l: &octseg::nn::Conv2d<f64>, x: &Tensor<f64>| {
        reference::conv2d_naive(x, &l.weight, Some(&l.bias), 1, 1).unwrap()
    };
    let hh = p(conv.hh.as_ref().unwrap(), &xh);
    let hl = p(conv.hl.as_ref().unwrap(), &ops::avg_pool2(&xh).unwrap());
    let lh = ops::upsample_nearest2(&p(conv.lh.as_ref().unwrap(), &xl)).unwrap();
    let ll = p(conv.ll.as_ref().unwrap(), &xl);

    let diff = |a: &Tensor<f64>, b: &Tensor<f64>, c: &Tensor<f64>| {
        a.data()
            .iter()
            .zip(b.data().iter().zip(c.data()))
            .map(|(&g, (&x, &y))| (g - (x + y)).abs())
            .fold(0.0f64, f64::max)
    };
    diff(&got_h, &hh, &lh).max(diff(&got_l, &ll, &hl))
}

#[test]
fn criterion_02_alpha_zero_reduction() {
    let cfg = ModelConfig {
        depth: 3,
        base_channels: 4,
        alpha: 0.0,
        ..ModelConfig::default()
    };
    let mut rng = SeedRng::seed_from_u64(9);
    let mut model = OctaveUNet::<f32>::build(&cfg, &mut rng).unwrap();
    let mut xr = SeedRng::seed_from_u64(10);
    let x = Tensor::from_vec(
        &[1, 3, 16, 16],
        (0..3 * 256).map(|_| xr.random_range(0.0..1.0f32)).collect::<Vec<_>>(),
    )
    .unwrap();

    let got = model.forward(&x, Mode::Eval).unwrap();
    let snap = snapshot(&mut model);
    let want = plain_unet_forward(&snap, &cfg, &x);
    let bitwise = got.shape() == want.shape()
        && got
            .data()
            .iter()
            .zip(want.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());

    let op_err = octave_conv_vs_oracle_max_abs();
    report(
        2,
        bitwise && op_err < 1e-6,
        &format!(
            "alpha=0 model output bitwise equal to plain-UNet composition: {bitwise}; \
             octave conv vs naive-oracle composition max abs diff {op_err:.2e}"
        ),
    );
}

// --------------------------------------------- criterion 3: compute accounting

#[test]
fn criterion_03_compute_accounting() {
    let alphas = [0.0, 0.25, 0.5, 0.75];
    // padded DRIVE extent for the default depth-4, base-64 configuration
    let (h, w) = (592, 576);
    let mut params = Vec::new();
    let mut flops = Vec::new();
    for &alpha in &alphas {
        let cfg = ModelConfig {
            alpha,
            ..ModelConfig::default()
        };
        let mut rng = SeedRng::seed_from_u64(0);
        let mut model = OctaveUNet::<f32>::build(&cfg, &mut rng).unwrap();
        params.push(model.count_params());
        flops.push(model.count_flops(h, w));
    }
    let p0 = params[0] as f64;
    let max_drift = params[1..]
        .iter()
        .map(|&p| ((p as f64) - p0).abs() / p0)
        .fold(0.0f64, f64::max);
    let ratio = flops[2] as f64 / flops[0] as f64;
    let decreasing = flops.windows(2).all(|p| p[1] < p[0]);
    report(
        3,
        max_drift <= 0.001 && (ratio - 0.4375).abs() <= 0.01 && decreasing,
        &format!(
            "params {params:?} (max drift {:.4}%), FLOPs {flops:?}, \
             ratio(0.5/0) = {ratio:.4}, strictly decreasing: {decreasing}",
            max_drift * 100.0
        ),
    );
}

// ------------------------------------------------ criterion 4: metric oracles

fn brute_force_auroc(scores: &[f64], truth: &[f64]) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0.0f64;
    for (i, &s) in scores.iter().enumerate() {
        if truth[i] != 1.0 {
            continue;
        }
        for (j, &t) in scores.iter().enumerate() {
            if truth[j] != 0.0 {
                continue;
            }
            pairs += 1.0;
            if s > t {
                wins += 1.0;
            } else if s == t {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn brute_force_ap(scores: &[f64], truth: &[f64]) -> f64 {
    let n_pos: f64 = truth.iter().sum();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut ap = 0.0;
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        // consume the whole tie group before measuring
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] == 1.0 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / n_pos;
        let precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

#[test]
fn criterion_04_metric_oracles() {
    let mut rng = SeedRng::seed_from_u64(2025);
    let mut max_auroc_err = 0.0f64;
    let mut max_ap_err = 0.0f64;
    for case in 0..200 {
        let n = rng.random_range(10..=1000);
        // quantized scores force ties
        let levels = rng.random_range(2..=20) as f64;
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0.0..1.0f64) * levels).round() / levels)
            .collect();
        let mut truth: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2))).collect();
        if truth.iter().all(|&t| t == 0.0) {
            truth[0] = 1.0;
        }
        if truth.iter().all(|&t| t == 1.0) {
            truth[0] = 0.0;
        }
        let st = Tensor::from_vec(&[n], scores.clone()).unwrap();
        let tt = Tensor::from_vec(&[n], truth.clone()).unwrap();
        let got = eval::auroc(&st, &tt, None).unwrap();
        max_auroc_err = max_auroc_err.max((got - brute_force_auroc(&scores, &truth)).abs());
        if case < 100 {
            let got_ap = eval::average_precision(&st, &tt, None).unwrap();
            max_ap_err = max_ap_err.max((got_ap - brute_force_ap(&scores, &truth)).abs());
        }
    }

    // scalar metrics against the defining formulas on enumerated counts,
    // zero denominators scoring 1.0
    let vals = [0u64, 1, 3, 10];
    let mut formulas_ok = true;
    for &tp in &vals {
        for &fp in &vals {
            for &tn in &vals {
                for &fn_ in &vals {
                    if tp + fp + tn + fn_ == 0 {
                        continue;
                    }
                    let c = ConfusionCounts { tp, fp, tn, fn_ };
                    let m = eval::scalar_metrics(&c);
                    let frac = |num: u64, den: u64| {
                        if den == 0 {
                            1.0
                        } else {
                            num as f64 / den as f64
                        }
                    };
                    let acc = frac(tp + tn, tp + fp + tn + fn_);
                    let se = frac(tp, tp + fn_);
                    let sp = frac(tn, tn + fp);
                    let precision = frac(tp, tp + fp);
                    let f1 = if precision + se == 0.0 {
                        0.0
                    } else {
                        2.0 * precision * se / (precision + se)
                    };
                    formulas_ok &= (m.acc - acc).abs() < 1e-12
                        && (m.se - se).abs() < 1e-12
                        && (m.sp - sp).abs() < 1e-12
                        && (m.f1 - f1).abs() < 1e-12;
                }
            }
        }
    }

    report(
        4,
        max_auroc_err <= 1e-12 && max_ap_err <= 1e-12 && formulas_ok,
        &format!(
            "AUROC max |err| {max_auroc_err:.1e} over 200 cases, \
             AP max |err| {max_ap_err:.1e} over 100 cases, \
             scalar formulas on {} confusion cases: {formulas_ok}",
            vals.len().pow(4) - 1
        ),
    );
}

// -------------------------------------------- criterion 5: learning sanity

#[test]
fn criterion_05_learning_sanity() {
    let fix = trained();
    let mut model = trained_model();
    let (_, test_set) = benchmark();
    let val = validate_model(&mut model, test_set, 0.5, false).unwrap();

    // single-image overfit
    let (train_set, _) = benchmark();
    let one = &train_set[..1];
    let mut rng = SeedRng::seed_from_u64(5);
    let mut over = OctaveUNet::<f32>::build(&small_config(0.5), &mut rng).unwrap();
    let mut over_cfg = bench_train_config(260, 5);
    over_cfg.augmentation = None; // memorize the image itself
    over_cfg.val_every = 260;
    train(&mut over, one, one, &over_cfg).unwrap();
    let over_val = validate_model(&mut over, one, 0.5, false).unwrap();

    report(
        5,
        fix.train_seconds < 900.0
            && val.auroc >= 0.95
            && val.scalar.f1 >= 0.70
            && over_val.scalar.f1 >= 0.95,
        &format!(
            "32/8-image benchmark: trained in {:.0} s, test AUROC {:.4}, F1 {:.4}; \
             single-image overfit F1 {:.4}",
            fix.train_seconds, val.auroc, val.scalar.f1, over_val.scalar.f1
        ),
    );
}

// ------------------------------------- criterion 6: octave-vs-baseline trend

#[test]
fn criterion_06_octave_vs_baseline_trend() {
    let (train_set, test_set) = benchmark();
    let mut mean = [0.0f64; 2]; // [baseline, octave]
    let seeds = [11u64, 12, 13, 14, 15];
    let mut details = String::new();
    // equal total training compute: the octave model's forward costs
    // 0.4375x the baseline's MACs, so it gets proportionally more epochs
    for (slot, alpha, epochs) in [(0usize, 0.0f64, 10usize), (1, 0.5, 24)] {
        for &seed in &seeds {
            let mut rng = SeedRng::seed_from_u64(seed);
            let mut model = OctaveUNet::<f32>::build(&small_config(alpha), &mut rng).unwrap();
            let mut tc = bench_train_config(epochs, seed);
            tc.val_every = epochs; // only the final validation matters here
            train(&mut model, train_set, test_set, &tc).unwrap();
            let val = validate_model(&mut model, test_set, 0.5, false).unwrap();
            mean[slot] += val.auroc / seeds.len() as f64;
        }
        details.push_str(&format!("alpha {alpha} ({epochs} epochs): mean AUROC {:.4}; ", mean[slot]));
    }

    let mut rng = SeedRng::seed_from_u64(0);
    let flops_base = OctaveUNet::<f32>::build(&small_config(0.0), &mut rng)
        .unwrap()
        .count_flops(64, 64);
    let flops_oct = OctaveUNet::<f32>::build(&small_config(0.5), &mut rng)
        .unwrap()
        .count_flops(64, 64);
    let mac_ratio = flops_oct as f64 / flops_base as f64;

    report(
        6,
        mean[1] >= mean[0] - 0.005 && mac_ratio <= 0.5,
        &format!("{details}MAC ratio {mac_ratio:.4} (<= 0.5) over 5 seeds x 10 epochs"),
    );
}

// ------------------------------------ criterion 7: threshold-sweep properties

#[test]
fn criterion_07_threshold_sweep() {
    let mut model = trained_model();
    let (probs, truth) = pooled_test_scores(&mut model);
    let grid = eval::default_tau_grid();
    let sweep = eval::threshold_sweep(&probs, &truth, None, &grid).unwrap();

    let se_mono = sweep.windows(2).all(|p| p[1].metrics.se <= p[0].metrics.se);
    let sp_mono = sweep.windows(2).all(|p| p[1].metrics.sp >= p[0].metrics.sp);

    let at = |tau: f64| {
        sweep
            .iter()
            .find(|p| (p.tau - tau).abs() < 1e-9)
            .unwrap()
            .metrics
    };
    let half = at(0.5);
    let direct =
        eval::scalar_metrics(&eval::confusion(&eval::binarize(&probs, 0.5).unwrap(), &truth, None).unwrap());
    let exact_at_half = half.acc == direct.acc
        && half.se == direct.se
        && half.sp == direct.sp
        && half.f1 == direct.f1;
    let se_gain = at(0.25).se > half.se;

    report(
        7,
        se_mono && sp_mono && exact_at_half && se_gain,
        &format!(
            "over {} thresholds: SE non-increasing {se_mono}, SP non-decreasing {sp_mono}, \
             tau=0.5 row equals scalar metrics exactly {exact_at_half}, \
             SE(0.25)={:.4} > SE(0.5)={:.4}: {se_gain}",
            sweep.len(),
            at(0.25).se,
            half.se
        ),
    );
}

// ----------------------------------------- criterion 8: spectral analysis

#[test]
fn criterion_08_spectral_analysis() {
    // DFT vs naive O(N^2) oracle on an asymmetric extent
    let mut rng = SeedRng::seed_from_u64(31);
    let (h, w) = (16usize, 12usize);
    let m = rand_t(&[h, w], &mut rng);
    let got = fft2_magnitude(&m, GroupTag::Baseline, false).unwrap();
    let naive = reference::dft2_magnitude_naive(m.data(), h, w);
    let mut dft_err = 0.0f64;
    for i in 0..h {
        for j in 0..w {
            let shifted = ((i + h / 2) % h) * w + (j + w / 2) % w;
            dft_err = dft_err.max((got.grid.data()[shifted] - naive[i * w + j]).abs());
        }
    }

    // Parseval: sum |F|^2 == H*W * sum |x|^2
    let freq_energy: f64 = got.grid.data().iter().map(|&v| v * v).sum();
    let signal_energy: f64 = m.data().iter().map(|&v| v * v).sum();
    let parseval_rel = (freq_energy - (h * w) as f64 * signal_energy).abs()
        / ((h * w) as f64 * signal_energy);

    // trained model: the low-frequency group concentrates more energy near
    // the zero frequency than the high-frequency group
    let mut model = trained_model();
    let (_, test_set) = benchmark();
    let tap = "encoder1".to_string();
    let mut high_maps = Vec::new();
    let mut low_maps = Vec::new();
    for s in test_set {
        let taps = model.extract_features(&s.image, &[tap.clone()]).unwrap();
        let (_, pair) = &taps[0];
        for (tensor, tag, sink) in [
            (pair.high.as_ref(), GroupTag::OctaveHigh, &mut high_maps),
            (pair.low.as_ref(), GroupTag::OctaveLow, &mut low_maps),
        ] {
            let t = tensor.unwrap();
            let (n, c, fh, fw) = t.dims4().unwrap();
            for nc in 0..n * c {
                let plane = Tensor::from_vec(
                    &[fh, fw],
                    t.data()[nc * fh * fw..][..fh * fw]
                        .iter()
                        .map(|&v| v as f64)
                        .collect::<Vec<_>>(),
                )
                .unwrap();
                sink.push(fft2_magnitude(&plane, tag, false).unwrap());
            }
        }
    }
    let high_avg = average_energy(&high_maps, GroupTag::OctaveHigh).unwrap();
    let low_avg = average_energy(&low_maps, GroupTag::OctaveLow).unwrap();
    let radius = 0.125;
    let high_frac = energy_fraction_within(&high_avg, radius).unwrap();
    let low_frac = energy_fraction_within(&low_avg, radius).unwrap();

    report(
        8,
        dft_err < 1e-6 && parseval_rel < 1e-6 && low_frac > high_frac,
        &format!(
            "DFT vs naive oracle max |err| {dft_err:.1e}, Parseval rel err {parseval_rel:.1e}, \
             energy within r<={radius} at '{tap}': low {low_frac:.4} > high {high_frac:.4}"
        ),
    );
}

// ------------------------------------------------ criterion 9: determinism

#[test]
fn criterion_09_determinism() {
    let mut rng = SeedRng::seed_from_u64(21);
    let samples = synth_vessels(6, 32, &mut rng).unwrap();
    let (train_set, test_set) = samples.split_at(4);
    let cfg = ModelConfig {
        depth: 2,
        base_channels: 2,
        alpha: 0.5,
        ..ModelConfig::default()
    };

    let run = || {
        let mut mr = SeedRng::seed_from_u64(3);
        let mut model = OctaveUNet::<f32>::build(&cfg, &mut mr).unwrap();
        let outcome = train(&mut model, train_set, test_set, &bench_train_config(3, 3)).unwrap();
        let log: Vec<String> = outcome.log.iter().map(|e| e.to_csv()).collect();
        let mut ckpt = Vec::new();
        save_model(&mut ckpt, &mut model).unwrap();
        (log, ckpt, outcome.best_checkpoint)
    };
    let (log_a, ckpt_a, best_a) = run();
    let (log_b, ckpt_b, best_b) = run();

    report(
        9,
        log_a == log_b && ckpt_a == ckpt_b && best_a == best_b,
        &format!(
            "two fixed-seed runs: {} log lines identical {}, checkpoints byte-identical {}",
            log_a.len(),
            log_a == log_b,
            ckpt_a == ckpt_b && best_a == best_b
        ),
    );
}

// --------------------------------------- criterion 10: checkpoint round trip

#[test]
fn criterion_10_checkpoint_round_trip() {
    let cfg = ModelConfig {
        depth: 2,
        base_channels: 4,
        alpha: 0.5,
        ..ModelConfig::default()
    };
    let mut rng = SeedRng::seed_from_u64(55);
    let mut model = OctaveUNet::<f32>::build(&cfg, &mut rng).unwrap();
    let mut xr = SeedRng::seed_from_u64(56);
    let x = Tensor::from_vec(
        &[1, 3, 16, 16],
        (0..3 * 256).map(|_| xr.random_range(0.0..1.0f32)).collect::<Vec<_>>(),
    )
    .unwrap();
    // a train-mode pass makes the running statistics non-trivial
    model.forward(&x, Mode::Train).unwrap();
    let before = model.forward(&x, Mode::Eval).unwrap();

    let mut bytes = Vec::new();
    save_model(&mut bytes, &mut model).unwrap();
    let mut restored = load_model(&mut bytes.as_slice()).unwrap();
    let after = restored.forward(&x, Mode::Eval).unwrap();
    let bitwise = before
        .data()
        .iter()
        .zip(after.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());

    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xFF;
    let magic_rejected = load_model(&mut bad_magic.as_slice()).is_err();
    let truncated_rejected = load_model(&mut bytes[..bytes.len() - 7].as_ref()).is_err();

    report(
        10,
        bitwise && magic_rejected && truncated_rejected,
        &format!(
            "save/load forward bitwise identical: {bitwise}, corrupted magic rejected: \
             {magic_rejected}, truncation rejected: {truncated_rejected}"
        ),
    );
}
