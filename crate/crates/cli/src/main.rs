//! Command line front end: training, evaluation, prediction, the alpha
//! sweep, frequency analysis, synthetic data generation, cost accounting
//! and gradient checking.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use octseg::checkpoint::{load_model_file, save_model_file};
use octseg::data::{
    load_dataset, make_splits, read_image, synth_vessels, write_dataset, write_image,
    write_rgb_png, AugmentationConfig, DatasetName, DatasetSpec, Sample, SplitPolicy,
};
use octseg::eval::{self, EvalReport};
use octseg::nn::{Mode, SeedRng};
use octseg::octave::ActivationPlacement;
use octseg::spectral::{compare_models, energy_fraction_within, to_grayscale, GroupSpectrum};
use octseg::train::{LossConfig, TrainConfig, TrainOutcome, WeightMode};
use octseg::unet::{crop_from_grid, pad_to_grid, ModelConfig, OctaveUNet};
use octseg::Tensor;
use rand::SeedableRng;

#[derive(Parser)]
#[command(
    name = "octseg",
    version,
    about = "Octave UNet vessel segmentation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write logs plus checkpoints
    Train(CommonArgs),
    /// Evaluate a checkpoint: metrics, analytical maps, threshold sweeps
    Eval(EvalArgs),
    /// Run one image through a checkpoint; write probability and mask PNGs
    Predict(PredictArgs),
    /// Train and evaluate alpha in {0, 0.25, 0.5, 0.75}; emit a comparison table
    SweepAlpha(CommonArgs),
    /// Compare frequency content of baseline vs octave feature maps
    AnalyzeFrequency(FreqArgs),
    /// Generate a synthetic vessel dataset tree
    SynthData(SynthArgs),
    /// Print parameter count and FLOPs for a config without training
    Cost(CostArgs),
    /// Run the finite-difference gradient validation suite
    CheckGrad(CheckGradArgs),
}

/// Flags shared by data-touching subcommands. Every flag is optional;
/// values fall back to --config file entries, then to built-in defaults.
#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// JSON run-config file; explicit flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// dataset name: drive | stare | chase_db1 | hrf | synthetic | custom
    #[arg(long)]
    dataset: Option<String>,
    /// dataset root directory (images/, targets/, optional masks/)
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// fraction of channels assigned to the low-frequency group
    #[arg(long)]
    alpha: Option<f64>,
    /// number of resolution levels
    #[arg(long)]
    depth: Option<usize>,
    /// channels of the first level
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// initial learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// paper-ratio | inverse-ratio | a positive number
    #[arg(long)]
    loss_weight_mode: Option<String>,
    /// binarization threshold tau
    #[arg(long)]
    threshold: Option<f64>,
    /// restrict evaluation to the field-of-view mask when present
    #[arg(long)]
    fov: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads; 1 guarantees determinism
    #[arg(long)]
    threads: Option<usize>,
    /// output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// activate each octave path before summation instead of after
    #[arg(long)]
    strict_equation_activation: bool,
    /// train/test split point (default: half the dataset)
    #[arg(long)]
    n_train: Option<usize>,
    /// use leave-one-out folds instead of a fixed split
    #[arg(long)]
    leave_one_out: bool,
    /// disable training-time augmentation
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// model checkpoint to evaluate
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// input image (PNG/PPM/PGM)
    #[arg(long)]
    image: PathBuf,
}

#[derive(Args)]
struct FreqArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// checkpoint of an alpha = 0 model
    #[arg(long)]
    baseline_checkpoint: PathBuf,
    /// checkpoint of an alpha > 0 model
    #[arg(long)]
    octave_checkpoint: PathBuf,
    /// feature tap, e.g. initial, encoder1, decoder0
    #[arg(long, default_value = "initial")]
    tap: String,
    /// use |.|^2 power spectra instead of magnitudes
    #[arg(long)]
    power: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// number of images to generate
    #[arg(long, default_value_t = 40)]
    count: usize,
    /// square image size in pixels (>= 32)
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct CostArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// input height used for the FLOPs estimate
    #[arg(long, default_value_t = 584)]
    height: usize,
    /// input width used for the FLOPs estimate
    #[arg(long, default_value_t = 565)]
    width: usize,
}

#[derive(Args)]
struct CheckGradArgs {
    #[arg(long)]
    seed: Option<u64>,
}

/// Fully resolved run configuration; serialized beside every artifact.
#[derive(Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    dataset: String,
    data_root: Option<PathBuf>,
    alpha: f64,
    depth: usize,
    base_channels: usize,
    strict_equation_activation: bool,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    loss_weight_mode: String,
    threshold: f64,
    fov: bool,
    seed: u64,
    threads: usize,
    out: PathBuf,
    n_train: Option<usize>,
    leave_one_out: bool,
    augment: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            data_root: None,
            alpha: 0.5,
            depth: 4,
            base_channels: 64,
            strict_equation_activation: false,
            epochs: 1000,
            batch_size: 1,
            lr: 0.001,
            loss_weight_mode: "paper-ratio".into(),
            threshold: 0.5,
            fov: false,
            seed: 0,
            threads: 1,
            out: PathBuf::from("out"),
            n_train: None,
            leave_one_out: false,
            augment: true,
        }
    }
}

impl RunConfig {
    fn resolve(args: &CommonArgs) -> anyhow::Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = &args.dataset {
            cfg.dataset = v.clone();
        }
        if let Some(v) = &args.data_root {
            cfg.data_root = Some(v.clone());
        }
        if let Some(v) = args.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = args.depth {
            cfg.depth = v;
        }
        if let Some(v) = args.base_channels {
            cfg.base_channels = v;
        }
        if let Some(v) = args.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = args.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = args.lr {
            cfg.lr = v;
        }
        if let Some(v) = &args.loss_weight_mode {
            cfg.loss_weight_mode = v.clone();
        }
        if let Some(v) = args.threshold {
            cfg.threshold = v;
        }
        if args.fov {
            cfg.fov = true;
        }
        if let Some(v) = args.seed {
            cfg.seed = v;
        }
        if let Some(v) = args.threads {
            cfg.threads = v;
        }
        if let Some(v) = &args.out {
            cfg.out = v.clone();
        }
        if args.strict_equation_activation {
            cfg.strict_equation_activation = true;
        }
        if let Some(v) = args.n_train {
            cfg.n_train = Some(v);
        }
        if args.leave_one_out {
            cfg.leave_one_out = true;
        }
        if args.no_augment {
            cfg.augment = false;
        }
        Ok(cfg)
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            alpha: self.alpha,
            activation_placement: if self.strict_equation_activation {
                ActivationPlacement::PerPath
            } else {
                ActivationPlacement::BlockLevel
            },
            ..ModelConfig::default()
        }
    }

    fn train_config(&self) -> anyhow::Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr,
            loss: LossConfig {
                mode: WeightMode::parse(&self.loss_weight_mode)?,
                ..LossConfig::default()
            },
            augmentation: self.augment.then(AugmentationConfig::default),
            seed: self.seed,
            tau: self.threshold,
            val_every: 1,
        })
    }

    fn dataset_spec(&self) -> anyhow::Result<DatasetSpec> {
        let name = DatasetName::parse(&self.dataset)?;
        let root = self
            .data_root
            .clone()
            .ok_or_else(|| anyhow::anyhow!("--data-root (or a config entry) is required"))?;
        Ok(DatasetSpec {
            name,
            root,
            split: SplitPolicy::FixedTrainTest { n_train: 1 }, // replaced by split_policy
        })
    }

    fn split_policy(&self, n_samples: usize) -> anyhow::Result<SplitPolicy> {
        if self.leave_one_out {
            return Ok(SplitPolicy::LeaveOneOut);
        }
        let n_train = self.n_train.unwrap_or(n_samples / 2);
        if n_train == 0 || n_train >= n_samples {
            bail!("split needs 0 < n_train < {n_samples}, got {n_train}");
        }
        Ok(SplitPolicy::FixedTrainTest { n_train })
    }

    fn init_threads(&self) -> anyhow::Result<()> {
        if self.threads == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build_global()
            .context("initializing thread pool")?;
        Ok(())
    }

    fn write_resolved(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("resolved-config.json"), text + "\n")?;
        Ok(())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}

/// Exit 1 for validation/config problems, 2 for runtime failures
/// (I/O, non-finite numerics).
fn exit_code(e: &anyhow::Error) -> i32 {
    if let Some(err) = e.downcast_ref::<octseg::Error>() {
        return match err {
            octseg::Error::Io(_) | octseg::Error::NonFinite(_) => 2,
            _ => 1,
        };
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return 2;
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Train(args) => cmd_train(&RunConfig::resolve(&args)?),
        Cmd::Eval(args) => cmd_eval(&RunConfig::resolve(&args.common)?, &args.checkpoint),
        Cmd::Predict(args) => {
            cmd_predict(&RunConfig::resolve(&args.common)?, &args.checkpoint, &args.image)
        }
        Cmd::SweepAlpha(args) => cmd_sweep_alpha(&RunConfig::resolve(&args)?),
        Cmd::AnalyzeFrequency(args) => cmd_analyze_frequency(
            &RunConfig::resolve(&args.common)?,
            &args.baseline_checkpoint,
            &args.octave_checkpoint,
            &args.tap,
            args.power,
        ),
        Cmd::SynthData(args) => {
            cmd_synth_data(&RunConfig::resolve(&args.common)?, args.count, args.size)
        }
        Cmd::Cost(args) => cmd_cost(&RunConfig::resolve(&args.common)?, args.height, args.width),
        Cmd::CheckGrad(args) => cmd_check_grad(args.seed.unwrap_or(0)),
    }
}

/// Reflect-pad every field of a sample to the model grid (multiple of
/// 2^depth). Reflection keeps binary targets and masks binary.
fn pad_sample(s: &Sample, depth: usize) -> anyhow::Result<Sample> {
    let (image, _) = pad_to_grid(&s.image, depth)?;
    let (truth, _) = pad_to_grid(&s.truth, depth)?;
    let fov = match &s.fov {
        Some(f) => Some(pad_to_grid(f, depth)?.0),
        None => None,
    };
    Ok(Sample {
        id: s.id.clone(),
        image,
        truth,
        fov,
    })
}

fn load_and_split(cfg: &RunConfig) -> anyhow::Result<(Vec<Sample>, Vec<(Vec<String>, Vec<String>)>)> {
    let mut spec = cfg.dataset_spec()?;
    let samples = load_dataset(&spec)?;
    spec.split = cfg.split_policy(samples.len())?;
    let folds = make_splits(&samples, spec.split)?;
    Ok((samples, folds))
}

fn pick<'a>(samples: &'a [Sample], ids: &[String]) -> Vec<&'a Sample> {
    samples
        .iter()
        .filter(|s| ids.iter().any(|id| id == &s.id))
        .collect()
}

fn train_one_fold(
    cfg: &RunConfig,
    train_samples: &[&Sample],
    val_samples: &[&Sample],
    out_dir: &Path,
) -> anyhow::Result<(OctaveUNet<f32>, TrainOutcome)> {
    let padded_train: Vec<Sample> = train_samples
        .iter()
        .map(|s| pad_sample(s, cfg.depth))
        .collect::<anyhow::Result<_>>()?;
    let padded_val: Vec<Sample> = val_samples
        .iter()
        .map(|s| pad_sample(s, cfg.depth))
        .collect::<anyhow::Result<_>>()?;

    let mut rng = SeedRng::seed_from_u64(cfg.seed);
    let mut model = OctaveUNet::<f32>::build(&cfg.model_config(), &mut rng)?;
    let outcome = octseg::train::train(&mut model, &padded_train, &padded_val, &cfg.train_config()?)?;

    fs::create_dir_all(out_dir)?;
    let mut log = String::from("epoch,loss,lr,acc,se,sp,f1,auroc,ap\n");
    for entry in &outcome.log {
        log.push_str(&entry.to_csv());
        log.push('\n');
    }
    fs::write(out_dir.join("log.csv"), log)?;
    save_model_file(out_dir.join("model.ckpt"), &mut model)?;
    if let Some(bytes) = &outcome.best_checkpoint {
        fs::write(out_dir.join("best.ckpt"), bytes)?;
    }
    Ok((model, outcome))
}

fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.init_threads()?;
    cfg.write_resolved(&cfg.out)?;
    let (samples, folds) = load_and_split(cfg)?;
    let many = folds.len() > 1;
    for (i, (train_ids, val_ids)) in folds.iter().enumerate() {
        let dir = if many {
            cfg.out.join(format!("fold{i}"))
        } else {
            cfg.out.clone()
        };
        let (_, outcome) = train_one_fold(
            cfg,
            &pick(&samples, train_ids),
            &pick(&samples, val_ids),
            &dir,
        )?;
        let last = outcome.log.last().expect("at least one epoch");
        println!(
            "fold {i}: {} epochs, final loss {:.6e}, best val AUROC {:.4} (epoch {}), artifacts in {}",
            outcome.log.len(),
            last.loss,
            outcome.best_auroc,
            outcome.best_epoch.map_or_else(|| "-".into(), |e| e.to_string()),
            dir.display()
        );
    }
    Ok(())
}

/// Forward one (unpadded) sample: pad to the model grid, run in eval mode,
/// crop back to the original extent.
fn predict_sample(
    model: &mut OctaveUNet<f32>,
    image: &Tensor<f32>,
) -> anyhow::Result<Tensor<f32>> {
    let (padded, rec) = pad_to_grid(image, model.config.depth)?;
    let probs = model.forward(&padded, Mode::Eval)?;
    Ok(crop_from_grid(&probs, rec)?)
}

fn report_csv_row(id: &str, r: &EvalReport) -> String {
    format!(
        "{id},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        r.counts.tp,
        r.counts.fp,
        r.counts.tn,
        r.counts.fn_,
        r.metrics.acc,
        r.metrics.se,
        r.metrics.sp,
        r.metrics.f1,
        r.auroc,
        r.average_precision
    )
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> anyhow::Result<()> {
    cfg.init_threads()?;
    cfg.write_resolved(&cfg.out)?;
    let mut model = load_model_file(checkpoint)?;
    let (samples, folds) = load_and_split(cfg)?;
    let test_ids: Vec<String> = folds.iter().flat_map(|(_, t)| t.iter().cloned()).collect();
    let test = pick(&samples, &test_ids);
    if test.is_empty() {
        bail!("no test samples selected");
    }

    let mut csv = String::from("id,tp,fp,tn,fn,acc,se,sp,f1,auroc,ap\n");
    let mut pooled_probs = Vec::new();
    let mut pooled_truth = Vec::new();
    for s in &test {
        let probs = predict_sample(&mut model, &s.image)?;
        let fov = if cfg.fov { s.fov.as_ref() } else { None };
        let report = eval::evaluate(&probs, &s.truth, fov, cfg.threshold)?;
        csv.push_str(&report_csv_row(&s.id, &report));
        // the choice of evaluation region is a convention, so report the
        // FOV-restricted numbers alongside the all-pixel default
        if fov.is_none() {
            if let Some(mask) = &s.fov {
                let restricted = eval::evaluate(&probs, &s.truth, Some(mask), cfg.threshold)?;
                csv.push_str(&report_csv_row(&format!("{}/fov", s.id), &restricted));
            }
        }

        let pred = eval::binarize(&probs, cfg.threshold)?;
        let (rgb, h, w) = eval::analytical_map(&pred, &s.truth)?;
        write_rgb_png(cfg.out.join(format!("map_{}.png", s.id)), &rgb, h, w)?;

        let mut sweep = String::from("tau,acc,se,sp,f1\n");
        for p in &report.sweep {
            sweep.push_str(&format!(
                "{:.2},{:.6},{:.6},{:.6},{:.6}\n",
                p.tau, p.metrics.acc, p.metrics.se, p.metrics.sp, p.metrics.f1
            ));
        }
        fs::write(cfg.out.join(format!("sweep_{}.csv", s.id)), sweep)?;

        for (i, (&p, &t)) in probs.data().iter().zip(s.truth.data()).enumerate() {
            if let Some(f) = fov {
                if f.data()[i] == 0.0 {
                    continue;
                }
            }
            pooled_probs.push(p);
            pooled_truth.push(t);
        }
    }

    let p = Tensor::from_vec(&[pooled_probs.len()], pooled_probs)?;
    let t = Tensor::from_vec(&[pooled_truth.len()], pooled_truth)?;
    let pooled = eval::evaluate(&p, &t, None, cfg.threshold)?;
    csv.push_str(&report_csv_row("pooled", &pooled));
    fs::write(cfg.out.join("eval.csv"), &csv)?;

    println!(
        "evaluated {} image(s): pooled ACC {:.4} SE {:.4} SP {:.4} F1 {:.4} AUROC {:.4} AP {:.4}",
        test.len(),
        pooled.metrics.acc,
        pooled.metrics.se,
        pooled.metrics.sp,
        pooled.metrics.f1,
        pooled.auroc,
        pooled.average_precision
    );
    println!("reports written to {}", cfg.out.display());
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, image_path: &Path) -> anyhow::Result<()> {
    cfg.init_threads()?;
    let mut model = load_model_file(checkpoint)?;
    let raw = read_image(image_path)?;
    let [c, h, w] = raw.shape()[..] else {
        bail!("expected a [C,H,W] image, got {:?}", raw.shape());
    };
    let want = model.config.input_channels;
    let image = if c == want {
        raw.reshape(&[1, c, h, w])?
    } else if c == 1 && want == 3 {
        // replicate grayscale across the three expected channels
        let plane = raw.data().to_vec();
        let mut data = Vec::with_capacity(3 * h * w);
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Tensor::from_vec(&[1, 3, h, w], data)?
    } else {
        bail!("image has {c} channels but the model expects {want}");
    };

    let probs = predict_sample(&mut model, &image)?;
    let mask = eval::binarize(&probs, cfg.threshold)?;

    fs::create_dir_all(&cfg.out)?;
    cfg.write_resolved(&cfg.out)?;
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let prob_path = cfg.out.join(format!("{stem}_prob.png"));
    let mask_path = cfg.out.join(format!("{stem}_mask.png"));
    write_image(&prob_path, &probs)?;
    write_image(&mask_path, &mask)?;
    println!("wrote {} and {}", prob_path.display(), mask_path.display());
    Ok(())
}

fn cmd_sweep_alpha(cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.init_threads()?;
    cfg.write_resolved(&cfg.out)?;
    let (samples, folds) = load_and_split(cfg)?;
    let (train_ids, test_ids) = folds
        .first()
        .ok_or_else(|| anyhow::anyhow!("no folds produced"))?;
    let train = pick(&samples, train_ids);
    let test = pick(&samples, test_ids);
    let (padded_h, padded_w) = {
        let (p, _) = pad_to_grid(&samples[0].image, cfg.depth)?;
        (p.shape()[2], p.shape()[3])
    };

    let mut table = String::from("alpha,params,flops,acc,se,sp,f1,auroc,ap\n");
    println!("alpha   params      flops         ACC     SE      SP      F1      AUROC   AP");
    for &alpha in &[0.0, 0.25, 0.5, 0.75] {
        let mut sub = cfg.clone();
        sub.alpha = alpha;
        let dir = cfg.out.join(format!("alpha-{alpha}"));
        let (mut model, _) = train_one_fold(&sub, &train, &test, &dir)?;
        let params = model.count_params();
        let flops = model.count_flops(padded_h, padded_w);
        let padded_test: Vec<Sample> = test
            .iter()
            .map(|s| pad_sample(s, cfg.depth))
            .collect::<anyhow::Result<_>>()?;
        let val = octseg::train::validate_model(&mut model, &padded_test, cfg.threshold, cfg.fov)?;
        table.push_str(&format!(
            "{alpha},{params},{flops},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            val.scalar.acc, val.scalar.se, val.scalar.sp, val.scalar.f1, val.auroc, val.ap
        ));
        println!(
            "{alpha:<7} {params:<11} {flops:<13} {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}",
            val.scalar.acc, val.scalar.se, val.scalar.sp, val.scalar.f1, val.auroc, val.ap
        );
    }
    fs::write(cfg.out.join("alpha-sweep.csv"), table)?;
    println!("table written to {}", cfg.out.join("alpha-sweep.csv").display());
    Ok(())
}

fn write_group(dir: &Path, g: &GroupSpectrum) -> anyhow::Result<()> {
    let label = g.map.tag.label();
    write_image(dir.join(format!("energy-{label}.png")), &to_grayscale(&g.map, true)?)?;
    let mut csv = String::from("radius,radius_normalized,magnitude\n");
    for p in &g.curve {
        csv.push_str(&format!(
            "{},{:.6},{:.6e}\n",
            p.radius, p.radius_normalized, p.magnitude
        ));
    }
    fs::write(dir.join(format!("radial-{label}.csv")), csv)?;
    Ok(())
}

fn cmd_analyze_frequency(
    cfg: &RunConfig,
    baseline_ckpt: &Path,
    octave_ckpt: &Path,
    tap: &str,
    power: bool,
) -> anyhow::Result<()> {
    cfg.init_threads()?;
    cfg.write_resolved(&cfg.out)?;
    let mut baseline = load_model_file(baseline_ckpt)?;
    let mut octave = load_model_file(octave_ckpt)?;
    let spec = cfg.dataset_spec()?;
    let samples = load_dataset(&spec)?;
    let depth = baseline.config.depth.max(octave.config.depth);
    let images: Vec<Tensor<f32>> = samples
        .iter()
        .map(|s| Ok(pad_to_grid(&s.image, depth)?.0))
        .collect::<anyhow::Result<_>>()?;

    let cmp = compare_models(&mut baseline, &mut octave, &images, tap, power)?;
    write_group(&cfg.out, &cmp.baseline)?;
    write_group(&cfg.out, &cmp.octave_high)?;
    write_group(&cfg.out, &cmp.octave_low)?;

    let radius = 0.125;
    println!(
        "energy fraction within normalized radius {radius} at tap '{tap}' \
         ({} image(s)):",
        images.len()
    );
    for g in [&cmp.baseline, &cmp.octave_high, &cmp.octave_low] {
        println!(
            "  {:<12} {:.4}",
            g.map.tag.label(),
            energy_fraction_within(&g.map, radius)?
        );
    }
    println!("spectra written to {}", cfg.out.display());
    Ok(())
}

fn cmd_synth_data(cfg: &RunConfig, count: usize, size: usize) -> anyhow::Result<()> {
    let mut rng = SeedRng::seed_from_u64(cfg.seed);
    let samples = synth_vessels(count, size, &mut rng)?;
    write_dataset(&cfg.out, &samples)?;
    cfg.write_resolved(&cfg.out)?;
    let mean_fraction: f64 = samples
        .iter()
        .map(|s| {
            let d = s.truth.data();
            d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64
        })
        .sum::<f64>()
        / samples.len() as f64;
    println!(
        "wrote {count} {size}x{size} image(s) to {} (mean vessel fraction {:.3})",
        cfg.out.display(),
        mean_fraction
    );
    Ok(())
}

fn cmd_cost(cfg: &RunConfig, height: usize, width: usize) -> anyhow::Result<()> {
    let grid = 1usize << cfg.depth;
    let pad_up = |v: usize| v.div_ceil(grid) * grid;
    let (h, w) = (pad_up(height), pad_up(width));

    let build = |alpha: f64| -> anyhow::Result<OctaveUNet<f32>> {
        let mc = ModelConfig {
            alpha,
            ..cfg.model_config()
        };
        let mut rng = SeedRng::seed_from_u64(cfg.seed);
        Ok(OctaveUNet::build(&mc, &mut rng)?)
    };
    let mut model = build(cfg.alpha)?;
    let params = model.count_params();
    let flops = model.count_flops(h, w);
    println!(
        "alpha {}: {params} parameters, {flops} FLOPs at {h}x{w} (input {height}x{width} padded to the model grid)",
        cfg.alpha
    );
    if cfg.alpha > 0.0 {
        let base_flops = build(0.0)?.count_flops(h, w);
        println!(
            "baseline alpha 0: {base_flops} FLOPs; ratio {:.4}",
            flops as f64 / base_flops as f64
        );
    }
    for info in model.inventory() {
        println!("  {:<12} {:>10} params", info.name, info.param_count);
    }
    Ok(())
}

fn cmd_check_grad(seed: u64) -> anyhow::Result<()> {
    let results = octseg::gradcheck::gradient_check_suite(seed)?;
    let mut failures = 0usize;
    for r in &results {
        println!(
            "{} {:<24} max rel err {:.3e} (tolerance {:.0e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.tolerance
        );
        if !r.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        bail!("{failures} gradient check(s) failed");
    }
    println!("all {} gradient checks passed", results.len());
    Ok(())
}
