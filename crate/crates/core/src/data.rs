//! Dataset ingestion, train/test splits, augmentation and a synthetic
//! vessel generator for desk-scale experiments, plus PNG/PPM/PGM image I/O.

use crate::error::{Error, Result};
use crate::nn::SeedRng;
use crate::tensor::Tensor;
use rand::Rng;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// One fundus image with annotation. Tensors are batched rank-4 so they can
/// feed the network directly: image [1,3,H,W] in [0,1], truth [1,1,H,W]
/// binary, optional fov mask [1,1,H,W] binary.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub truth: Tensor<f32>,
    pub fov: Option<Tensor<f32>>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let (_, c, h, w) = self.image.dims4()?;
        if c != 3 {
            return Err(Error::Data(format!(
                "sample {}: image must have 3 channels, got {c}",
                self.id
            )));
        }
        let (_, tc, th, tw) = self.truth.dims4()?;
        if tc != 1 || (th, tw) != (h, w) {
            return Err(Error::Data(format!(
                "sample {}: truth {}x{}x{} does not match image {}x{}",
                self.id, tc, th, tw, h, w
            )));
        }
        if let Some(f) = &self.fov {
            let (_, fc, fh, fw) = f.dims4()?;
            if fc != 1 || (fh, fw) != (h, w) {
                return Err(Error::Data(format!(
                    "sample {}: fov mask dims mismatch",
                    self.id
                )));
            }
        }
        for &v in self.truth.data() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Data(format!(
                    "sample {}: truth is not binary",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn hw(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s[2], s[3])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetName {
    Drive,
    Stare,
    ChaseDb1,
    Hrf,
    Synthetic,
    Custom,
}

impl DatasetName {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "drive" => Ok(Self::Drive),
            "stare" => Ok(Self::Stare),
            "chase_db1" | "chasedb1" | "chase" => Ok(Self::ChaseDb1),
            "hrf" => Ok(Self::Hrf),
            "synthetic" => Ok(Self::Synthetic),
            "custom" => Ok(Self::Custom),
            other => Err(Error::Config(format!(
                "unknown dataset '{other}' (expected drive|stare|chase_db1|hrf|synthetic|custom)"
            ))),
        }
    }

    /// Declared (width, height) for the published datasets.
    pub fn expected_resolution(&self) -> Option<(usize, usize)> {
        match self {
            Self::Drive => Some((565, 584)),
            Self::Stare => Some((700, 605)),
            Self::ChaseDb1 => Some((999, 960)),
            Self::Hrf => Some((3504, 2336)),
            Self::Synthetic | Self::Custom => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitPolicy {
    /// First `n_train` ids (sorted order) train, the rest test.
    FixedTrainTest { n_train: usize },
    LeaveOneOut,
}

#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub root: PathBuf,
    pub split: SplitPolicy,
}

/// Load `<root>/images/*`, `<root>/targets/*` and optional `<root>/masks/*`
/// with matching file stems. Ids are the stems, sorted.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    let scan = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        let mut out = BTreeMap::new();
        if !dir.is_dir() {
            return Ok(out);
        }
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_file() {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.insert(stem.to_string(), path);
                }
            }
        }
        Ok(out)
    };

    let images = scan(&spec.root.join("images"))?;
    let targets = scan(&spec.root.join("targets"))?;
    let masks = scan(&spec.root.join("masks"))?;
    if images.is_empty() {
        return Err(Error::Data(format!(
            "no images found under {}/images",
            spec.root.display()
        )));
    }

    let mut missing = Vec::new();
    for stem in images.keys() {
        if !targets.contains_key(stem) {
            missing.push(format!("targets/{stem}"));
        }
    }
    for stem in targets.keys() {
        if !images.contains_key(stem) {
            missing.push(format!("images/{stem}"));
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::Data(format!(
            "unpaired dataset files, missing: {}",
            missing.join(", ")
        )));
    }

    let mut samples = Vec::with_capacity(images.len());
    for (stem, img_path) in &images {
        let image = read_image(img_path)?;
        let (c, h, w) = dims3(&image)?;
        if c != 3 {
            return Err(Error::Data(format!(
                "{}: expected a 3-channel image, got {c} channels",
                img_path.display()
            )));
        }
        if let Some((ew, eh)) = spec.name.expected_resolution() {
            if (w, h) != (ew, eh) {
                return Err(Error::Data(format!(
                    "{}: resolution {w}x{h} does not match the declared {ew}x{eh}",
                    img_path.display()
                )));
            }
        }
        let truth = read_mask(&targets[stem])?;
        let fov = masks.get(stem).map(|p| read_mask(p)).transpose()?;
        let sample = Sample {
            id: stem.clone(),
            image: to_batched(&image)?,
            truth: to_batched(&truth)?,
            fov: fov.map(|f| to_batched(&f)).transpose()?,
        };
        sample.validate()?;
        samples.push(sample);
    }
    Ok(samples)
}

fn dims3(t: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::InvalidShape(format!("expected [C,H,W], got {s:?}"))),
    }
}

fn to_batched(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(t)?;
    t.clone().reshape(&[1, c, h, w])
}

/// Train/test folds per policy. Each fold is (train ids, test ids).
pub fn make_splits(
    samples: &[Sample],
    policy: SplitPolicy,
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    match policy {
        SplitPolicy::FixedTrainTest { n_train } => {
            if n_train == 0 || n_train >= ids.len() {
                return Err(Error::Config(format!(
                    "fixed split needs 0 < n_train < {} samples, got {n_train}",
                    ids.len()
                )));
            }
            Ok(vec![(
                ids[..n_train].to_vec(),
                ids[n_train..].to_vec(),
            )])
        }
        SplitPolicy::LeaveOneOut => {
            if ids.len() < 2 {
                return Err(Error::Config(
                    "leave-one-out needs at least 2 samples".into(),
                ));
            }
            Ok((0..ids.len())
                .map(|i| {
                    let test = vec![ids[i].clone()];
                    let train = ids
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, id)| id.clone())
                        .collect();
                    (train, test)
                })
                .collect())
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AugmentationConfig {
    /// independent probability that each step fires
    pub trigger_prob: f64,
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            trigger_prob: 0.5,
            brightness: (0.8, 1.25),
            contrast: (0.8, 1.25),
            saturation: (0.8, 1.25),
            gamma: (0.7, 1.5),
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.trigger_prob) {
            return Err(Error::Config("trigger probability outside [0,1]".into()));
        }
        for (name, (lo, hi)) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("gamma", self.gamma),
        ] {
            if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && lo <= hi) {
                return Err(Error::Config(format!(
                    "{name} range ({lo}, {hi}) must be positive and contain 1.0"
                )));
            }
        }
        Ok(())
    }
}

fn flip<F: crate::tensor::Elem>(t: &Tensor<F>, horizontal: bool) -> Tensor<F> {
    let (n, c, h, w) = t.dims4().expect("rank-4 sample field");
    let src = t.data();
    let mut out = vec![F::zero(); src.len()];
    for nc in 0..n * c {
        let base = nc * h * w;
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = if horizontal { (i, w - 1 - j) } else { (h - 1 - i, j) };
                out[base + i * w + j] = src[base + si * w + sj];
            }
        }
    }
    Tensor::from_vec(t.shape(), out).expect("same shape")
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Stochastic augmentation: flips apply to all fields, photometric steps to
/// the image only; image is re-clamped to [0,1].
pub fn augment(sample: &Sample, cfg: &AugmentationConfig, rng: &mut SeedRng) -> Result<Sample> {
    cfg.validate()?;
    let mut out = sample.clone();
    let fire = |rng: &mut SeedRng| rng.random_bool(cfg.trigger_prob);

    if fire(rng) {
        out.image = flip(&out.image, true);
        out.truth = flip(&out.truth, true);
        out.fov = out.fov.map(|f| flip(&f, true));
    }
    if fire(rng) {
        out.image = flip(&out.image, false);
        out.truth = flip(&out.truth, false);
        out.fov = out.fov.map(|f| flip(&f, false));
    }
    if fire(rng) {
        let f = rng.random_range(cfg.brightness.0..=cfg.brightness.1) as f32;
        out.image = out.image.map(|v| v * f);
    }
    if fire(rng) {
        // contrast about the image's luma mean
        let f = rng.random_range(cfg.contrast.0..=cfg.contrast.1) as f32;
        let mean = out.image.sum() / out.image.numel() as f32;
        out.image = out.image.map(|v| (v - mean) * f + mean);
    }
    if fire(rng) {
        // saturation: blend between the grayscale (luma) image and the
        // original; factor > 1 oversaturates
        let f = rng.random_range(cfg.saturation.0..=cfg.saturation.1) as f32;
        let (_, _, h, w) = out.image.dims4()?;
        let mut data = out.image.clone().into_data();
        let plane = h * w;
        for p in 0..plane {
            let (r, g, b) = (data[p], data[plane + p], data[2 * plane + p]);
            let y = luma(r, g, b);
            data[p] = y + (r - y) * f;
            data[plane + p] = y + (g - y) * f;
            data[2 * plane + p] = y + (b - y) * f;
        }
        out.image = Tensor::from_vec(out.image.shape(), data)?;
    }
    if fire(rng) {
        let g = rng.random_range(cfg.gamma.0..=cfg.gamma.1) as f32;
        out.image = out.image.map(|v| v.max(0.0).powf(g));
    }
    out.image = out.image.map(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

// ---------------------------------------------------------------------------
// synthetic vessel generator

struct VesselCanvas {
    size: usize,
    mask: Vec<bool>,
    fov_radius: f64,
}

impl VesselCanvas {
    fn inside_fov(&self, x: f64, y: f64) -> bool {
        let c = self.size as f64 / 2.0;
        let (dx, dy) = (x - c, y - c);
        (dx * dx + dy * dy).sqrt() < self.fov_radius
    }

    fn stamp(&mut self, x: f64, y: f64, radius: f64) {
        let r = radius.max(0.5);
        let (xi0, xi1) = ((x - r).floor() as i64, (x + r).ceil() as i64);
        let (yi0, yi1) = ((y - r).floor() as i64, (y + r).ceil() as i64);
        for yi in yi0..=yi1 {
            for xi in xi0..=xi1 {
                if xi < 0 || yi < 0 || xi >= self.size as i64 || yi >= self.size as i64 {
                    continue;
                }
                let (fx, fy) = (xi as f64 + 0.5, yi as f64 + 0.5);
                let d = ((fx - x).powi(2) + (fy - y).powi(2)).sqrt();
                if d <= r && self.inside_fov(fx, fy) {
                    self.mask[yi as usize * self.size + xi as usize] = true;
                }
            }
        }
    }
}

fn draw_branch(
    canvas: &mut VesselCanvas,
    mut x: f64,
    mut y: f64,
    mut angle: f64,
    mut width: f64,
    rng: &mut SeedRng,
    depth: usize,
) {
    let step = 1.0;
    let max_steps = canvas.size * 2;
    for _ in 0..max_steps {
        if width < 0.7 || !canvas.inside_fov(x, y) {
            return;
        }
        canvas.stamp(x, y, width / 2.0);
        // thin vessels wander more than major ones
        let tortuosity = 0.12 + 0.35 / width.max(1.0);
        angle += rng.random_range(-tortuosity..tortuosity);
        x += step * angle.cos();
        y += step * angle.sin();
        width *= rng.random_range(0.985..0.999);
        if depth < 4 && rng.random_bool(0.02) {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let child_angle = angle + side * rng.random_range(0.4..0.9);
            draw_branch(canvas, x, y, child_angle, width * 0.7, rng, depth + 1);
            width *= 0.85;
        }
    }
}

/// Generate `count` synthetic fundus-like samples of `size`x`size` pixels:
/// a dark textured disc, a branching vessel tree (widths roughly 1-6 px),
/// illumination gradient and noise. Truth is the exact rasterized tree and
/// the fov mask is the disc.
pub fn synth_vessels(count: usize, size: usize, rng: &mut SeedRng) -> Result<Vec<Sample>> {
    if size < 32 {
        return Err(Error::Config(format!(
            "synthetic size must be >= 32, got {size}"
        )));
    }
    (0..count)
        .map(|idx| {
            let mut canvas = VesselCanvas {
                size,
                mask: vec![false; size * size],
                fov_radius: 0.48 * size as f64,
            };
            let c = size as f64 / 2.0;
            // a root hub off-center, like an optic disc
            let hub_angle = rng.random_range(0.0..2.0 * PI);
            let hub_r = rng.random_range(0.15..0.35) * size as f64;
            let (hx, hy) = (c + hub_r * hub_angle.cos(), c + hub_r * hub_angle.sin());
            let n_roots = rng.random_range(3..=5);
            for k in 0..n_roots {
                let angle = 2.0 * PI * k as f64 / n_roots as f64
                    + rng.random_range(-0.4..0.4);
                let width = rng.random_range(3.0..6.0) * size as f64 / 128.0;
                draw_branch(&mut canvas, hx, hy, angle, width.clamp(1.5, 6.0), rng, 0);
            }

            // low-frequency background texture from a few random cosines
            let waves: Vec<(f64, f64, f64)> = (0..4)
                .map(|_| {
                    (
                        rng.random_range(0.5..2.5),
                        rng.random_range(0.5..2.5),
                        rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            let (gx, gy) = (
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.15..0.15),
            );

            let mut image = vec![0.0f32; 3 * size * size];
            let mut truth = vec![0.0f32; size * size];
            let mut fov = vec![0.0f32; size * size];
            for yi in 0..size {
                for xi in 0..size {
                    let p = yi * size + xi;
                    let (fx, fy) = (xi as f64 + 0.5, yi as f64 + 0.5);
                    if !canvas.inside_fov(fx, fy) {
                        continue;
                    }
                    fov[p] = 1.0;
                    let (u, v) = (fx / size as f64, fy / size as f64);
                    let mut texture = 0.0;
                    for &(a, b, phase) in &waves {
                        texture += (2.0 * PI * (a * u + b * v) + phase).cos();
                    }
                    let illum = gx * (u - 0.5) + gy * (v - 0.5);
                    let base = 0.52 + 0.04 * texture / waves.len() as f64 + illum;
                    let vessel = canvas.mask[p];
                    if vessel {
                        truth[p] = 1.0;
                    }
                    let shade = if vessel { 0.45 } else { 1.0 };
                    let noise = rng.random_range(-0.02..0.02);
                    let r = (base * shade + noise).clamp(0.0, 1.0) as f32;
                    let g = (base * 0.55 * shade + noise).clamp(0.0, 1.0) as f32;
                    let b = (base * 0.35 * shade + noise).clamp(0.0, 1.0) as f32;
                    image[p] = r;
                    image[size * size + p] = g;
                    image[2 * size * size + p] = b;
                }
            }

            let sample = Sample {
                id: format!("synth_{idx:04}"),
                image: Tensor::from_vec(&[1, 3, size, size], image)?,
                truth: Tensor::from_vec(&[1, 1, size, size], truth)?,
                fov: Some(Tensor::from_vec(&[1, 1, size, size], fov)?),
            };
            sample.validate()?;
            Ok(sample)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// image I/O

const SUPPORTED: &str = "8/16-bit PNG, binary PPM (P6), binary PGM (P5)";

/// Read an image into [C,H,W] f32 scaled to [0,1]. Grayscale gives C=1.
pub fn read_image<P: AsRef<Path>>(path: P) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "png" => read_png(path),
        "ppm" | "pgm" => read_pnm(path),
        _ => Err(Error::UnsupportedFormat {
            path: path.display().to_string(),
            reason: format!("unknown extension '.{ext}'; supported: {SUPPORTED}"),
        }),
    }
}

fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::UnsupportedFormat {
        path: path.display().to_string(),
        reason: format!("PNG decode failed: {e}"),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Tensor::from_vec(&[1, h, w], data)
        }
        image::DynamicImage::ImageLuma16(buf) => {
            let data = buf
                .into_raw()
                .iter()
                .map(|&v| v as f32 / 65535.0)
                .collect();
            Tensor::from_vec(&[1, h, w], data)
        }
        other => {
            // normalize every other layout through RGB8/RGB16
            if other.color().bytes_per_pixel() > 4 {
                let rgb = other.into_rgb16();
                let raw = rgb.into_raw();
                let mut data = vec![0.0f32; 3 * h * w];
                for p in 0..h * w {
                    for ch in 0..3 {
                        data[ch * h * w + p] = raw[p * 3 + ch] as f32 / 65535.0;
                    }
                }
                Tensor::from_vec(&[3, h, w], data)
            } else {
                let rgb = other.into_rgb8();
                let raw = rgb.into_raw();
                let mut data = vec![0.0f32; 3 * h * w];
                for p in 0..h * w {
                    for ch in 0..3 {
                        data[ch * h * w + p] = raw[p * 3 + ch] as f32 / 255.0;
                    }
                }
                Tensor::from_vec(&[3, h, w], data)
            }
        }
    }
}

fn read_pnm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let err = |reason: &str| Error::UnsupportedFormat {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 2 {
        return Err(err("file too short"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1usize,
        b"P6" => 3usize,
        _ => return Err(err("only binary P5/P6 PNM supported")),
    };
    // header: magic, width, height, maxval as whitespace-separated tokens
    // (comments allowed), then a single whitespace byte before the payload
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed header"))?;
    }
    let [w, h, maxval] = fields;
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("malformed header"));
    }
    pos += 1;
    let (scale, bpp) = match maxval {
        255 => (255.0f32, 1usize),
        65535 => (65535.0f32, 2usize),
        _ => return Err(err("maxval must be 255 or 65535")),
    };
    let need = w * h * channels * bpp;
    if bytes.len() - pos != need {
        return Err(err("payload size mismatch"));
    }
    let payload = &bytes[pos..];
    let mut data = vec![0.0f32; channels * h * w];
    for p in 0..h * w {
        for ch in 0..channels {
            let i = (p * channels + ch) * bpp;
            let v = if bpp == 1 {
                payload[i] as f32
            } else {
                u16::from_be_bytes([payload[i], payload[i + 1]]) as f32
            };
            data[ch * h * w + p] = v / scale;
        }
    }
    Tensor::from_vec(&[channels, h, w], data)
}

/// Read a single-channel mask and binarize at 0.5.
pub fn read_mask<P: AsRef<Path>>(path: P) -> Result<Tensor<f32>> {
    let t = read_image(&path)?;
    let (c, h, w) = dims3(&t)?;
    let t = if c == 1 {
        t
    } else {
        // collapse color masks by their first channel
        Tensor::from_vec(&[1, h, w], t.data()[..h * w].to_vec())?
    };
    Ok(t.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}

/// Write a [C,H,W] (or [1,C,H,W]) tensor in [0,1] as an 8-bit image; the
/// format follows the file extension.
pub fn write_image<P: AsRef<Path>>(path: P, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let t = match t.shape() {
        [1, c, h, w] => t.clone().reshape(&[*c, *h, *w])?,
        [_, _, _] => t.clone(),
        s => {
            return Err(Error::InvalidShape(format!(
                "write_image expects [C,H,W], got {s:?}"
            )))
        }
    };
    let (c, h, w) = dims3(&t)?;
    if c != 1 && c != 3 {
        return Err(Error::InvalidShape(format!(
            "write_image supports 1 or 3 channels, got {c}"
        )));
    }
    let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut interleaved = vec![0u8; c * h * w];
    for p in 0..h * w {
        for ch in 0..c {
            interleaved[p * c + ch] = quant(t.data()[ch * h * w + p]);
        }
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match (ext.as_str(), c) {
        ("png", 1) => image::GrayImage::from_raw(w as u32, h as u32, interleaved)
            .expect("sized buffer")
            .save(path)
            .map_err(|e| Error::Data(format!("PNG write failed: {e}"))),
        ("png", _) => image::RgbImage::from_raw(w as u32, h as u32, interleaved)
            .expect("sized buffer")
            .save(path)
            .map_err(|e| Error::Data(format!("PNG write failed: {e}"))),
        ("pgm", 1) | ("ppm", 3) => {
            let magic = if c == 1 { "P5" } else { "P6" };
            let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&interleaved);
            std::fs::write(path, out)?;
            Ok(())
        }
        _ => Err(Error::UnsupportedFormat {
            path: path.display().to_string(),
            reason: format!("cannot write {c}-channel '.{ext}'; supported: {SUPPORTED}"),
        }),
    }
}

/// Write interleaved RGB bytes (e.g. an analytical map) as PNG.
pub fn write_rgb_png<P: AsRef<Path>>(path: P, rgb: &[u8], h: usize, w: usize) -> Result<()> {
    image::RgbImage::from_raw(w as u32, h as u32, rgb.to_vec())
        .ok_or_else(|| Error::InvalidShape("RGB buffer does not match dims".into()))?
        .save(path.as_ref())
        .map_err(|e| Error::Data(format!("PNG write failed: {e}")))
}

/// Write the documented dataset tree (images/, targets/, masks/) for a set
/// of samples.
pub fn write_dataset<P: AsRef<Path>>(root: P, samples: &[Sample]) -> Result<()> {
    let root = root.as_ref();
    for sub in ["images", "targets", "masks"] {
        std::fs::create_dir_all(root.join(sub))?;
    }
    for s in samples {
        write_image(root.join("images").join(format!("{}.png", s.id)), &s.image)?;
        write_image(root.join("targets").join(format!("{}.png", s.id)), &s.truth)?;
        if let Some(f) = &s.fov {
            write_image(root.join("masks").join(format!("{}.png", s.id)), f)?;
        }
    }
    Ok(())
}
