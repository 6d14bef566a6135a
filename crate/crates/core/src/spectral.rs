//! Frequency analysis of feature maps: centered 2D spectra, group
//! averaging, radial 1D curves and baseline-vs-octave comparison.

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};
use crate::unet::OctaveUNet;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupTag {
    Baseline,
    OctaveHigh,
    OctaveLow,
}

impl GroupTag {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::OctaveHigh => "octave-high",
            Self::OctaveLow => "octave-low",
        }
    }
}

/// Center-shifted magnitude (or power) spectrum of one or more feature maps.
#[derive(Clone, Debug)]
pub struct EnergyMap {
    /// [H, W] non-negative magnitudes, zero frequency at (H/2, W/2)
    pub grid: Tensor<f64>,
    pub tag: GroupTag,
    pub averaged_over: usize,
}

/// Unnormalized 2D DFT magnitudes with the zero-frequency bin shifted to
/// the center. `power` squares the magnitudes.
pub fn fft2_magnitude<F: Elem>(map: &Tensor<F>, tag: GroupTag, power: bool) -> Result<EnergyMap> {
    let (h, w) = match map.shape() {
        [h, w] => (*h, *w),
        [1, h, w] | [1, 1, h, w] => (*h, *w),
        s => {
            return Err(Error::InvalidShape(format!(
                "expected a single-channel 2D map, got {s:?}"
            )))
        }
    };
    if h < 2 || w < 2 {
        return Err(Error::InvalidShape(format!(
            "spectrum needs H, W >= 2, got {h}x{w}"
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);

    let mut grid: Vec<Complex<f64>> = map
        .data()
        .iter()
        .map(|&v| Complex::new(v.to_f64_(), 0.0))
        .collect();
    for row in grid.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for (i, c) in col.iter_mut().enumerate() {
            *c = grid[i * w + j];
        }
        col_fft.process(&mut col);
        for (i, c) in col.iter().enumerate() {
            grid[i * w + j] = *c;
        }
    }

    // fftshift: move bin (0,0) to (h/2, w/2)
    let mut out = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let si = (i + h / 2) % h;
            let sj = (j + w / 2) % w;
            let mag = grid[i * w + j].norm();
            out[si * w + sj] = if power { mag * mag } else { mag };
        }
    }
    Ok(EnergyMap {
        grid: Tensor::from_vec(&[h, w], out)?,
        tag,
        averaged_over: 1,
    })
}

/// Elementwise mean of a group of equally sized energy maps.
pub fn average_energy(maps: &[EnergyMap], tag: GroupTag) -> Result<EnergyMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Config("cannot average an empty group".into()))?;
    let mut acc = Tensor::<f64>::zeros(first.grid.shape())?;
    let mut count = 0usize;
    for m in maps {
        if m.grid.shape() != first.grid.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mixed spectrum dims {:?} vs {:?}",
                m.grid.shape(),
                first.grid.shape()
            )));
        }
        acc = acc.add(&m.grid)?;
        count += m.averaged_over;
    }
    Ok(EnergyMap {
        grid: acc.mul_scalar(1.0 / maps.len() as f64),
        tag,
        averaged_over: count,
    })
}

/// One point of a radial spectrum: normalized radius (radius / Nyquist)
/// and the mean magnitude of all bins at that integer radius.
#[derive(Clone, Copy, Debug)]
pub struct RadialPoint {
    pub radius: usize,
    pub radius_normalized: f64,
    pub magnitude: f64,
}

/// Average bins by integer-rounded distance from the center and order by
/// increasing radius.
pub fn radial_spectrum(e: &EnergyMap) -> Result<Vec<RadialPoint>> {
    let (h, w) = match e.grid.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::InvalidShape(format!("energy map {s:?}"))),
    };
    let (ci, cj) = (h / 2, w / 2);
    let nyquist = (h.min(w) / 2) as f64;
    let max_r = {
        let di = ci.max(h - 1 - ci) as f64;
        let dj = cj.max(w - 1 - cj) as f64;
        (di * di + dj * dj).sqrt().round() as usize
    };
    let mut sums = vec![0.0f64; max_r + 1];
    let mut counts = vec![0usize; max_r + 1];
    for i in 0..h {
        for j in 0..w {
            let di = i as f64 - ci as f64;
            let dj = j as f64 - cj as f64;
            let r = (di * di + dj * dj).sqrt().round() as usize;
            sums[r] += e.grid.data()[i * w + j];
            counts[r] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .enumerate()
        .filter(|(_, (_, &c))| c > 0)
        .map(|(r, (&s, &c))| RadialPoint {
            radius: r,
            radius_normalized: r as f64 / nyquist,
            magnitude: s / c as f64,
        })
        .collect())
}

/// Fraction of total energy at normalized radius <= `radius_normalized`.
pub fn energy_fraction_within(e: &EnergyMap, radius_normalized: f64) -> Result<f64> {
    let (h, w) = match e.grid.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::InvalidShape(format!("energy map {s:?}"))),
    };
    let (ci, cj) = (h / 2, w / 2);
    let nyquist = (h.min(w) / 2) as f64;
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for i in 0..h {
        for j in 0..w {
            let di = i as f64 - ci as f64;
            let dj = j as f64 - cj as f64;
            let rn = (di * di + dj * dj).sqrt() / nyquist;
            let v = e.grid.data()[i * w + j];
            total += v;
            if rn <= radius_normalized {
                inside += v;
            }
        }
    }
    if total == 0.0 {
        return Err(Error::Degenerate("zero-energy spectrum".into()));
    }
    Ok(inside / total)
}

/// Averaged spectra and radial curves for one feature group.
#[derive(Clone, Debug)]
pub struct GroupSpectrum {
    pub map: EnergyMap,
    pub curve: Vec<RadialPoint>,
}

#[derive(Clone, Debug)]
pub struct ModelComparison {
    pub baseline: GroupSpectrum,
    pub octave_high: GroupSpectrum,
    pub octave_low: GroupSpectrum,
}

fn channel_spectra<F: Elem>(
    feat: &Tensor<F>,
    tag: GroupTag,
    power: bool,
) -> Result<Vec<EnergyMap>> {
    let (n, c, h, w) = feat.dims4()?;
    let mut out = Vec::with_capacity(n * c);
    for nc in 0..n * c {
        let plane = Tensor::from_vec(
            &[h, w],
            feat.data()[nc * h * w..(nc + 1) * h * w].to_vec(),
        )?;
        out.push(fft2_magnitude(&plane, tag, power)?);
    }
    Ok(out)
}

/// Feed the same images to a baseline (alpha = 0) and an octave model,
/// collect feature maps at the named tap, and average spectra per group:
/// {baseline, octave-high, octave-low}.
pub fn compare_models(
    baseline: &mut OctaveUNet<f32>,
    octave: &mut OctaveUNet<f32>,
    images: &[Tensor<f32>],
    tap: &str,
    power: bool,
) -> Result<ModelComparison> {
    if baseline.config.alpha != 0.0 {
        return Err(Error::Config(format!(
            "baseline model must have alpha = 0, got {}",
            baseline.config.alpha
        )));
    }
    if octave.config.alpha <= 0.0 {
        return Err(Error::Config("octave model must have alpha > 0".into()));
    }
    if images.is_empty() {
        return Err(Error::Config("no images to analyze".into()));
    }
    let mut base_maps = Vec::new();
    let mut high_maps = Vec::new();
    let mut low_maps = Vec::new();
    for img in images {
        let taps = baseline.extract_features(img, &[tap.to_string()])?;
        let (_, pair) = &taps[0];
        let feat = pair.high.as_ref().ok_or_else(|| {
            Error::Config(format!("tap '{tap}' has no high-frequency map"))
        })?;
        base_maps.extend(channel_spectra(feat, GroupTag::Baseline, power)?);

        let taps = octave.extract_features(img, &[tap.to_string()])?;
        let (_, pair) = &taps[0];
        let high = pair.high.as_ref().ok_or_else(|| {
            Error::Config(format!("tap '{tap}' has no high-frequency map"))
        })?;
        let low = pair.low.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "tap '{tap}' has no low-frequency map in the octave model"
            ))
        })?;
        high_maps.extend(channel_spectra(high, GroupTag::OctaveHigh, power)?);
        low_maps.extend(channel_spectra(low, GroupTag::OctaveLow, power)?);
    }
    let build = |maps: &[EnergyMap], tag| -> Result<GroupSpectrum> {
        let map = average_energy(maps, tag)?;
        let curve = radial_spectrum(&map)?;
        Ok(GroupSpectrum { map, curve })
    };
    Ok(ModelComparison {
        baseline: build(&base_maps, GroupTag::Baseline)?,
        octave_high: build(&high_maps, GroupTag::OctaveHigh)?,
        octave_low: build(&low_maps, GroupTag::OctaveLow)?,
    })
}

/// Render an energy map as [0,1] grayscale (max-normalized, optionally
/// log-scaled as log(1 + x)).
pub fn to_grayscale(e: &EnergyMap, log_scale: bool) -> Result<Tensor<f32>> {
    let vals: Vec<f64> = if log_scale {
        e.grid.data().iter().map(|&v| (1.0 + v).ln()).collect()
    } else {
        e.grid.data().to_vec()
    };
    let max = vals.iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let shape = [1, e.grid.shape()[0], e.grid.shape()[1]];
    Tensor::from_vec(&shape, vals.iter().map(|&v| (v * scale) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use rand::{Rng, SeedableRng};

    fn rand_map(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[h, w],
            (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_map_is_dc_only() {
        let m = Tensor::from_vec(&[4, 6], vec![0.5f64; 24]).unwrap();
        let e = fft2_magnitude(&m, GroupTag::Baseline, false).unwrap();
        for i in 0..4 {
            for j in 0..6 {
                let expect = if (i, j) == (2, 3) { 0.5 * 24.0 } else { 0.0 };
                assert!(
                    (e.grid.data()[i * 6 + j] - expect).abs() < 1e-9,
                    "bin ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn pure_cosine_two_bins() {
        let (h, w) = (8usize, 8usize);
        let data: Vec<f64> = (0..h * w)
            .map(|p| {
                let j = (p % w) as f64;
                (2.0 * std::f64::consts::PI * 2.0 * j / w as f64).cos()
            })
            .collect();
        let m = Tensor::from_vec(&[h, w], data).unwrap();
        let e = fft2_magnitude(&m, GroupTag::Baseline, false).unwrap();
        let mut nonzero = Vec::new();
        for i in 0..h {
            for j in 0..w {
                if e.grid.data()[i * w + j] > 1e-9 {
                    nonzero.push((i, j));
                }
            }
        }
        // symmetric bins at horizontal frequency +-2 around center (4,4)
        assert_eq!(nonzero, vec![(4, 2), (4, 6)]);
    }

    #[test]
    fn matches_naive_dft_oracle() {
        let m = rand_map(8, 8, 42);
        let e = fft2_magnitude(&m, GroupTag::Baseline, false).unwrap();
        let naive = reference::dft2_magnitude_naive(m.data(), 8, 8);
        // the oracle is unshifted; compare after shifting it
        let (h, w) = (8usize, 8usize);
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = ((i + h / 2) % h, (j + w / 2) % w);
                let diff = (e.grid.data()[si * w + sj] - naive[i * w + j]).abs();
                assert!(diff < 1e-6, "bin ({i},{j}) diff {diff}");
            }
        }
    }

    #[test]
    fn parseval_identity() {
        let m = rand_map(16, 12, 7);
        let e = fft2_magnitude(&m, GroupTag::Baseline, true).unwrap();
        let spectrum_energy: f64 = e.grid.data().iter().sum();
        let signal_energy: f64 = m.data().iter().map(|&v| v * v).sum();
        let expect = 16.0 * 12.0 * signal_energy;
        assert!(
            ((spectrum_energy - expect) / expect).abs() < 1e-6,
            "{spectrum_energy} vs {expect}"
        );
    }

    #[test]
    fn fftshift_is_involution() {
        // applying the same shift twice on even dims restores layout:
        // verify via double application on an asymmetric impulse
        let mut data = vec![0.0f64; 16];
        data[1] = 1.0; // impulse off-center
        let shift = |v: &[f64]| -> Vec<f64> {
            let (h, w) = (4usize, 4usize);
            let mut out = vec![0.0; 16];
            for i in 0..h {
                for j in 0..w {
                    out[((i + 2) % 4) * w + (j + 2) % 4] = v[i * w + j];
                }
            }
            out
        };
        assert_eq!(shift(&shift(&data)), data);
    }

    #[test]
    fn averaging_properties() {
        let a = fft2_magnitude(&rand_map(8, 8, 1), GroupTag::OctaveHigh, false).unwrap();
        let b = fft2_magnitude(&rand_map(8, 8, 2), GroupTag::OctaveHigh, false).unwrap();
        // idempotence
        let same = average_energy(&[a.clone(), a.clone()], GroupTag::OctaveHigh).unwrap();
        assert!(same.grid.max_abs_diff(&a.grid) < 1e-12);
        // linearity of radial spectrum
        let avg = average_energy(&[a.clone(), b.clone()], GroupTag::OctaveHigh).unwrap();
        let ra = radial_spectrum(&a).unwrap();
        let rb = radial_spectrum(&b).unwrap();
        let ravg = radial_spectrum(&avg).unwrap();
        for ((pa, pb), pavg) in ra.iter().zip(&rb).zip(&ravg) {
            assert!((0.5 * (pa.magnitude + pb.magnitude) - pavg.magnitude).abs() < 1e-12);
        }
        // mixed dims rejected
        let c = fft2_magnitude(&rand_map(4, 4, 3), GroupTag::OctaveHigh, false).unwrap();
        assert!(average_energy(&[a, c], GroupTag::OctaveHigh).is_err());
    }

    #[test]
    fn ring_impulse_radial_spike() {
        let (h, w) = (16usize, 16usize);
        let mut data = vec![0.0f64; h * w];
        let (ci, cj) = (8i64, 8i64);
        for i in 0..h as i64 {
            for j in 0..w as i64 {
                let r = (((i - ci).pow(2) + (j - cj).pow(2)) as f64).sqrt();
                if r.round() as i64 == 3 {
                    data[(i * w as i64 + j) as usize] = 2.0;
                }
            }
        }
        let e = EnergyMap {
            grid: Tensor::from_vec(&[h, w], data).unwrap(),
            tag: GroupTag::Baseline,
            averaged_over: 1,
        };
        let curve = radial_spectrum(&e).unwrap();
        for p in &curve {
            if p.radius == 3 {
                assert!((p.magnitude - 2.0).abs() < 1e-12);
            } else {
                assert_eq!(p.magnitude, 0.0);
            }
        }
        // normalized radius axis: bin 3 of a 16x16 map -> 3/8
        let p3 = curve.iter().find(|p| p.radius == 3).unwrap();
        assert!((p3.radius_normalized - 0.375).abs() < 1e-12);
    }

    #[test]
    fn dc_only_energy_fraction() {
        let m = Tensor::from_vec(&[8, 8], vec![1.0f64; 64]).unwrap();
        let e = fft2_magnitude(&m, GroupTag::Baseline, false).unwrap();
        assert_eq!(energy_fraction_within(&e, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn compare_models_identical_taps() {
        use crate::octave::ActivationPlacement;
        use crate::unet::ModelConfig;
        let mk = |alpha: f64| {
            let cfg = ModelConfig {
                depth: 2,
                base_channels: 4,
                alpha,
                convs_per_block: 1,
                input_channels: 3,
                kernel_size: 3,
                activation_placement: ActivationPlacement::BlockLevel,
            };
            OctaveUNet::<f32>::build(&cfg, &mut crate::nn::SeedRng::seed_from_u64(5)).unwrap()
        };
        let mut base = mk(0.0);
        let mut oct = mk(0.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let img = Tensor::from_vec(
            &[1, 3, 16, 16],
            (0..768).map(|_| rng.random_range(0.0f32..1.0)).collect(),
        )
        .unwrap();
        let cmp = compare_models(&mut base, &mut oct, &[img], "encoder1", false).unwrap();
        // geometry: tap at level 1 of a 16x16 input -> high 8x8, low 4x4
        assert_eq!(cmp.baseline.map.grid.shape(), &[8, 8]);
        assert_eq!(cmp.octave_high.map.grid.shape(), &[8, 8]);
        assert_eq!(cmp.octave_low.map.grid.shape(), &[4, 4]);
        // curve length ~ half-diagonal of the tap resolution
        assert!(cmp.baseline.curve.len() >= 5);
        // unknown tap is a config error
        assert!(compare_models(&mut base, &mut oct, std::slice::from_ref(
            &Tensor::full(&[1, 3, 16, 16], 0.5f32).unwrap()
        ), "nope", false).is_err());
        // wrong alpha roles rejected
        let mut oct2 = mk(0.5);
        assert!(compare_models(&mut oct2, &mut oct, &[], "encoder1", false).is_err());
    }
}
