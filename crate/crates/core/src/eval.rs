//! Segmentation quality measurement: confusion counts, scalar rates,
//! exact AUROC / average precision, threshold sweeps and RGB error maps.

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarMetrics {
    pub acc: f64,
    pub se: f64,
    pub sp: f64,
    pub f1: f64,
}

/// One row of a threshold sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepPoint {
    pub tau: f64,
    pub metrics: ScalarMetrics,
}

fn check_binary<F: Elem>(truth: &Tensor<F>) -> Result<()> {
    for &v in truth.data() {
        if v != F::zero() && v != F::one() {
            return Err(Error::Data(format!(
                "truth contains non-binary value {v:?}"
            )));
        }
    }
    Ok(())
}

fn check_same_shape<F: Elem>(a: &Tensor<F>, b: &Tensor<F>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Global thresholding: pixel >= tau -> 1.
pub fn binarize<F: Elem>(probs: &Tensor<F>, tau: f64) -> Result<Tensor<F>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("threshold {tau} outside [0, 1]")));
    }
    let t = F::cast_from(tau);
    Ok(probs.map(|v| if v >= t { F::one() } else { F::zero() }))
}

/// Confusion counts over FOV pixels when a mask is given, else all pixels.
pub fn confusion<F: Elem>(
    pred: &Tensor<F>,
    truth: &Tensor<F>,
    fov: Option<&Tensor<F>>,
) -> Result<ConfusionCounts> {
    check_same_shape(pred, truth, "pred vs truth")?;
    if let Some(m) = fov {
        check_same_shape(pred, m, "pred vs fov")?;
    }
    check_binary(truth)?;
    let mut c = ConfusionCounts::default();
    for (i, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
        if let Some(m) = fov {
            if m.data()[i] == F::zero() {
                continue;
            }
        }
        let p = p != F::zero();
        let t = t != F::zero();
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// ACC / SE / SP / F1 with empty-denominator convention: a rate whose
/// denominator is zero is 1 (nothing to get wrong).
pub fn scalar_metrics(c: &ConfusionCounts) -> ScalarMetrics {
    let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    ScalarMetrics {
        acc: ratio(c.tp + c.tn, c.total()),
        se: ratio(c.tp, c.tp + c.fn_),
        sp: ratio(c.tn, c.tn + c.fp),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

fn masked_pairs<F: Elem>(
    probs: &Tensor<F>,
    truth: &Tensor<F>,
    fov: Option<&Tensor<F>>,
) -> Result<Vec<(f64, bool)>> {
    check_same_shape(probs, truth, "probs vs truth")?;
    if let Some(m) = fov {
        check_same_shape(probs, m, "probs vs fov")?;
    }
    check_binary(truth)?;
    let mut out = Vec::with_capacity(probs.numel());
    for (i, (&s, &t)) in probs.data().iter().zip(truth.data()).enumerate() {
        if let Some(m) = fov {
            if m.data()[i] == F::zero() {
                continue;
            }
        }
        out.push((s.to_f64_(), t != F::zero()));
    }
    Ok(out)
}

/// Exact AUROC: the Mann-Whitney statistic with half credit for ties,
/// computed by a single pass over score-sorted pixels.
pub fn auroc<F: Elem>(
    probs: &Tensor<F>,
    truth: &Tensor<F>,
    fov: Option<&Tensor<F>>,
) -> Result<f64> {
    let mut pairs = masked_pairs(probs, truth, fov)?;
    let n_pos = pairs.iter().filter(|(_, t)| *t).count() as f64;
    let n_neg = pairs.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Degenerate(
            "AUROC needs both classes present".into(),
        ));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank-sum with average ranks over tie groups
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank of the group
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = pairs[i..j].iter().filter(|(_, t)| *t).count() as f64;
        rank_sum_pos += avg_rank * pos_in_group;
        i = j;
    }
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// Average precision via step integration over descending-score thresholds.
pub fn average_precision<F: Elem>(
    probs: &Tensor<F>,
    truth: &Tensor<F>,
    fov: Option<&Tensor<F>>,
) -> Result<f64> {
    let mut pairs = masked_pairs(probs, truth, fov)?;
    let n_pos = pairs.iter().filter(|(_, t)| *t).count();
    if n_pos == 0 {
        return Err(Error::Degenerate(
            "average precision needs at least one positive".into(),
        ));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut ap = 0.0f64;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0f64;
    let mut i = 0usize;
    while i < pairs.len() {
        // consume a whole tie group before measuring precision/recall
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            tp += usize::from(pairs[j].1);
            j += 1;
        }
        seen += j - i;
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// The default 99-point grid tau = 0.01, 0.02, ..., 0.99.
pub fn default_tau_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// Scalar metrics at every tau of an ascending grid.
pub fn threshold_sweep<F: Elem>(
    probs: &Tensor<F>,
    truth: &Tensor<F>,
    fov: Option<&Tensor<F>>,
    grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("threshold grid must be ascending".into()));
    }
    grid.iter()
        .map(|&tau| {
            let pred = binarize(probs, tau)?;
            let c = confusion(&pred, truth, fov)?;
            Ok(SweepPoint {
                tau,
                metrics: scalar_metrics(&c),
            })
        })
        .collect()
}

/// RGB error rendering: TP green, FP red, FN blue, TN black.
/// Input maps are [1, 1, H, W] (or any matching shapes); output is
/// interleaved RGB bytes row-major plus the spatial dims.
pub fn analytical_map<F: Elem>(
    pred: &Tensor<F>,
    truth: &Tensor<F>,
) -> Result<(Vec<u8>, usize, usize)> {
    check_same_shape(pred, truth, "pred vs truth")?;
    check_binary(truth)?;
    let shape = pred.shape();
    if shape.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "expected a spatial map, got {shape:?}"
        )));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h * w != pred.numel() {
        return Err(Error::InvalidShape(format!(
            "expected a single-channel map, got {shape:?}"
        )));
    }
    let mut rgb = vec![0u8; h * w * 3];
    for (i, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
        let p = p != F::zero();
        let t = t != F::zero();
        let color: [u8; 3] = match (p, t) {
            (true, true) => [0, 255, 0],
            (true, false) => [255, 0, 0],
            (false, true) => [0, 0, 255],
            (false, false) => [0, 0, 0],
        };
        rgb[i * 3..i * 3 + 3].copy_from_slice(&color);
    }
    Ok((rgb, h, w))
}

/// Full per-image report at tau plus ranking metrics.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub metrics: ScalarMetrics,
    pub auroc: f64,
    pub average_precision: f64,
    pub sweep: Vec<SweepPoint>,
    pub fov_restricted: bool,
}

pub fn evaluate<F: Elem>(
    probs: &Tensor<F>,
    truth: &Tensor<F>,
    fov: Option<&Tensor<F>>,
    tau: f64,
) -> Result<EvalReport> {
    let pred = binarize(probs, tau)?;
    let counts = confusion(&pred, truth, fov)?;
    Ok(EvalReport {
        counts,
        metrics: scalar_metrics(&counts),
        auroc: auroc(probs, truth, fov)?,
        average_precision: average_precision(probs, truth, fov)?,
        sweep: threshold_sweep(probs, truth, fov, &default_tau_grid())?,
        fov_restricted: fov.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn t1(data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[data.len()], data.to_vec()).unwrap()
    }

    /// O(P*N) pairwise counting definition of AUROC.
    fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if !labels[i] {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] {
                    continue;
                }
                total += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / total
    }

    /// Brute-force AP: evaluate PR at every distinct score threshold.
    fn ap_bruteforce(scores: &[f64], labels: &[bool]) -> f64 {
        let mut taus: Vec<f64> = scores.to_vec();
        taus.sort_by(|a, b| b.total_cmp(a));
        taus.dedup();
        let n_pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for &tau in &taus {
            let mut tp = 0.0;
            let mut pred_pos = 0.0;
            for (&s, &l) in scores.iter().zip(labels) {
                if s >= tau {
                    pred_pos += 1.0;
                    if l {
                        tp += 1.0;
                    }
                }
            }
            let recall = tp / n_pos;
            let precision = tp / pred_pos;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    #[test]
    fn confusion_enumerated() {
        let pred = t1(&[1.0, 1.0, 0.0, 0.0]);
        let truth = t1(&[1.0, 0.0, 0.0, 1.0]);
        let c = confusion(&pred, &truth, None).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );
    }

    #[test]
    fn confusion_respects_fov() {
        let pred = t1(&[1.0, 1.0, 0.0, 0.0]);
        let truth = t1(&[1.0, 0.0, 0.0, 1.0]);
        let fov = t1(&[1.0, 0.0, 1.0, 0.0]);
        let c = confusion(&pred, &truth, Some(&fov)).unwrap();
        assert_eq!(c.total(), 2);
        assert_eq!(c.tp, 1);
        assert_eq!(c.tn, 1);
    }

    #[test]
    fn scalar_metrics_formula_cases() {
        let m = scalar_metrics(&ConfusionCounts {
            tp: 9,
            fn_: 1,
            tn: 89,
            fp: 1,
        });
        assert!((m.se - 0.9).abs() < 1e-12);
        assert!((m.sp - 89.0 / 90.0).abs() < 1e-12);
        assert!((m.acc - 0.98).abs() < 1e-12);
        assert!((m.f1 - 0.9).abs() < 1e-12);
        // degenerate no-positive case
        let m = scalar_metrics(&ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 5,
            fn_: 0,
        });
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.se, 1.0);
    }

    #[test]
    fn acc_is_prevalence_weighted_se_sp() {
        let c = ConfusionCounts {
            tp: 13,
            fp: 7,
            tn: 52,
            fn_: 4,
        };
        let m = scalar_metrics(&c);
        let pos = (c.tp + c.fn_) as f64;
        let neg = (c.tn + c.fp) as f64;
        let expect = (pos * m.se + neg * m.sp) / (pos + neg);
        assert!((m.acc - expect).abs() < 1e-12);
    }

    #[test]
    fn binarize_basics() {
        let p = t1(&[0.4, 0.6]);
        assert_eq!(binarize(&p, 0.5).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(binarize(&p, 0.0).unwrap().data(), &[1.0, 1.0]);
        assert!(binarize(&p, 1.5).is_err());
    }

    #[test]
    fn auroc_examples() {
        let s = t1(&[0.9, 0.8, 0.3]);
        let l = t1(&[1.0, 0.0, 1.0]);
        assert!((auroc(&s, &l, None).unwrap() - 0.5).abs() < 1e-15);
        // perfect separation
        let s = t1(&[0.9, 0.8, 0.2, 0.1]);
        let l = t1(&[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(auroc(&s, &l, None).unwrap(), 1.0);
        // constant scores -> all ties -> 0.5
        let s = t1(&[0.5; 6]);
        let l = t1(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert!((auroc(&s, &l, None).unwrap() - 0.5).abs() < 1e-15);
        // single class errors
        let l = t1(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(auroc(&s, &l, None).is_err());
    }

    #[test]
    fn auroc_matches_pairwise_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for case in 0..200 {
            let n = rng.random_range(10..=1000);
            // quantized scores force plenty of ties
            let scores: Vec<f64> =
                (0..n).map(|_| rng.random_range(0..20) as f64 / 19.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            if labels.iter().all(|&l| l) {
                labels[0] = false;
            }
            if labels.iter().all(|&l| !l) {
                labels[0] = true;
            }
            let st = t1(&scores);
            let lt = t1(&labels.iter().map(|&l| f64::from(u8::from(l))).collect::<Vec<_>>());
            let fast = auroc(&st, &lt, None).unwrap();
            let slow = auroc_pairwise(&scores, &labels);
            assert!(
                (fast - slow).abs() <= 1e-12,
                "case {case}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn ap_examples_and_bruteforce() {
        let s = t1(&[0.9, 0.8]);
        let l = t1(&[0.0, 1.0]);
        assert!((average_precision(&s, &l, None).unwrap() - 0.5).abs() < 1e-15);
        // perfect ranking
        let s = t1(&[0.9, 0.8, 0.2, 0.1]);
        let l = t1(&[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(average_precision(&s, &l, None).unwrap(), 1.0);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for case in 0..100 {
            let n = rng.random_range(5..200);
            let scores: Vec<f64> =
                (0..n).map(|_| rng.random_range(0..10) as f64 / 9.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            if labels.iter().all(|&l| !l) {
                labels[0] = true;
            }
            let st = t1(&scores);
            let lt = t1(&labels.iter().map(|&l| f64::from(u8::from(l))).collect::<Vec<_>>());
            let fast = average_precision(&st, &lt, None).unwrap();
            let slow = ap_bruteforce(&scores, &labels);
            assert!(
                (fast - slow).abs() <= 1e-12,
                "case {case}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn ap_invariant_under_monotone_transform() {
        let scores = [0.1, 0.3, 0.5, 0.55, 0.8, 0.95];
        let labels = t1(&[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let a = average_precision(&t1(&scores), &labels, None).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| s * s * 0.5 + 0.1).collect();
        let b = average_precision(&t1(&squashed), &labels, None).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn sweep_monotonicity_and_consistency() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 500;
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let truth: Vec<f64> = (0..n)
            .map(|i| f64::from(u8::from(probs[i] + rng.random_range(-0.4..0.4) > 0.5)))
            .collect();
        let p = t1(&probs);
        let t = t1(&truth);
        let grid = default_tau_grid();
        let sweep = threshold_sweep(&p, &t, None, &grid).unwrap();
        assert_eq!(sweep.len(), 99);
        for w in sweep.windows(2) {
            assert!(w[1].metrics.se <= w[0].metrics.se + 1e-15);
            assert!(w[1].metrics.sp + 1e-15 >= w[0].metrics.sp);
        }
        // grid point at 0.5 equals direct computation
        let at_half = sweep.iter().find(|p| p.tau == 0.5).unwrap();
        let direct = scalar_metrics(&confusion(&binarize(&p, 0.5).unwrap(), &t, None).unwrap());
        assert_eq!(at_half.metrics, direct);
    }

    #[test]
    fn analytical_map_colors() {
        let pred = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f32, 1.0, 0.0, 0.0]).unwrap();
        let truth = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f32, 0.0, 1.0, 0.0]).unwrap();
        let (rgb, h, w) = analytical_map(&pred, &truth).unwrap();
        assert_eq!((h, w), (2, 2));
        assert_eq!(&rgb[0..3], &[0, 255, 0]); // TP
        assert_eq!(&rgb[3..6], &[255, 0, 0]); // FP
        assert_eq!(&rgb[6..9], &[0, 0, 255]); // FN
        assert_eq!(&rgb[9..12], &[0, 0, 0]); // TN
    }

    #[test]
    fn metrics_invariant_to_pixel_order() {
        let probs = [0.9, 0.1, 0.7, 0.3, 0.6];
        let truth = [1.0, 0.0, 1.0, 0.0, 0.0];
        let a = auroc(&t1(&probs), &t1(&truth), None).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let probs_p: Vec<f64> = perm.iter().map(|&i| probs[i]).collect();
        let truth_p: Vec<f64> = perm.iter().map(|&i| truth[i]).collect();
        let b = auroc(&t1(&probs_p), &t1(&truth_p), None).unwrap();
        assert_eq!(a, b);
    }
}
