//! Ready-made finite-difference validation suite covering every layer
//! type, shared by the CLI `check-grad` command and the test suite.

use crate::autograd::{finite_difference_check, Tape, Var};
use crate::error::Result;
use crate::nn::SeedRng;
use crate::octave::{AlphaRatio, OctaveConv};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn rand_t(shape: &[usize], rng: &mut SeedRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("valid shape")
}

fn run_check(
    name: &str,
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    params: &[Tensor<f64>],
    tolerance: f64,
    out: &mut Vec<CheckResult>,
) -> Result<()> {
    let report = finite_difference_check(f, params, 1e-5, tolerance)?;
    out.push(CheckResult {
        name: name.to_string(),
        max_rel_err: report.max_rel_err,
        tolerance,
        pass: report.pass(),
    });
    Ok(())
}

/// Check analytic gradients of every layer type against float64 central
/// finite differences on small randomized tensors.
pub fn gradient_check_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = SeedRng::seed_from_u64(seed);
    let mut results = Vec::new();
    let tol = 1e-5;

    // convolution (strided + padded), loss = sum of outputs
    {
        let x = rand_t(&[2, 3, 6, 6], &mut rng);
        let w = rand_t(&[4, 3, 3, 3], &mut rng);
        let b = rand_t(&[4], &mut rng);
        run_check(
            "conv2d",
            &|tape, vs| {
                let y = tape.conv2d(vs[0], vs[1], Some(vs[2]), 2, 1)?;
                Ok(tape.sum(y))
            },
            &[x, w, b],
            tol,
            &mut results,
        )?;
    }

    // transposed convolution
    {
        let x = rand_t(&[1, 3, 5, 5], &mut rng);
        let w = rand_t(&[3, 2, 3, 3], &mut rng);
        let b = rand_t(&[2], &mut rng);
        run_check(
            "transposed_conv2d",
            &|tape, vs| {
                let y = tape.transposed_conv2d(vs[0], vs[1], Some(vs[2]), 1, 1)?;
                Ok(tape.sum(y))
            },
            &[x, w, b],
            tol,
            &mut results,
        )?;
    }

    // batch norm (training statistics); looser tolerance, the through-stats
    // backward stacks several divisions
    {
        let x = rand_t(&[3, 2, 4, 4], &mut rng);
        let gamma = rand_t(&[2], &mut rng).map(|v| v + 1.5);
        let beta = rand_t(&[2], &mut rng);
        run_check(
            "batch_norm",
            &|tape, vs| {
                let (y, _, _) = tape.batch_norm_train(vs[0], vs[1], vs[2], 1e-5)?;
                let y = tape.sigmoid(y);
                Ok(tape.sum(y))
            },
            &[x, gamma, beta],
            1e-4,
            &mut results,
        )?;
    }

    // octave convolution: all four paths plus the inter-frequency
    // resampling, assembled against the fd leaves; parameters are the two
    // input maps and the four path kernels
    {
        let alpha = AlphaRatio::new(0.5)?;
        let conv = OctaveConv::<f64>::new_he(4, 4, alpha, alpha, 3, &mut rng)?;
        let params = vec![
            rand_t(&[1, 2, 6, 6], &mut rng),
            rand_t(&[1, 2, 3, 3], &mut rng),
            conv.hh.as_ref().unwrap().weight.clone(),
            conv.hl.as_ref().unwrap().weight.clone(),
            conv.lh.as_ref().unwrap().weight.clone(),
            conv.ll.as_ref().unwrap().weight.clone(),
        ];
        run_check(
            "octave_conv",
            &|tape, vs| {
                let (xh, xl) = (vs[0], vs[1]);
                let y_hh = tape.conv2d(xh, vs[2], None, 1, 1)?;
                let pooled = tape.avg_pool2(xh)?;
                let y_hl = tape.conv2d(pooled, vs[3], None, 1, 1)?;
                let y_lh = tape.conv2d(xl, vs[4], None, 1, 1)?;
                let y_lh = tape.upsample_nearest2(y_lh)?;
                let y_ll = tape.conv2d(xl, vs[5], None, 1, 1)?;
                let yh = tape.add(y_hh, y_lh)?;
                let yl = tape.add(y_ll, y_hl)?;
                let yh = tape.sigmoid(yh);
                let yl = tape.sigmoid(yl);
                let sh = tape.sum(yh);
                let sl = tape.sum(yl);
                tape.add(sh, sl)
            },
            &params,
            tol,
            &mut results,
        )?;
    }

    // octave transposed convolution, same structure with transposed kernels
    {
        use crate::octave::OctaveTransposedConv;
        let alpha = AlphaRatio::new(0.5)?;
        let conv = OctaveTransposedConv::<f64>::new_he(4, 4, alpha, alpha, 3, &mut rng)?;
        let params = vec![
            rand_t(&[1, 2, 6, 6], &mut rng),
            rand_t(&[1, 2, 3, 3], &mut rng),
            conv.hh.as_ref().unwrap().weight.clone(),
            conv.hl.as_ref().unwrap().weight.clone(),
            conv.lh.as_ref().unwrap().weight.clone(),
            conv.ll.as_ref().unwrap().weight.clone(),
        ];
        run_check(
            "octave_transposed_conv",
            &|tape, vs| {
                let (xh, xl) = (vs[0], vs[1]);
                let y_hh = tape.transposed_conv2d(xh, vs[2], None, 1, 1)?;
                let pooled = tape.avg_pool2(xh)?;
                let y_hl = tape.transposed_conv2d(pooled, vs[3], None, 1, 1)?;
                let y_lh = tape.transposed_conv2d(xl, vs[4], None, 1, 1)?;
                let y_lh = tape.upsample_nearest2(y_lh)?;
                let y_ll = tape.transposed_conv2d(xl, vs[5], None, 1, 1)?;
                let yh = tape.add(y_hh, y_lh)?;
                let yl = tape.add(y_ll, y_hl)?;
                let yh = tape.sigmoid(yh);
                let yl = tape.sigmoid(yl);
                let sh = tape.sum(yh);
                let sl = tape.sum(yl);
                tape.add(sh, sl)
            },
            &params,
            tol,
            &mut results,
        )?;
    }

    // class-weighted BCE through a sigmoid head
    {
        let logits = rand_t(&[1, 1, 4, 4], &mut rng);
        let target = rand_t(&[1, 1, 4, 4], &mut rng)
            .map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        run_check(
            "weighted_bce",
            &move |tape, vs| {
                let p = tape.sigmoid(vs[0]);
                tape.weighted_bce(p, &target, 1.0 / 9.0, true, 1e-9)
            },
            &[logits],
            tol,
            &mut results,
        )?;
    }

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    #[test]
    fn suite_passes_quickly() {
        let start = Instant::now();
        let results = gradient_check_suite(1234).unwrap();
        assert_eq!(results.len(), 6);
        for r in &results {
            assert!(r.pass, "{} rel err {} >= {}", r.name, r.max_rel_err, r.tolerance);
        }
        assert!(start.elapsed().as_secs() < 60, "suite too slow");
    }
}
