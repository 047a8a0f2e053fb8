//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes (on grad-free tapes), so it
//! shares nothing with the backward rules it verifies.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BnMode, Tape, Var};
use crate::error::Result;
use crate::kernels::conv::Padding;
use crate::tensor::Tensor;

/// Perturbation for central differences.
pub const STEP: f64 = 1e-5;
/// Acceptance threshold on the norm-wise relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    /// Largest relative error over the checked input tensors.
    pub max_rel_err: f64,
    /// Number of scalar coordinates compared.
    pub coords: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// `|a - n| / max(|a| + |n|, 1e-8)` with Euclidean norms.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(1e-8)
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// With `sample = Some(k)`, only `k` randomly chosen coordinates per input
/// (all of them for smaller inputs) are differenced.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor],
    sample_per_input: Option<usize>,
    seed: u64,
    loss_fn: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(&loss)?;

    let eval = |which: usize, perturbed: &Tensor| -> Result<f64> {
        let mut t = Tape::no_grad();
        let vs: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                t.leaf(if i == which {
                    perturbed.clone()
                } else {
                    x.clone()
                })
            })
            .collect();
        Ok(loss_fn(&mut t, &vs)?.value().item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut coords = 0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic_full = grads.get_or_zero(&vars[i]);
        let n = input.numel();
        let picks: Vec<usize> = match sample_per_input {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut analytic = Vec::with_capacity(picks.len());
        let mut numeric = Vec::with_capacity(picks.len());
        let mut probe = input.clone();
        for &j in &picks {
            let orig = input.data()[j];
            probe.data_mut()[j] = orig + STEP;
            let up = eval(i, &probe)?;
            probe.data_mut()[j] = orig - STEP;
            let down = eval(i, &probe)?;
            probe.data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * STEP));
            analytic.push(analytic_full[j]);
        }
        coords += picks.len();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_err: worst,
        coords,
    })
}

/// Minimum distance kept between test inputs and non-differentiable points;
/// central differences are only meaningful where the function is smooth
/// over the whole `[x - STEP, x + STEP]` interval.
const KINK_MARGIN: f64 = 1e-3;

fn off_kink(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < KINK_MARGIN {
            *v = KINK_MARGIN.copysign(*v);
        }
    }
    t
}

fn min_abs_gap(p: &Tensor, q: &Tensor, d: usize) -> f64 {
    let mut gap = f64::INFINITY;
    let rows_p: Vec<&[f64]> = p.data().chunks(d).collect();
    let rows_q: Vec<&[f64]> = q.data().chunks(d).collect();
    for pi in &rows_p {
        for qj in &rows_q {
            for k in 0..d {
                gap = gap.min((pi[k] - qj[k]).abs());
            }
        }
    }
    gap
}

/// Reduces `y` to a scalar through a fixed random projection so every
/// output element carries a distinct weight.
pub fn project(tape: &mut Tape, y: &Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let r = tape.constant(Tensor::randn(y.shape(), &mut rng));
    let prod = tape.mul(y, &r)?;
    tape.sum(&prod)
}

/// Gradient checks for every tape primitive on three seeded random shapes.
pub fn primitive_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut randn = |shape: &[usize]| Tensor::randn(shape, &mut rng);

    let conv_cases = [
        ([1, 1, 5, 1, 1], 2, 1),
        ([2, 2, 7, 2, 1], 3, 2),
        ([1, 3, 6, 2, 2], 2, 3),
    ];
    for (i, (xs, cout, rate)) in conv_cases.into_iter().enumerate() {
        let inputs = [randn(&xs), randn(&[cout, xs[1], 3]), randn(&[cout])];
        out.push(check(
            &format!("atrous_conv_spectral#{i} rate={rate}"),
            &inputs,
            None,
            seed + i as u64,
            |t, v| {
                let y = t.atrous_conv_spectral(&v[0], &v[1], &v[2], rate)?;
                project(t, &y, 1)
            },
        )?);
        let inputs = [randn(&xs), randn(&[cout, xs[1], 3]), randn(&[cout])];
        out.push(check(
            &format!("spectral_conv_circular#{i}"),
            &inputs,
            None,
            seed,
            |t, v| {
                let y = t.spectral_conv(&v[0], &v[1], &v[2], rate, Padding::Circular)?;
                project(t, &y, 2)
            },
        )?);
    }
    for (i, (xs, cout)) in [
        ([1, 1, 2, 1, 1], 1),
        ([2, 3, 2, 2, 1], 2),
        ([1, 2, 3, 1, 2], 4),
    ]
    .into_iter()
    .enumerate()
    {
        let inputs = [randn(&xs), randn(&[cout, xs[1]]), randn(&[cout])];
        out.push(check(
            &format!("conv_pointwise#{i}"),
            &inputs,
            None,
            seed,
            |t, v| {
                let y = t.conv_pointwise(&v[0], &v[1], &v[2])?;
                project(t, &y, 3)
            },
        )?);
    }
    for (i, xs) in [vec![2, 2, 3, 1, 1], vec![4, 3], vec![1, 2, 4, 2, 2]]
        .into_iter()
        .enumerate()
    {
        let c = xs[1];
        let inputs = [randn(&xs), randn(&[c]), randn(&[c])];
        out.push(check(
            &format!("batch_norm_train#{i}"),
            &inputs,
            None,
            seed,
            |t, v| {
                let (y, _) = t.batch_norm(&v[0], &v[1], &v[2], BnMode::Train, 1e-5)?;
                project(t, &y, 4)
            },
        )?);
        let mean: Vec<f64> = (0..c).map(|k| 0.1 * k as f64).collect();
        let var: Vec<f64> = (0..c).map(|k| 0.5 + k as f64).collect();
        out.push(check(
            &format!("batch_norm_eval#{i}"),
            &inputs,
            None,
            seed,
            |t, v| {
                let (y, _) = t.batch_norm(
                    &v[0],
                    &v[1],
                    &v[2],
                    BnMode::Eval {
                        mean: &mean,
                        var: &var,
                    },
                    1e-5,
                )?;
                project(t, &y, 5)
            },
        )?);
    }
    for (i, shape) in [vec![5], vec![2, 3], vec![2, 2, 3]].into_iter().enumerate() {
        out.push(check(
            &format!("leaky_relu#{i}"),
            &[off_kink(randn(&shape))],
            None,
            seed,
            |t, v| {
                let y = t.leaky_relu(&v[0], 0.2)?;
                project(t, &y, 6)
            },
        )?);
        out.push(check(
            &format!("sigmoid#{i}"),
            &[randn(&shape)],
            None,
            seed,
            |t, v| {
                let y = t.sigmoid(&v[0])?;
                project(t, &y, 7)
            },
        )?);
        out.push(check(
            &format!("softmax#{i}"),
            &[randn(&shape)],
            None,
            seed,
            |t, v| {
                let y = t.softmax(&v[0])?;
                project(t, &y, 8)
            },
        )?);
        out.push(check(
            &format!("elementwise#{i}"),
            &[randn(&shape), randn(&shape)],
            None,
            seed,
            |t, v| {
                let a = t.mul(&v[0], &v[1])?;
                let b = t.sub(&a, &v[1])?;
                let c = t.add(&b, &v[0])?;
                let y = t.scale(&c, -1.5)?;
                project(t, &y, 9)
            },
        )?);
    }
    for (i, xs) in [[1, 1, 3, 1, 1], [2, 2, 4, 1, 2], [1, 3, 5, 2, 2]]
        .into_iter()
        .enumerate()
    {
        out.push(check(
            &format!("adaptive_avg_pool_spectral#{i}"),
            &[randn(&xs)],
            None,
            seed,
            |t, v| {
                let y = t.adaptive_avg_pool_spectral(&v[0])?;
                project(t, &y, 10)
            },
        )?);
        let single = [xs[0], xs[1], 1, xs[3], xs[4]];
        out.push(check(
            &format!("repeat_spectral#{i}"),
            &[randn(&single)],
            None,
            seed,
            |t, v| {
                let y = t.repeat_spectral(&v[0], 3)?;
                project(t, &y, 11)
            },
        )?);
        out.push(check(
            &format!("collapse_spectrum#{i}"),
            &[randn(&xs)],
            None,
            seed,
            |t, v| {
                let y = t.collapse_spectrum(&v[0])?;
                project(t, &y, 12)
            },
        )?);
    }
    for (i, (xs, dout)) in [(vec![3], 2), (vec![4, 2], 3), (vec![2, 3, 4], 1)]
        .into_iter()
        .enumerate()
    {
        let din = *xs.last().unwrap();
        let inputs = [randn(&xs), randn(&[dout, din]), randn(&[dout])];
        out.push(check(
            &format!("linear#{i}"),
            &inputs,
            None,
            seed,
            |t, v| {
                let y = t.linear(&v[0], &v[1], Some(&v[2]))?;
                project(t, &y, 13)
            },
        )?);
    }
    for (i, (rows, classes)) in [(1, 2), (3, 4), (5, 3)].into_iter().enumerate() {
        let labels: Vec<usize> = (0..rows).map(|r| (r * 7 + 1) % classes).collect();
        out.push(check(
            &format!("cross_entropy#{i}"),
            &[randn(&[rows, classes])],
            None,
            seed,
            |t, v| t.cross_entropy(&v[0], &labels),
        )?);
    }
    for (i, (ba, bb, m, k, n)) in [(1, 1, 2, 3, 2), (2, 2, 3, 2, 4), (1, 3, 2, 2, 3)]
        .into_iter()
        .enumerate()
    {
        for tb in [false, true] {
            let bs = if tb { [bb, n, k] } else { [bb, k, n] };
            out.push(check(
                &format!("bmm#{i} transpose_b={tb}"),
                &[randn(&[ba, m, k]), randn(&bs)],
                None,
                seed,
                |t, v| {
                    let y = t.bmm(&v[0], &v[1], tb)?;
                    project(t, &y, 14)
                },
            )?);
        }
    }
    for (i, (b, n, d)) in [(1, 1, 2), (2, 3, 2), (1, 4, 3)].into_iter().enumerate() {
        out.push(check(
            &format!("mul_last#{i}"),
            &[randn(&[b, n, d]), randn(&[d])],
            None,
            seed,
            |t, v| {
                let y = t.mul_last(&v[0], &v[1])?;
                project(t, &y, 15)
            },
        )?);
        let p = randn(&[b, n, d]);
        let mut q = randn(&[b, n, d]);
        while min_abs_gap(&p, &q, d) < KINK_MARGIN {
            q = randn(&[b, n, d]);
        }
        let pw = [p, q, randn(&[d])];
        out.push(check(
            &format!("pairwise_abs_diff#{i}"),
            &pw,
            None,
            seed,
            |t, v| {
                let y = t.pairwise_abs_diff(&v[0], &v[1], &v[2])?;
                project(t, &y, 16)
            },
        )?);
        out.push(check(
            &format!("mean_nodes#{i}"),
            &[randn(&[b, n, d])],
            None,
            seed,
            |t, v| {
                let y = t.mean_nodes(&v[0])?;
                project(t, &y, 17)
            },
        )?);
        out.push(check(
            &format!("select_node#{i}"),
            &[randn(&[b, n, d])],
            None,
            seed,
            |t, v| {
                let y = t.select_node(&v[0], n / 2)?;
                project(t, &y, 18)
            },
        )?);
        out.push(check(
            &format!("concat_last#{i}"),
            &[randn(&[b, d]), randn(&[b, n])],
            None,
            seed,
            |t, v| {
                let y = t.concat_last(&v[0], &v[1])?;
                project(t, &y, 19)
            },
        )?);
        out.push(check(
            &format!("gate_mix#{i}"),
            &[randn(&[b, d]), randn(&[b, n, d]), randn(&[b, n, d])],
            None,
            seed,
            |t, v| {
                let y = t.gate_mix(&v[0], &v[1], &v[2])?;
                project(t, &y, 20)
            },
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0], &[-1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn leaky_relu_slope_gradient_at_minus_one() {
        let x = Tensor::new(&[1], vec![-1.0]).unwrap();
        let r = check("leaky", &[x], None, 0, |t, v| {
            let y = t.leaky_relu(&v[0], 0.2)?;
            t.sum(&y)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[1], vec![-1.0]).unwrap());
        let y = tape.leaky_relu(&x, 0.2).unwrap();
        let s = tape.sum(&y).unwrap();
        assert_eq!(tape.backward(&s).unwrap().get(&x).unwrap(), &[0.2]);
    }

    #[test]
    fn every_primitive_passes() {
        let reports = primitive_suite(11).unwrap();
        for r in &reports {
            assert!(r.passed(), "{}: {:e}", r.name, r.max_rel_err);
        }
        assert!(reports.len() >= 60);
    }
}
