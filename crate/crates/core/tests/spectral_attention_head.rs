use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spgat::gradcheck::{check, project, TOLERANCE};
use spgat::model::{
    average_merge, classify_center, level_gate, spectral_attention_merge, GateParams,
};
use spgat::{Error, Tape, Tensor, Var};

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn gate(tape: &Tape, d: usize, seed: u64) -> GateParams {
    GateParams {
        w: tape.constant(randn(&[d, 2 * d], seed)),
        b: tape.constant(randn(&[d], seed + 1)),
    }
}

fn stack(tape: &Tape, levels: usize, shape: &[usize], seed: u64) -> Vec<Var> {
    (0..levels)
        .map(|k| tape.constant(randn(shape, seed + k as u64)))
        .collect()
}

fn node_mean(t: &[f64], n: usize, d: usize, b: usize) -> Vec<f64> {
    (0..d)
        .map(|k| (0..n).map(|i| t[(b * n + i) * d + k]).sum::<f64>() / n as f64)
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn single_level_passes_through() {
    let mut tape = Tape::no_grad();
    let s = stack(&tape, 1, &[2, 9, 3], 1);
    let merged = spectral_attention_merge(&mut tape, &s, &[]).unwrap();
    assert_eq!(merged.data(), s[0].data());
    let avg = average_merge(&mut tape, &s).unwrap();
    assert_eq!(avg.data(), merged.data());
}

#[test]
fn saturated_gate_selects_a_level() {
    let mut tape = Tape::no_grad();
    let s = stack(&tape, 2, &[1, 9, 2], 2);
    let zero_w = tape.constant(Tensor::zeros(&[2, 4]));
    for (bias, pick) in [(50.0, 0), (-50.0, 1)] {
        let g = GateParams {
            w: zero_w.clone(),
            b: tape.constant(Tensor::full(&[2], bias)),
        };
        let m = spectral_attention_merge(&mut tape, &s, &[g]).unwrap();
        for (a, b) in m.data().iter().zip(s[pick].data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn two_level_merge_matches_formula() {
    let (bsz, n, d) = (2, 9, 3);
    let mut tape = Tape::no_grad();
    let s = stack(&tape, 2, &[bsz, n, d], 3);
    let g = gate(&tape, d, 10);
    let m = spectral_attention_merge(&mut tape, &s, std::slice::from_ref(&g)).unwrap();
    let (f, c) = (s[0].data(), s[1].data());
    for b in 0..bsz {
        let z: Vec<f64> = node_mean(f, n, d, b)
            .into_iter()
            .chain(node_mean(c, n, d, b))
            .collect();
        for k in 0..d {
            let pre = g.b.data()[k]
                + (0..2 * d)
                    .map(|j| g.w.data()[k * 2 * d + j] * z[j])
                    .sum::<f64>();
            let gk = sigmoid(pre);
            for i in 0..n {
                let at = (b * n + i) * d + k;
                let want = gk * f[at] + (1.0 - gk) * c[at];
                assert!((m.data()[at] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn merge_folds_from_the_coarsest_level() {
    let (n, d) = (1, 2);
    let mut tape = Tape::no_grad();
    let s = stack(&tape, 3, &[1, n, d], 20);
    let gates = [gate(&tape, d, 30), gate(&tape, d, 40)];
    let got = spectral_attention_merge(&mut tape, &s, &gates).unwrap();
    let inner_g = level_gate(&mut tape, &s[1], &s[2], &gates[1]).unwrap();
    let inner = tape.gate_mix(&inner_g, &s[1], &s[2]).unwrap();
    let outer_g = level_gate(&mut tape, &s[0], &inner, &gates[0]).unwrap();
    let want = tape.gate_mix(&outer_g, &s[0], &inner).unwrap();
    assert_eq!(got.data(), want.data());
}

#[test]
fn average_merge_of_five_levels() {
    let mut tape = Tape::no_grad();
    let s = stack(&tape, 5, &[2, 9, 4], 50);
    let m = average_merge(&mut tape, &s).unwrap();
    for (i, v) in m.data().iter().enumerate() {
        let want = s.iter().map(|x| x.data()[i]).sum::<f64>() / 5.0;
        assert!((v - want).abs() < 1e-14);
    }
    let same: Vec<Var> = (0..3).map(|_| s[0].clone()).collect();
    let m = average_merge(&mut tape, &same).unwrap();
    for (a, b) in m.data().iter().zip(s[0].data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn mismatched_stacks_are_rejected() {
    let mut tape = Tape::no_grad();
    let mut s = stack(&tape, 2, &[1, 9, 3], 60);
    assert!(matches!(
        spectral_attention_merge(&mut tape, &s, &[]),
        Err(Error::Shape(_))
    ));
    s.push(tape.constant(Tensor::zeros(&[1, 9, 4])));
    assert!(matches!(average_merge(&mut tape, &s), Err(Error::Shape(_))));
    assert!(matches!(
        average_merge(&mut tape, &[]),
        Err(Error::Shape(_))
    ));
}

#[test]
fn classifier_reads_the_center_node() {
    let (d, c) = (3, 4);
    let mut tape = Tape::no_grad();
    let w = tape.constant(randn(&[c, d], 70));
    let b = tape.constant(randn(&[c], 71));

    for (n, center) in [(1, 0), (9, 4), (49, 24)] {
        let x = randn(&[2, n, d], 72 + n as u64);
        let xv = tape.constant(x.clone());
        let y = classify_center(&mut tape, &xv, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, c]);
        for bi in 0..2 {
            let node = &x.data()[(bi * n + center) * d..][..d];
            for o in 0..c {
                let want = b.data()[o] + (0..d).map(|k| w.data()[o * d + k] * node[k]).sum::<f64>();
                assert!((y.data()[bi * c + o] - want).abs() < 1e-12);
            }
        }

        // Only the center node can move the logits.
        let mut other = x.clone();
        for bi in 0..2 {
            for i in (0..n).filter(|&i| i != center) {
                other.data_mut()[(bi * n + i) * d..][..d].fill(9.0);
            }
        }
        let ov = tape.constant(other);
        let y2 = classify_center(&mut tape, &ov, &w, &b).unwrap();
        assert_eq!(y.data(), y2.data());
    }

    for bad in [4, 8] {
        let xv = tape.constant(Tensor::zeros(&[1, bad, d]));
        assert!(
            classify_center(&mut tape, &xv, &w, &b).is_err(),
            "N = {bad}"
        );
    }
}

#[test]
fn gradient_through_merge_and_classifier() {
    let (n, d, c) = (9, 3, 4);
    let mut inputs: Vec<Tensor> = (0..3).map(|k| randn(&[2, n, d], 80 + k)).collect();
    for k in 0..2 {
        inputs.push(randn(&[d, 2 * d], 90 + k));
        inputs.push(randn(&[d], 95 + k));
    }
    inputs.push(randn(&[c, d], 100));
    inputs.push(randn(&[c], 101));
    let report = check("head", &inputs, None, 102, |tape, v| {
        let gates = [
            GateParams {
                w: v[3].clone(),
                b: v[4].clone(),
            },
            GateParams {
                w: v[5].clone(),
                b: v[6].clone(),
            },
        ];
        let m = spectral_attention_merge(tape, &v[0..3], &gates)?;
        let logits = classify_center(tape, &m, &v[7], &v[8])?;
        project(tape, &logits, 103)
    })
    .unwrap();
    assert!(report.max_rel_err < TOLERANCE, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gates_lie_in_the_unit_interval(seed in 0u64..10_000, d in 1usize..5, n in 1usize..6) {
        let mut tape = Tape::no_grad();
        let s = stack(&tape, 2, &[2, n, d], seed);
        let g = gate(&tape, d, seed + 50);
        let v = level_gate(&mut tape, &s[0], &s[1], &g).unwrap();
        prop_assert_eq!(v.shape(), &[2, d]);
        prop_assert!(v.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn merge_stays_within_level_bounds(seed in 0u64..10_000, levels in 1usize..6) {
        let (n, d) = (9, 2);
        let mut tape = Tape::no_grad();
        let s = stack(&tape, levels, &[1, n, d], seed);
        let gates: Vec<GateParams> =
            (0..levels - 1).map(|k| gate(&tape, d, seed + 100 + 2 * k as u64)).collect();
        let m = spectral_attention_merge(&mut tape, &s, &gates).unwrap();
        for (i, v) in m.data().iter().enumerate() {
            let lo = s.iter().map(|x| x.data()[i]).fold(f64::INFINITY, f64::min);
            let hi = s.iter().map(|x| x.data()[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }
}
