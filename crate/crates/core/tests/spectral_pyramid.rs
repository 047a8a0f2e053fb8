use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spgat::gradcheck::{check, project, TOLERANCE};
use spgat::model::{
    bottleneck, branch_forward, jitter, pyramid_forward, spectral_pool_forward, spectral_pool_head,
    Ctx, Mode, ParamStore, PyramidConfig, LEAKY_SLOPE,
};
use spgat::{Error, Tape, Tensor};

fn small() -> PyramidConfig {
    PyramidConfig {
        rates: vec![1, 12, 24, 36],
        pooling: true,
        branch_channels: 3,
        mids: [2, 3],
        expansion: 2,
    }
}

fn store(cfg: &PyramidConfig, seed: u64) -> ParamStore {
    let mut s = ParamStore::new();
    cfg.init_params(&mut s, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap();
    s
}

fn input(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn every_rate_preserves_the_band_count() {
    let cfg = small();
    let params = store(&cfg, 1);
    let x = input(&[2, 1, 16, 3, 3], 2);
    for (i, &rate) in cfg.rates.iter().enumerate() {
        let mut tape = Tape::no_grad();
        let mut ctx = Ctx::new(&mut tape, &params, Mode::Train);
        let xv = ctx.tape.constant(x.clone());
        let y = branch_forward(&mut ctx, &format!("s{i}"), &xv, rate).unwrap();
        assert_eq!(y.shape(), &[2, cfg.stream_width(), 16, 3, 3], "rate {rate}");
    }
}

fn zero_residual(params: &mut ParamStore, prefix: &str) {
    for s in [
        "reduce.w", "reduce.b", "conv.w", "conv.b", "expand.w", "expand.b",
    ] {
        params
            .get_mut(&format!("{prefix}.{s}"))
            .unwrap()
            .data_mut()
            .fill(0.0);
    }
}

#[test]
fn zeroed_residual_branch_leaves_identity_skip() {
    // Second block of this config maps 4 -> 2 -> 4 channels: no projection.
    let cfg = PyramidConfig {
        rates: vec![1],
        pooling: false,
        branch_channels: 4,
        mids: [2, 2],
        expansion: 2,
    };
    let mut params = store(&cfg, 3);
    zero_residual(&mut params, "s0.bt1");
    assert!(params.get("s0.bt1.proj.w").is_err());
    // Non-negative input: the post-addition activation passes it through.
    let x = Tensor::new(
        &[2, 4, 5, 3, 3],
        input(&[2, 4, 5, 3, 3], 4)
            .data()
            .iter()
            .map(|v| v.abs())
            .collect(),
    )
    .unwrap();
    let mut tape = Tape::no_grad();
    let mut ctx = Ctx::new(&mut tape, &params, Mode::Train);
    let xv = ctx.tape.constant(x.clone());
    let y = bottleneck(&mut ctx, "s0.bt1", &xv).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn zeroed_residual_branch_leaves_projected_skip() {
    let cfg = small();
    let mut params = store(&cfg, 5);
    zero_residual(&mut params, "s0.bt0");
    let x = input(&[1, 3, 4, 3, 3], 6);
    let mut tape = Tape::no_grad();
    let mut ctx = Ctx::new(&mut tape, &params, Mode::Train);
    let xv = ctx.tape.constant(x.clone());
    let y = bottleneck(&mut ctx, "s0.bt0", &xv).unwrap();
    // Oracle: leaky(P x + b) with the projection applied by explicit loops.
    let (pw, pb) = (
        params.get("s0.bt0.proj.w").unwrap(),
        params.get("s0.bt0.proj.b").unwrap(),
    );
    let (cout, cin, inner) = (4, 3, 4 * 9);
    for co in 0..cout {
        for i in 0..inner {
            let mut v = pb.data()[co];
            for ci in 0..cin {
                v += pw.data()[co * cin + ci] * x.data()[ci * inner + i];
            }
            let expect = if v >= 0.0 { v } else { LEAKY_SLOPE * v };
            assert!((y.data()[co * inner + i] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn pooled_branch_on_constant_spectra_matches_a_single_slice() {
    let cfg = small();
    let params = store(&cfg, 7);
    let slice = input(&[3, 1, 1, 3, 3], 8);
    let mut spread = Vec::new();
    for b in 0..3 {
        for _ in 0..10 {
            spread.extend_from_slice(&slice.data()[b * 9..][..9]);
        }
    }
    let constant = Tensor::new(&[3, 1, 10, 3, 3], spread).unwrap();
    let run = |x: &Tensor| {
        let mut tape = Tape::no_grad();
        let mut ctx = Ctx::new(&mut tape, &params, Mode::Train);
        let xv = ctx.tape.constant(x.clone());
        spectral_pool_head(&mut ctx, "s4", &xv)
            .unwrap()
            .value()
            .clone()
    };
    let (a, b) = (run(&constant), run(&slice));
    assert_eq!(a.shape(), b.shape());
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn pooled_and_rate_streams_share_a_shape() {
    let cfg = small();
    let params = store(&cfg, 9);
    let mut tape = Tape::no_grad();
    let mut ctx = Ctx::new(&mut tape, &params, Mode::Train);
    let xv = ctx.tape.constant(input(&[2, 1, 12, 5, 5], 10));
    let pooled = spectral_pool_forward(&mut ctx, "s4", &xv).unwrap();
    let branch = branch_forward(&mut ctx, "s0", &xv, 1).unwrap();
    assert_eq!(pooled.shape(), branch.shape());
}

#[test]
fn stream_counts_and_determinism() {
    let cfg = small();
    let params = store(&cfg, 11);
    let x = input(&[2, 1, 16, 3, 3], 12);
    let run = |cfg: &PyramidConfig, params: &ParamStore| {
        let mut tape = Tape::no_grad();
        let mut ctx = Ctx::new(&mut tape, params, Mode::Train);
        let xv = ctx.tape.constant(x.clone());
        pyramid_forward(&mut ctx, cfg, &xv)
            .unwrap()
            .iter()
            .map(|v| v.value().clone())
            .collect::<Vec<_>>()
    };
    let a = run(&cfg, &params);
    assert_eq!(a.len(), 5);
    assert_eq!(cfg.stream_count(), 5);
    assert_eq!(a, run(&cfg, &params));
    let single = cfg.single_rate();
    assert_eq!(run(&single, &store(&single, 11)).len(), 1);
}

#[test]
fn config_validation() {
    let bad = |f: fn(&mut PyramidConfig)| {
        let mut c = small();
        f(&mut c);
        matches!(c.validate(), Err(Error::Config(_)))
    };
    assert!(bad(|c| c.rates = vec![2, 4]));
    assert!(bad(|c| c.rates = vec![1, 4, 4]));
    assert!(bad(|c| c.rates.clear()));
    assert!(bad(|c| c.branch_channels = 0));
    assert!(bad(|c| c.mids = [0, 2]));
    assert!(bad(|c| c.expansion = 0));
    assert_eq!(PyramidConfig::full_scale().mids, [64, 128]);
    assert_eq!(PyramidConfig::toy().stream_width(), 64);
}

fn jittered(cfg: &PyramidConfig, seed: u64) -> ParamStore {
    let mut s = store(cfg, seed);
    jitter(&mut s, 0.1, seed + 100);
    s
}

fn trainable(params: &ParamStore) -> Vec<Tensor> {
    params
        .trainable_ids()
        .into_iter()
        .map(|id| params.entries()[id].value.clone())
        .collect()
}

#[test]
fn gradient_through_one_branch() {
    let cfg = PyramidConfig {
        rates: vec![1],
        pooling: false,
        ..small()
    };
    let params = jittered(&cfg, 13);
    let mut inputs = vec![input(&[2, 1, 8, 3, 3], 14)];
    inputs.extend(trainable(&params));
    let report = check("branch", &inputs, None, 15, |tape, vars| {
        let mut ctx = Ctx::with_overrides(tape, &params, Mode::Train, &vars[1..])?;
        let y = branch_forward(&mut ctx, "s0", &vars[0], 2)?;
        project(ctx.tape, &y, 16)
    })
    .unwrap();
    assert!(report.max_rel_err < TOLERANCE, "{report:?}");
}

#[test]
fn gradient_through_pooled_branch() {
    let cfg = PyramidConfig {
        rates: vec![1],
        ..small()
    };
    let params = jittered(&cfg, 17);
    let mut inputs = vec![input(&[2, 1, 8, 3, 3], 18)];
    inputs.extend(trainable(&params));
    let report = check("pooled", &inputs, None, 19, |tape, vars| {
        let mut ctx = Ctx::with_overrides(tape, &params, Mode::Train, &vars[1..])?;
        let y = spectral_pool_forward(&mut ctx, "s1", &vars[0])?;
        project(ctx.tape, &y, 20)
    })
    .unwrap();
    assert!(report.max_rel_err < TOLERANCE, "{report:?}");
}

#[test]
fn gradient_through_full_pyramid() {
    let cfg = small();
    let params = jittered(&cfg, 21);
    let mut inputs = vec![input(&[1, 1, 16, 3, 3], 22)];
    inputs.extend(trainable(&params));
    let report = check("pyramid", &inputs, Some(6), 23, |tape, vars| {
        let mut ctx = Ctx::with_overrides(tape, &params, Mode::Train, &vars[1..])?;
        let streams = pyramid_forward(&mut ctx, &cfg, &vars[0])?;
        let mut total = project(ctx.tape, &streams[0], 24)?;
        for (i, s) in streams.iter().enumerate().skip(1) {
            let p = project(ctx.tape, s, 24 + i as u64)?;
            total = ctx.tape.add(&total, &p)?;
        }
        Ok(total)
    })
    .unwrap();
    assert!(report.max_rel_err < TOLERANCE, "{report:?}");
}
