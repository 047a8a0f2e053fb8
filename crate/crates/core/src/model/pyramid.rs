use rand::Rng;

use super::params::{Ctx, ParamStore};
use super::LEAKY_SLOPE;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spectral kernel length of every branch and bottleneck convolution.
pub const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidConfig {
    /// Dilation rates of the convolution branches, finest first.
    pub rates: Vec<usize>,
    /// Whether the spectral-pooling stream is appended.
    pub pooling: bool,
    /// Branch width before the bottlenecks.
    pub branch_channels: usize,
    /// Mid widths of the two bottleneck blocks.
    pub mids: [usize; 2],
    pub expansion: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl PyramidConfig {
    pub fn toy() -> Self {
        Self {
            rates: vec![1, 12, 24, 36],
            pooling: true,
            branch_channels: 24,
            mids: [16, 32],
            expansion: 2,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            mids: [64, 128],
            expansion: 4,
            ..Self::toy()
        }
    }

    /// Single rate-1 stream without pooling.
    pub fn single_rate(&self) -> Self {
        Self {
            rates: vec![1],
            pooling: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.rates.first() != Some(&1) {
            return fail(format!("rates: first rate must be 1, got {:?}", self.rates));
        }
        if self.rates.windows(2).any(|w| w[1] <= w[0]) {
            return fail(format!(
                "rates: must be strictly increasing, got {:?}",
                self.rates
            ));
        }
        if self.branch_channels == 0 {
            return fail("branch_channels: must be positive".into());
        }
        if self.mids.contains(&0) {
            return fail("bottleneck_mids: must be positive".into());
        }
        if self.expansion == 0 {
            return fail("expansion: must be positive".into());
        }
        Ok(())
    }

    pub fn stream_count(&self) -> usize {
        self.rates.len() + usize::from(self.pooling)
    }

    /// Channel width of every output stream.
    pub fn stream_width(&self) -> usize {
        self.mids[1] * self.expansion
    }

    /// `(in, mid, out)` channels of the two bottleneck blocks.
    fn blocks(&self) -> [(usize, usize, usize); 2] {
        let out0 = self.mids[0] * self.expansion;
        [
            (self.branch_channels, self.mids[0], out0),
            (out0, self.mids[1], self.mids[1] * self.expansion),
        ]
    }

    /// Registers every pyramid tensor under `s{i}.` prefixes.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.validate()?;
        let cb = self.branch_channels;
        for i in 0..self.stream_count() {
            let p = format!("s{i}");
            // The first convolution feeds batch norm, which cancels any bias.
            if i < self.rates.len() {
                store.init_weight(&format!("{p}.conv.w"), &[cb, 1, KERNEL], KERNEL, rng)?;
            } else {
                store.init_weight(&format!("{p}.pool.w"), &[cb, 1], 1, rng)?;
            }
            store.init_batch_norm(&format!("{p}.bn"), cb)?;
            for (j, (cin, mid, out)) in self.blocks().into_iter().enumerate() {
                let q = format!("{p}.bt{j}");
                store.init_weight(&format!("{q}.reduce.w"), &[mid, cin], cin, rng)?;
                store.init_zeros(&format!("{q}.reduce.b"), mid)?;
                store.init_weight(
                    &format!("{q}.conv.w"),
                    &[mid, mid, KERNEL],
                    mid * KERNEL,
                    rng,
                )?;
                store.init_zeros(&format!("{q}.conv.b"), mid)?;
                store.init_weight(&format!("{q}.expand.w"), &[out, mid], mid, rng)?;
                store.init_zeros(&format!("{q}.expand.b"), out)?;
                if cin != out {
                    store.init_weight(&format!("{q}.proj.w"), &[out, cin], cin, rng)?;
                    store.init_zeros(&format!("{q}.proj.b"), out)?;
                }
            }
        }
        Ok(())
    }
}

/// Residual bottleneck: pointwise reduce, rate-1 spectral conv, pointwise
/// expand, plus a skip path (projected when widths differ), activated after
/// the addition.
pub fn bottleneck(ctx: &mut Ctx<'_>, prefix: &str, x: &Var) -> Result<Var> {
    let p = |s: &str| format!("{prefix}.{s}");
    let (rw, rb) = (ctx.param(&p("reduce.w"))?, ctx.param(&p("reduce.b"))?);
    let (cw, cb) = (ctx.param(&p("conv.w"))?, ctx.param(&p("conv.b"))?);
    let (ew, eb) = (ctx.param(&p("expand.w"))?, ctx.param(&p("expand.b"))?);
    let projected = if ew.shape()[0] != x.shape()[1] {
        Some((ctx.param(&p("proj.w"))?, ctx.param(&p("proj.b"))?))
    } else {
        None
    };
    let t = &mut *ctx.tape;
    let r = t.conv_pointwise(x, &rw, &rb)?;
    let r = t.leaky_relu(&r, LEAKY_SLOPE)?;
    let c = t.atrous_conv_spectral(&r, &cw, &cb, 1)?;
    let c = t.leaky_relu(&c, LEAKY_SLOPE)?;
    let e = t.conv_pointwise(&c, &ew, &eb)?;
    let skip = match projected {
        Some((pw, pb)) => t.conv_pointwise(x, &pw, &pb)?,
        None => x.clone(),
    };
    let sum = t.add(&e, &skip)?;
    t.leaky_relu(&sum, LEAKY_SLOPE)
}

fn bottlenecks(ctx: &mut Ctx<'_>, prefix: &str, x: &Var) -> Result<Var> {
    let y = bottleneck(ctx, &format!("{prefix}.bt0"), x)?;
    bottleneck(ctx, &format!("{prefix}.bt1"), &y)
}

fn expect_input(x: &Var) -> Result<()> {
    match x.shape() {
        [_, 1, _, _, _] => Ok(()),
        s => Err(Error::Shape(format!(
            "pyramid input must be [B, 1, S, P, P], got {s:?}"
        ))),
    }
}

/// Atrous convolution at `rate`, batch norm, leaky ReLU, two bottlenecks.
pub fn branch_forward(ctx: &mut Ctx<'_>, prefix: &str, x: &Var, rate: usize) -> Result<Var> {
    expect_input(x)?;
    let w = ctx.param(&format!("{prefix}.conv.w"))?;
    let b = ctx.tape.constant(Tensor::zeros(&[w.shape()[0]]));
    let y = ctx.tape.atrous_conv_spectral(x, &w, &b, rate)?;
    let y = ctx.batch_norm(&format!("{prefix}.bn"), &y)?;
    let y = ctx.tape.leaky_relu(&y, LEAKY_SLOPE)?;
    bottlenecks(ctx, prefix, &y)
}

/// Pooled stream up to (excluding) the spectral repeat: average over bands,
/// pointwise conv, batch norm, ReLU. Shape `[B, Cb, 1, P, P]`.
pub fn spectral_pool_head(ctx: &mut Ctx<'_>, prefix: &str, x: &Var) -> Result<Var> {
    expect_input(x)?;
    let w = ctx.param(&format!("{prefix}.pool.w"))?;
    let b = ctx.tape.constant(Tensor::zeros(&[w.shape()[0]]));
    let y = ctx.tape.adaptive_avg_pool_spectral(x)?;
    let y = ctx.tape.conv_pointwise(&y, &w, &b)?;
    let y = ctx.batch_norm(&format!("{prefix}.bn"), &y)?;
    ctx.tape.relu(&y)
}

/// Pooled stream repeated back to the input band count, then bottlenecks.
pub fn spectral_pool_forward(ctx: &mut Ctx<'_>, prefix: &str, x: &Var) -> Result<Var> {
    let y = spectral_pool_head(ctx, prefix, x)?;
    let y = ctx.tape.repeat_spectral(&y, x.shape()[2])?;
    bottlenecks(ctx, prefix, &y)
}

/// All streams, ordered by rate with the pooled stream last.
pub fn pyramid_forward(ctx: &mut Ctx<'_>, config: &PyramidConfig, x: &Var) -> Result<Vec<Var>> {
    let mut streams = Vec::with_capacity(config.stream_count());
    for (i, &rate) in config.rates.iter().enumerate() {
        streams.push(branch_forward(ctx, &format!("s{i}"), x, rate)?);
    }
    if config.pooling {
        streams.push(spectral_pool_forward(
            ctx,
            &format!("s{}", config.rates.len()),
            x,
        )?);
    }
    Ok(streams)
}
