//! The SPGAT network: spectral pyramid, per-stream graph reasoning,
//! cross-level merge and center-pixel classifier.

mod check;
mod graph;
mod head;
mod params;
mod pyramid;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use check::{end_to_end_gradcheck, jitter, END_TO_END_SAMPLES};
pub use graph::{
    gat_aggregate, gat_block, gat_layer, gat_scores, gcn_layer, lattice_operator, patch_side,
    GatParams, ScoreFn,
};
pub use head::{average_merge, classify_center, level_gate, spectral_attention_merge, GateParams};
pub use params::{Ctx, Mode, Param, ParamStore};
pub use pyramid::{
    bottleneck, branch_forward, pyramid_forward, spectral_pool_forward, spectral_pool_head,
    PyramidConfig, KERNEL,
};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Negative slope of every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Graph layers per stream.
const REASONING_LAYERS: usize = 2;

/// The four ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Full pyramid, attention reasoning, attention merge.
    Spgat,
    /// Rate-1 stream only.
    Spgat1,
    /// Lattice graph convolution instead of attention.
    Spgcn,
    /// Streams averaged instead of attention-merged.
    SpgatAvg,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Spgat1,
        Variant::Spgcn,
        Variant::SpgatAvg,
        Variant::Spgat,
    ];
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spgat" => Ok(Variant::Spgat),
            "spgat-1" => Ok(Variant::Spgat1),
            "spgcn" => Ok(Variant::Spgcn),
            "spgat-avg" => Ok(Variant::SpgatAvg),
            other => Err(Error::Config(format!(
                "variant: expected spgat, spgat-1, spgcn or spgat-avg, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Spgat => "spgat",
            Variant::Spgat1 => "spgat-1",
            Variant::Spgcn => "spgcn",
            Variant::SpgatAvg => "spgat-avg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Merge {
    #[default]
    Attention,
    Average,
}

impl FromStr for Merge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Merge::Attention),
            "average" => Ok(Merge::Average),
            other => Err(Error::Config(format!(
                "merge: expected attention or average, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Merge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Merge::Attention => "attention",
            Merge::Average => "average",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reasoning {
    Attention(ScoreFn),
    LatticeGcn,
}

/// Everything needed to build and run a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub bands: usize,
    pub patch: usize,
    pub classes: usize,
    pub pyramid: PyramidConfig,
    pub reasoning: Reasoning,
    pub merge: Merge,
}

impl ModelConfig {
    /// Adjusts a full configuration to one ablation variant.
    pub fn for_variant(
        variant: Variant,
        bands: usize,
        patch: usize,
        classes: usize,
        pyramid: &PyramidConfig,
        score: ScoreFn,
        merge: Merge,
    ) -> Self {
        let mut cfg = Self {
            bands,
            patch,
            classes,
            pyramid: pyramid.clone(),
            reasoning: Reasoning::Attention(score),
            merge,
        };
        match variant {
            Variant::Spgat => {}
            Variant::Spgat1 => cfg.pyramid = pyramid.single_rate(),
            Variant::Spgcn => cfg.reasoning = Reasoning::LatticeGcn,
            Variant::SpgatAvg => cfg.merge = Merge::Average,
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        if self.patch % 2 == 0 {
            return Err(Error::Config(format!(
                "patch: side must be odd, got {}",
                self.patch
            )));
        }
        if self.classes < 1 || self.bands < 1 {
            return Err(Error::Config("classes and bands must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters plus the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Spgat {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Spgat {
    /// Fresh network with seeded uniform weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        config.pyramid.init_params(&mut store, &mut rng)?;
        let d = config.pyramid.stream_width();
        let streams = config.pyramid.stream_count();
        for i in 0..streams {
            for l in 0..REASONING_LAYERS {
                let prefix = format!("s{i}.g{l}");
                match config.reasoning {
                    Reasoning::Attention(_) => GatParams::init(&mut store, &prefix, d, &mut rng)?,
                    Reasoning::LatticeGcn => {
                        store.init_weight(&format!("{prefix}.w"), &[d, d], d, &mut rng)?;
                    }
                }
            }
        }
        if config.merge == Merge::Attention {
            for k in 0..streams - 1 {
                GateParams::init(&mut store, &format!("merge{k}"), d, &mut rng)?;
            }
        }
        store.init_weight("cls.w", &[config.classes, d], d, &mut rng)?;
        store.init_zeros("cls.b", config.classes)?;
        Ok(Self {
            config,
            params: store,
        })
    }

    /// Logits `[B, C]` for patches `x: [B, 1, S, P, P]`.
    pub fn forward(config: &ModelConfig, ctx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let streams = pyramid_forward(ctx, &config.pyramid, x)?;
        let operator = match config.reasoning {
            Reasoning::LatticeGcn => {
                let op = lattice_operator(config.patch);
                let n = config.patch * config.patch;
                Some(ctx.tape.constant(op.reshape(&[1, n, n])?))
            }
            Reasoning::Attention(_) => None,
        };
        let mut reasoned = Vec::with_capacity(streams.len());
        for (i, s) in streams.iter().enumerate() {
            let mut h = ctx.tape.collapse_spectrum(s)?;
            match config.reasoning {
                Reasoning::Attention(score) => {
                    let first = GatParams::bind(ctx, &format!("s{i}.g0"))?;
                    let second = GatParams::bind(ctx, &format!("s{i}.g1"))?;
                    h = gat_block(ctx.tape, &h, &first, &second, score, LEAKY_SLOPE)?;
                }
                Reasoning::LatticeGcn => {
                    let op = operator.as_ref().expect("operator built for GCN");
                    for l in 0..REASONING_LAYERS {
                        let w = ctx.param(&format!("s{i}.g{l}.w"))?;
                        h = gcn_layer(ctx.tape, &h, op, &w, LEAKY_SLOPE)?;
                    }
                }
            }
            reasoned.push(h);
        }
        let merged = match config.merge {
            Merge::Attention => {
                let gates = (0..reasoned.len() - 1)
                    .map(|k| GateParams::bind(ctx, &format!("merge{k}")))
                    .collect::<Result<Vec<_>>>()?;
                spectral_attention_merge(ctx.tape, &reasoned, &gates)?
            }
            Merge::Average => average_merge(ctx.tape, &reasoned)?,
        };
        let (w, b) = (ctx.param("cls.w")?, ctx.param("cls.b")?);
        classify_center(ctx.tape, &merged, &w, &b)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let c = &self.config;
        if x.shape().len() != 5 || x.shape()[1..] != [1, c.bands, c.patch, c.patch] {
            return Err(Error::Shape(format!(
                "model expects [B, 1, {}, {}, {}] patches, got {:?}",
                c.bands,
                c.patch,
                c.patch,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Eval-mode logits without recording gradients, in chunks of `chunk`
    /// patches. Parameters and running statistics are left untouched.
    pub fn predict_logits(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        self.check_input(x)?;
        let b = x.shape()[0];
        let per = x.numel() / b;
        let mut out = Vec::with_capacity(b * self.config.classes);
        for start in (0..b).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(b);
            let mut shape = x.shape().to_vec();
            shape[0] = end - start;
            let part = Tensor::new(&shape, x.data()[start * per..end * per].to_vec())?;
            let mut tape = Tape::no_grad();
            let mut ctx = Ctx::new(&mut tape, &self.params, Mode::Eval);
            let input = ctx.tape.constant(part);
            let logits = Self::forward(&self.config, &mut ctx, &input)?;
            out.extend_from_slice(logits.data());
        }
        Tensor::new(&[b, self.config.classes], out)
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
