use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DataSource, RunConfig};
use super::metrics::{EvalReport, SessionsReport};
use crate::autodiff::Tape;
use crate::data::{
    extract_patches, load_cube, load_labels, make_split, normalize_bands, synth_scene, HsiCube,
    LabelMap, PatchBatch, SplitSpec,
};
use crate::error::{Error, Result};
use crate::model::{
    argmax, Ctx, Merge, Mode, ModelConfig, ParamStore, PyramidConfig, Reasoning, Spgat, Variant,
};
use crate::optim::AdamState;
use crate::par;
use crate::tensor::Tensor;

/// Patches per forward pass at prediction time.
const PREDICT_CHUNK: usize = 64;

/// A normalized cube with its labels.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub labels: LabelMap,
}

impl Scene {
    /// Generates or reads the configured scene and standardizes its bands.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let (cube, labels) = match &cfg.data {
            DataSource::Synth(p) => synth_scene(p)?,
            DataSource::Files {
                cube_header,
                cube_data,
                labels,
            } => {
                let cube = load_cube(cube_header, cube_data)?;
                let labels = load_labels(labels, cube.height(), cube.width())?;
                (cube, labels)
            }
        };
        Ok(Self {
            cube: normalize_bands(&cube, &labels)?,
            labels,
        })
    }
}

/// Train and test patches of one split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: SplitSpec,
    pub train: PatchBatch,
    pub test: PatchBatch,
    pub classes: usize,
    pub bands: usize,
}

impl Prepared {
    pub fn new(scene: &Scene, split: SplitSpec, patch: usize) -> Result<Self> {
        split.validate(&scene.labels)?;
        if split.train.is_empty() || split.test.is_empty() {
            return Err(Error::Split(
                "split needs both train and test pixels".into(),
            ));
        }
        let coords =
            |list: &[crate::data::Sample]| list.iter().map(|p| (p.row, p.col)).collect::<Vec<_>>();
        Ok(Self {
            train: extract_patches(&scene.cube, &scene.labels, &coords(&split.train), patch)?,
            test: extract_patches(&scene.cube, &scene.labels, &coords(&split.test), patch)?,
            classes: scene.labels.num_classes(),
            bands: scene.cube.bands(),
            split,
        })
    }

    /// Draws the configured split.
    pub fn from_config(scene: &Scene, cfg: &RunConfig) -> Result<Self> {
        let split = make_split(
            &scene.labels,
            cfg.train_per_class,
            cfg.effective_split_seed(),
        )?;
        Self::new(scene, split, cfg.patch)
    }
}

/// Rows `idx` of a patch batch.
fn gather(batch: &PatchBatch, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let per = batch.inputs.numel() / batch.labels.len();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&batch.inputs.data()[i * per..][..per]);
    }
    let mut shape = batch.inputs.shape().to_vec();
    shape[0] = idx.len();
    Ok((
        Tensor::new(&shape, data)?,
        idx.iter().map(|&i| batch.labels[i]).collect(),
    ))
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Spgat,
    /// Mean training loss of every epoch.
    pub losses: Vec<f64>,
}

fn locate(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

/// Mini-batch Adam with a seeded reshuffle every epoch. `seed` drives both
/// the weight initialization and the shuffles.
pub fn train(
    config: ModelConfig,
    data: &PatchBatch,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Trained> {
    let n = data.labels.len();
    if n == 0 {
        return Err(Error::Split("no training patches".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size: must be positive".into()));
    }
    let mut model = Spgat::new(config, seed)?;
    let mut adam = AdamState::new(lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, idx) in order.chunks(batch_size).enumerate() {
            let (x, labels) = gather(data, idx).map_err(|e| locate(e, epoch, bi))?;
            let (loss, grads, stats) = {
                let mut tape = Tape::new();
                let mut ctx = Ctx::new(&mut tape, &model.params, Mode::Train);
                let input = ctx.tape.constant(x);
                let step = Spgat::forward(&model.config, &mut ctx, &input)
                    .and_then(|logits| ctx.tape.cross_entropy(&logits, &labels))
                    .and_then(|loss| Ok((loss.value().item(), ctx.trainable_grads(&loss)?)))
                    .map_err(|e| locate(e, epoch, bi))?;
                (step.0, step.1, ctx.take_stats())
            };
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut model.params.trainable_slices_mut(), &grad_refs)?;
            model.params.update_running_stats(&stats)?;
            total += loss * idx.len() as f64;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!(
                "epoch {epoch}: mean loss is {mean}"
            )));
        }
        losses.push(mean);
    }
    Ok(Trained { model, losses })
}

/// Predicted class indices (0-based) for every patch.
pub fn predict(model: &Spgat, inputs: &Tensor) -> Result<Vec<usize>> {
    let logits = model.predict_logits(inputs, PREDICT_CHUNK)?;
    Ok(logits
        .data()
        .chunks(model.config.classes)
        .map(argmax)
        .collect())
}

pub fn evaluate(model: &Spgat, test: &PatchBatch) -> Result<EvalReport> {
    if test.labels.is_empty() {
        return Err(Error::Eval("empty test set".into()));
    }
    let predicted = predict(model, &test.inputs)?;
    EvalReport::from_predictions(&test.labels, &predicted, model.config.classes)
}

/// Trains and evaluates `cfg.sessions` times with seeds `seed + i`.
/// Sessions are independent and may run concurrently.
pub fn run_sessions(cfg: &RunConfig, variant: Variant, data: &Prepared) -> Result<SessionsReport> {
    if cfg.sessions == 0 {
        return Err(Error::Config("sessions: must be positive".into()));
    }
    let model_config = cfg.model_config(variant, data.bands, data.classes);
    let results = par::map_range(cfg.sessions, |i| {
        let seed = cfg.seed.wrapping_add(i as u64);
        train(
            model_config.clone(),
            &data.train,
            cfg.epochs,
            cfg.lr,
            cfg.batch_size,
            seed,
        )
        .and_then(|t| evaluate(&t.model, &data.test))
    });
    let mut reports = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        reports.push(r.map_err(|e| session_error(i, e))?);
    }
    SessionsReport::new(variant, reports)
}

fn session_error(i: usize, e: Error) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("session {i}: {m}")),
        Error::Eval(m) => Error::Eval(format!("session {i}: {m}")),
        other => other,
    }
}

/// Every ablation variant, in [`Variant::ALL`] order.
pub fn ablate(cfg: &RunConfig, data: &Prepared) -> Result<Vec<SessionsReport>> {
    Variant::ALL
        .iter()
        .map(|&v| run_sessions(cfg, v, data))
        .collect()
}

/// Machine-readable summary of an ablation.
pub fn ablation_report(reports: &[SessionsReport]) -> String {
    let mut s = String::new();
    for r in reports {
        r.write_keys(&mut s, &format!("{}.", r.variant));
    }
    s
}

/// Fixed-width OA table for the terminal.
pub fn ablation_table(reports: &[SessionsReport]) -> String {
    let mut s = format!("{:<10} {:>8} {:>8} {:>8}\n", "variant", "OA", "AA", "kappa");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<10} {:>8.4} {:>8.4} {:>8.4}",
            r.variant.to_string(),
            r.mean_oa,
            r.mean_aa,
            r.mean_kappa
        );
    }
    s
}

const MODEL_MAGIC: &str = "spgat-model 1";

/// Writes the network configuration followed by its parameters.
pub fn save_model(model: &Spgat, path: &Path) -> Result<()> {
    let c = &model.config;
    let p = &c.pyramid;
    let rates: Vec<String> = p.rates.iter().map(usize::to_string).collect();
    let reasoning = match c.reasoning {
        Reasoning::Attention(score) => score.to_string(),
        Reasoning::LatticeGcn => "lattice-gcn".to_string(),
    };
    let text = format!(
        "{MODEL_MAGIC}\nbands = {}\npatch = {}\nclasses = {}\nrates = {}\npooling = {}\nbranch_channels = {}\n\
         bottleneck_mids = {},{}\nexpansion = {}\nreasoning = {reasoning}\nmerge = {}\n---\n{}",
        c.bands,
        c.patch,
        c.classes,
        rates.join(","),
        p.pooling,
        p.branch_channels,
        p.mids[0],
        p.mids[1],
        p.expansion,
        c.merge,
        model.params.to_text()
    );
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Spgat> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let rest = text
        .strip_prefix(MODEL_MAGIC)
        .ok_or_else(|| bad(format!("must start with `{MODEL_MAGIC}`")))?;
    let (head, params) = rest
        .split_once("\n---\n")
        .ok_or_else(|| bad("missing `---` separator".into()))?;
    let kv: std::collections::HashMap<&str, &str> = head
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| bad(format!("missing `{k}`")))
    };
    let num = |k: &str| {
        get(k)?
            .parse::<usize>()
            .map_err(|_| bad(format!("bad `{k}`")))
    };
    let list = |k: &str| -> Result<Vec<usize>> {
        get(k)?
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| bad(format!("bad `{k}`")))
            })
            .collect()
    };
    let mids = list("bottleneck_mids")?;
    let config = ModelConfig {
        bands: num("bands")?,
        patch: num("patch")?,
        classes: num("classes")?,
        pyramid: PyramidConfig {
            rates: list("rates")?,
            pooling: get("pooling")?
                .parse()
                .map_err(|_| bad("bad `pooling`".into()))?,
            branch_channels: num("branch_channels")?,
            mids: mids
                .try_into()
                .map_err(|_| bad("`bottleneck_mids` needs two values".into()))?,
            expansion: num("expansion")?,
        },
        reasoning: match get("reasoning")? {
            "lattice-gcn" => Reasoning::LatticeGcn,
            s => Reasoning::Attention(s.parse().map_err(|_| bad(format!("bad reasoning `{s}`")))?),
        },
        merge: get("merge")?
            .parse::<Merge>()
            .map_err(|_| bad("bad `merge`".into()))?,
    };
    let params = ParamStore::from_text(params)?;
    let expected = Spgat::new(config.clone(), 0)?;
    let shapes = |s: &ParamStore| {
        s.entries()
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect::<Vec<_>>()
    };
    if shapes(&expected.params) != shapes(&params) {
        return Err(bad(
            "parameters do not match the declared architecture".into()
        ));
    }
    Ok(Spgat { config, params })
}
