use std::path::{Path, PathBuf};

use crate::data::{PerClass, SynthParams};
use crate::error::{Error, Result};
use crate::model::{Merge, ModelConfig, PyramidConfig, ScoreFn, Variant};

/// Where the scene comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth(SynthParams),
    Files {
        cube_header: PathBuf,
        cube_data: PathBuf,
        labels: PathBuf,
    },
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub patch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub sessions: usize,
    /// Base seed; session `i` trains with `seed + i`.
    pub seed: u64,
    /// Seed of the train/test split, shared by every session; follows
    /// `seed` unless pinned.
    pub split_seed: Option<u64>,
    pub train_per_class: PerClass,
    pub pyramid: PyramidConfig,
    pub score: ScoreFn,
    pub merge: Merge,
    pub data: DataSource,
}

/// Named widths of the synthetic spectral bumps.
pub fn context_scale(name: &str) -> Option<f64> {
    match name {
        "small" => Some(1.0),
        "medium" => Some(2.0),
        "large" => Some(4.0),
        _ => None,
    }
}

fn default_scene() -> SynthParams {
    SynthParams {
        classes: 4,
        bands: 32,
        height: 48,
        width: 48,
        noise_sigma: 0.3,
        context_scale: 4.0,
        seed: 7,
    }
}

impl RunConfig {
    /// Desk-scale defaults.
    pub fn toy() -> Self {
        Self {
            variant: Variant::Spgat,
            patch: 7,
            epochs: 200,
            lr: 0.001,
            batch_size: 16,
            sessions: 3,
            seed: 0,
            split_seed: None,
            train_per_class: PerClass::Count(10),
            pyramid: PyramidConfig::toy(),
            score: ScoreFn::DotProduct,
            merge: Merge::Attention,
            data: DataSource::Synth(default_scene()),
        }
    }

    /// Training budget and widths of the original protocol.
    pub fn full_scale() -> Self {
        Self {
            epochs: 500,
            sessions: 10,
            pyramid: PyramidConfig::full_scale(),
            ..Self::toy()
        }
    }

    /// Applies `key = value` lines on top of `self`. Unknown keys, bad values
    /// and duplicate keys are config errors naming the key.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut synth = match &self.data {
            DataSource::Synth(p) => p.clone(),
            DataSource::Files { .. } => default_scene(),
        };
        let (mut header, mut data, mut labels) = (None, None, None);
        let mut synth_touched = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "line {}: expected `key = value`, got `{line}`",
                        n + 1
                    ))
                })?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("{key}: given twice")));
            }
            let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got `{value}`"));
            let uint = || {
                value
                    .parse::<usize>()
                    .map_err(|_| bad("a non-negative integer"))
            };
            let pos = || {
                uint().and_then(|v| {
                    if v > 0 {
                        Ok(v)
                    } else {
                        Err(bad("a positive integer"))
                    }
                })
            };
            let real = || {
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad("a real number"))
            };
            let u64v = || {
                value
                    .parse::<u64>()
                    .map_err(|_| bad("a 64-bit unsigned integer"))
            };
            match key {
                "variant" => self.variant = value.parse()?,
                "patch" => self.patch = pos()?,
                "epochs" => self.epochs = pos()?,
                "lr" => {
                    let lr = real()?;
                    if lr < 0.0 {
                        return Err(bad("a non-negative learning rate"));
                    }
                    self.lr = lr;
                }
                "batch_size" => self.batch_size = pos()?,
                "sessions" => self.sessions = pos()?,
                "seed" => self.seed = u64v()?,
                "split_seed" => self.split_seed = Some(u64v()?),
                "train_per_class" => {
                    self.train_per_class = value
                        .parse()
                        .map_err(|_| bad("a count, a fraction in (0,1) or all-but-one"))?
                }
                "rates" => {
                    self.pyramid.rates = value
                        .split(',')
                        .map(|r| r.trim().parse::<usize>().ok().filter(|&r| r > 0))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad("a comma-separated list of positive integers"))?
                }
                "pooling" => {
                    self.pyramid.pooling = value.parse().map_err(|_| bad("true or false"))?
                }
                "branch_channels" => self.pyramid.branch_channels = pos()?,
                "bottleneck_mids" => {
                    let mids: Vec<usize> = value
                        .split(',')
                        .map(|m| m.trim().parse::<usize>().ok().filter(|&m| m > 0))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad("two positive integers"))?;
                    self.pyramid.mids = mids
                        .try_into()
                        .map_err(|_| bad("exactly two positive integers"))?;
                }
                "expansion" => self.pyramid.expansion = pos()?,
                "score" => self.score = value.parse()?,
                "merge" => self.merge = value.parse()?,
                "cube_header" => header = Some(PathBuf::from(value)),
                "cube_data" => data = Some(PathBuf::from(value)),
                "labels" => labels = Some(PathBuf::from(value)),
                "synth_classes" => (synth.classes, synth_touched) = (pos()?, true),
                "synth_bands" => (synth.bands, synth_touched) = (pos()?, true),
                "synth_height" => (synth.height, synth_touched) = (pos()?, true),
                "synth_width" => (synth.width, synth_touched) = (pos()?, true),
                "synth_seed" => (synth.seed, synth_touched) = (u64v()?, true),
                "noise_sigma" => {
                    let s = real()?;
                    if s < 0.0 {
                        return Err(bad("a non-negative noise level"));
                    }
                    (synth.noise_sigma, synth_touched) = (s, true);
                }
                "context_scale" => {
                    let s = context_scale(value)
                        .or_else(|| {
                            value
                                .parse::<f64>()
                                .ok()
                                .filter(|v| *v > 0.0 && v.is_finite())
                        })
                        .ok_or_else(|| bad("small, medium, large or a positive number"))?;
                    (synth.context_scale, synth_touched) = (s, true);
                }
                other => return Err(Error::Config(format!("{other}: unknown key"))),
            }
        }
        match (header, data, labels) {
            (None, None, None) => self.data = DataSource::Synth(synth),
            (Some(cube_header), Some(cube_data), Some(labels)) => {
                if synth_touched {
                    return Err(Error::Config(
                        "cube_header: file data and synth_* keys are mutually exclusive".into(),
                    ));
                }
                self.data = DataSource::Files {
                    cube_header,
                    cube_data,
                    labels,
                }
            }
            _ => {
                return Err(Error::Config(
                    "cube_header: cube_header, cube_data and labels must be given together".into(),
                ))
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_file(base: Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config: cannot read {}: {e}", path.display())))?;
        base.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        if self.patch % 2 == 0 {
            return Err(Error::Config(format!(
                "patch: side must be odd, got {}",
                self.patch
            )));
        }
        Ok(())
    }

    pub fn effective_split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn synth_params(&self) -> Option<&SynthParams> {
        match &self.data {
            DataSource::Synth(p) => Some(p),
            DataSource::Files { .. } => None,
        }
    }

    /// Network configuration for `variant` on a scene of the given size.
    pub fn model_config(&self, variant: Variant, bands: usize, classes: usize) -> ModelConfig {
        ModelConfig::for_variant(
            variant,
            bands,
            self.patch,
            classes,
            &self.pyramid,
            self.score,
            self.merge,
        )
    }
}
