use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{BatchStats, BnMode, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const MAGIC: &str = "spgat-params 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Buffers such as running statistics are not trainable.
    pub trainable: bool,
}

/// Named model tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("parameter `{name}` defined twice")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            value,
            trainable,
        });
        Ok(self.entries.len() - 1)
    }

    /// Weight drawn uniformly from `+-sqrt(6 / fan_in)`.
    pub fn init_weight(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<usize> {
        let bound = (6.0 / fan_in as f64).sqrt();
        self.insert(name, Tensor::uniform(shape, bound, rng), true)
    }

    pub fn init_zeros(&mut self, name: &str, len: usize) -> Result<usize> {
        self.insert(name, Tensor::zeros(&[len]), true)
    }

    /// Scale, shift and running statistics of a batch-norm layer.
    pub fn init_batch_norm(&mut self, prefix: &str, channels: usize) -> Result<()> {
        self.insert(
            &format!("{prefix}.gamma"),
            Tensor::full(&[channels], 1.0),
            true,
        )?;
        self.insert(&format!("{prefix}.beta"), Tensor::zeros(&[channels]), true)?;
        self.insert(
            &format!("{prefix}.running_mean"),
            Tensor::zeros(&[channels]),
            false,
        )?;
        self.insert(
            &format!("{prefix}.running_var"),
            Tensor::full(&[channels], 1.0),
            false,
        )?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entries[self.id(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let id = self.id(name)?;
        Ok(&mut self.entries[id].value)
    }

    pub fn entries(&self) -> &[Param] {
        &self.entries
    }

    /// Ids of trainable tensors, in store order.
    pub fn trainable_ids(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].trainable)
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Mutable views of the trainable tensors, in store order.
    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.entries
            .iter_mut()
            .filter(|p| p.trainable)
            .map(|p| p.value.data_mut())
            .collect()
    }

    /// Folds batch statistics into running averages with momentum 0.1.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats)]) -> Result<()> {
        for (prefix, s) in stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let run = self.get_mut(&format!("{prefix}.{suffix}"))?;
                for (r, b) in run.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
        Ok(())
    }

    /// Plain-text dump: a magic line, then per tensor a header line
    /// `name trainable dims...` and a line of values. Values use the
    /// shortest exact decimal form, so loading restores every bit.
    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC}\n");
        for p in &self.entries {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            s.push_str(&format!(
                "{} {} {}\n",
                p.name,
                u8::from(p.trainable),
                dims.join(" ")
            ));
            let vals: Vec<String> = p.value.data().iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Format(format!(
                "parameter file must start with `{MAGIC}`"
            )));
        }
        let mut store = Self::new();
        while let Some(header) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let mut f = header.split_whitespace();
            let bad = |m: &str| Error::Format(format!("parameter header `{header}`: {m}"));
            let name = f.next().ok_or_else(|| bad("missing name"))?;
            let trainable = match f.next() {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(bad("trainable flag must be 0 or 1")),
            };
            let shape = f
                .map(|d| d.parse::<usize>().map_err(|_| bad("bad dimension")))
                .collect::<Result<Vec<_>>>()?;
            let values = lines
                .next()
                .ok_or_else(|| bad("missing values"))?
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad value")))
                .collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(&shape, values).map_err(|e| bad(&e.to_string()))?;
            store.insert(name, t, trainable)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; observed statistics are collected for the caller.
    Train,
    /// Running statistics; nothing is collected.
    Eval,
}

/// Binds a [`ParamStore`] to a tape for one forward pass.
///
/// Trainable tensors become leaves on first use (or come from explicit
/// overrides), buffers become constants.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    store: &'a ParamStore,
    mode: Mode,
    vars: Vec<Option<Var>>,
    stats: Vec<(String, BatchStats)>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            tape,
            store,
            mode,
            vars: vec![None; store.len()],
            stats: Vec::new(),
        }
    }

    /// Uses `overrides[k]` for the `k`-th trainable tensor instead of its
    /// stored value.
    pub fn with_overrides(
        tape: &'a mut Tape,
        store: &'a ParamStore,
        mode: Mode,
        overrides: &[Var],
    ) -> Result<Self> {
        let ids = store.trainable_ids();
        if ids.len() != overrides.len() {
            return Err(Error::Shape(format!(
                "{} overrides for {} trainable tensors",
                overrides.len(),
                ids.len()
            )));
        }
        let mut ctx = Self::new(tape, store, mode);
        for (&id, v) in ids.iter().zip(overrides) {
            if v.shape() != store.entries[id].value.shape() {
                return Err(Error::Shape(format!(
                    "override for `{}` has the wrong shape",
                    store.entries[id].name
                )));
            }
            ctx.vars[id] = Some(v.clone());
        }
        Ok(ctx)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        if let Some(v) = &self.vars[id] {
            return Ok(v.clone());
        }
        let p = &self.store.entries[id];
        let v = if p.trainable {
            self.tape.leaf(p.value.clone())
        } else {
            self.tape.constant(p.value.clone())
        };
        self.vars[id] = Some(v.clone());
        Ok(v)
    }

    /// Batch norm over the layer `prefix`, in the context's mode.
    pub fn batch_norm(&mut self, prefix: &str, x: &Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = self
                    .tape
                    .batch_norm(x, &gamma, &beta, BnMode::Train, BN_EPS)?;
                self.stats.extend(stats.map(|s| (prefix.to_string(), s)));
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.store.get(&format!("{prefix}.running_mean"))?.data();
                let var = self.store.get(&format!("{prefix}.running_var"))?.data();
                Ok(self
                    .tape
                    .batch_norm(x, &gamma, &beta, BnMode::Eval { mean, var }, BN_EPS)?
                    .0)
            }
        }
    }

    /// Gradient of `loss` for every trainable tensor, in store order; tensors
    /// the loss does not reach get zeros.
    pub fn trainable_grads(&self, loss: &Var) -> Result<Vec<Vec<f64>>> {
        let grads = self.tape.backward(loss)?;
        Ok(self
            .store
            .trainable_ids()
            .into_iter()
            .map(|id| match &self.vars[id] {
                Some(v) => grads.get_or_zero(v),
                None => vec![0.0; self.store.entries[id].value.numel()],
            })
            .collect())
    }

    /// Batch statistics observed in train mode, keyed by layer prefix.
    pub fn take_stats(&mut self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.stats)
    }
}
