use rand::Rng;

use super::graph::patch_side;
use super::params::{Ctx, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// One gate per adjacent level pair: `linear(2d -> d)` then sigmoid.
#[derive(Debug, Clone)]
pub struct GateParams {
    pub w: Var,
    pub b: Var,
}

impl GateParams {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Result<()> {
        store.init_weight(&format!("{prefix}.w"), &[d, 2 * d], 2 * d, rng)?;
        store.init_zeros(&format!("{prefix}.b"), d)?;
        Ok(())
    }

    pub fn bind(ctx: &mut Ctx<'_>, prefix: &str) -> Result<Self> {
        Ok(Self {
            w: ctx.param(&format!("{prefix}.w"))?,
            b: ctx.param(&format!("{prefix}.b"))?,
        })
    }
}

fn same_shapes(op: &str, stack: &[Var]) -> Result<()> {
    let first = stack
        .first()
        .ok_or_else(|| Error::Shape(format!("{op}: empty stream stack")))?;
    if let Some(bad) = stack.iter().find(|s| s.shape() != first.shape()) {
        return Err(Error::Shape(format!(
            "{op}: stream shapes {:?} and {:?} differ",
            first.shape(),
            bad.shape()
        )));
    }
    Ok(())
}

/// Per-channel gate between a level and the running merge:
/// `sigmoid(W [mean_N(upper); mean_N(merged)] + b)`, shaped `[B, d]`.
pub fn level_gate(tape: &mut Tape, upper: &Var, merged: &Var, gate: &GateParams) -> Result<Var> {
    let a = tape.mean_nodes(upper)?;
    let b = tape.mean_nodes(merged)?;
    let z = tape.concat_last(&a, &b)?;
    let z = tape.linear(&z, &gate.w, Some(&gate.b))?;
    tape.sigmoid(&z)
}

/// Folds streams (finest first) from the coarsest level upward:
/// `m <- g * f + (1 - g) * m`, with `gates[k]` merging level `k` into the
/// fold of levels `k+1..`.
pub fn spectral_attention_merge(
    tape: &mut Tape,
    stack: &[Var],
    gates: &[GateParams],
) -> Result<Var> {
    same_shapes("spectral_attention_merge", stack)?;
    if gates.len() + 1 != stack.len() {
        return Err(Error::Shape(format!(
            "spectral_attention_merge: {} streams need {} gates, got {}",
            stack.len(),
            stack.len() - 1,
            gates.len()
        )));
    }
    let mut merged = stack[stack.len() - 1].clone();
    for k in (0..stack.len() - 1).rev() {
        let g = level_gate(tape, &stack[k], &merged, &gates[k])?;
        merged = tape.gate_mix(&g, &stack[k], &merged)?;
    }
    Ok(merged)
}

/// Elementwise mean of the streams.
pub fn average_merge(tape: &mut Tape, stack: &[Var]) -> Result<Var> {
    same_shapes("average_merge", stack)?;
    if stack.len() == 1 {
        return Ok(stack[0].clone());
    }
    let mut sum = stack[0].clone();
    for s in &stack[1..] {
        sum = tape.add(&sum, s)?;
    }
    tape.scale(&sum, 1.0 / stack.len() as f64)
}

/// Logits of the center node: `linear(merged[:, (N - 1) / 2, :])`.
pub fn classify_center(tape: &mut Tape, merged: &Var, w: &Var, b: &Var) -> Result<Var> {
    let n = *merged.shape().get(1).ok_or_else(|| {
        Error::Shape(format!(
            "classify_center: need [B, N, d], got {:?}",
            merged.shape()
        ))
    })?;
    patch_side(n)?;
    let center = tape.select_node(merged, (n - 1) / 2)?;
    tape.linear(&center, w, Some(b))
}
