use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::params::{Ctx, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How pairwise attention logits are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreFn {
    /// `leaky_relu(sum_k psi_k * theta_ik * phi_jk)`.
    #[default]
    DotProduct,
    /// `sum_k psi_k * |theta_ik - phi_jk|`.
    FeatureDifference,
}

impl FromStr for ScoreFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot-product" => Ok(ScoreFn::DotProduct),
            "feature-difference" => Ok(ScoreFn::FeatureDifference),
            other => Err(Error::Config(format!(
                "score: expected dot-product or feature-difference, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for ScoreFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreFn::DotProduct => "dot-product",
            ScoreFn::FeatureDifference => "feature-difference",
        })
    }
}

/// Parameters of one attention layer: linear maps `theta`, `phi: d -> de`,
/// `psi: [de]` and `xi: d -> d'`.
#[derive(Debug, Clone)]
pub struct GatParams {
    pub theta: Var,
    pub phi: Var,
    pub psi: Var,
    pub xi: Var,
}

impl GatParams {
    /// Registers a width-preserving layer (`de = d' = d`) under `prefix`.
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Result<()> {
        store.init_weight(&format!("{prefix}.theta"), &[d, d], d, rng)?;
        store.init_weight(&format!("{prefix}.phi"), &[d, d], d, rng)?;
        store.init_weight(&format!("{prefix}.psi"), &[d], d, rng)?;
        store.init_weight(&format!("{prefix}.xi"), &[d, d], d, rng)?;
        Ok(())
    }

    pub fn bind(ctx: &mut Ctx<'_>, prefix: &str) -> Result<Self> {
        let mut p = |s: &str| ctx.param(&format!("{prefix}.{s}"));
        Ok(Self {
            theta: p("theta")?,
            phi: p("phi")?,
            psi: p("psi")?,
            xi: p("xi")?,
        })
    }
}

/// Row-stochastic attention `[B, N, N]` over a dense node graph.
pub fn gat_scores(
    tape: &mut Tape,
    h: &Var,
    p: &GatParams,
    score: ScoreFn,
    slope: f64,
) -> Result<Var> {
    let theta = tape.linear(h, &p.theta, None)?;
    let phi = tape.linear(h, &p.phi, None)?;
    let e = match score {
        ScoreFn::DotProduct => {
            let weighted = tape.mul_last(&theta, &p.psi)?;
            let e = tape.bmm(&weighted, &phi, true)?;
            tape.leaky_relu(&e, slope)?
        }
        ScoreFn::FeatureDifference => tape.pairwise_abs_diff(&theta, &phi, &p.psi)?,
    };
    tape.softmax(&e)
}

/// `h'_i = leaky_relu(sum_j alpha_ij * xi(h_j))`.
pub fn gat_aggregate(
    tape: &mut Tape,
    h: &Var,
    alpha: &Var,
    p: &GatParams,
    slope: f64,
) -> Result<Var> {
    let x = tape.linear(h, &p.xi, None)?;
    let y = tape.bmm(alpha, &x, false)?;
    tape.leaky_relu(&y, slope)
}

pub fn gat_layer(
    tape: &mut Tape,
    h: &Var,
    p: &GatParams,
    score: ScoreFn,
    slope: f64,
) -> Result<Var> {
    let alpha = gat_scores(tape, h, p, score, slope)?;
    gat_aggregate(tape, h, &alpha, p, slope)
}

/// Two stacked attention layers with independent parameters.
pub fn gat_block(
    tape: &mut Tape,
    h: &Var,
    first: &GatParams,
    second: &GatParams,
    score: ScoreFn,
    slope: f64,
) -> Result<Var> {
    let y = gat_layer(tape, h, first, score, slope)?;
    gat_layer(tape, &y, second, score, slope)
}

/// `D^-1/2 (A + I) D^-1/2` for the 8-neighbour lattice of a `side x side`
/// patch, shaped `[N, N]` with node `r * side + c`.
pub fn lattice_operator(side: usize) -> Tensor {
    let n = side * side;
    let mut a = vec![0.0; n * n];
    for r in 0..side {
        for c in 0..side {
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < side && (cc as usize) < side {
                        a[(r * side + c) * n + rr as usize * side + cc as usize] = 1.0;
                    }
                }
            }
        }
    }
    let deg: Vec<f64> = a.chunks(n).map(|row| row.iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    Tensor::from_parts(vec![n, n], a)
}

/// `leaky_relu(Ahat . h . W)` with the fixed lattice operator `Ahat: [1, N, N]`
/// shared across the batch and `w: [d', d]`.
pub fn gcn_layer(tape: &mut Tape, h: &Var, operator: &Var, w: &Var, slope: f64) -> Result<Var> {
    let hw = tape.linear(h, w, None)?;
    let y = tape.bmm(operator, &hw, false)?;
    tape.leaky_relu(&y, slope)
}

/// Side length of a square patch with `n` nodes.
pub fn patch_side(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || side % 2 == 0 {
        return Err(Error::Config(format!(
            "patch: {n} nodes is not an odd square patch"
        )));
    }
    Ok(side)
}
