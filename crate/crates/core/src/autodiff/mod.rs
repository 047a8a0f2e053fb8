//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records each primitive application as a node holding its
//! input node ids and a backward rule. [`Var`] is a cheap handle: the
//! forward value (shared) plus the node id when gradients are tracked.
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and [`Tape::backward`] is one reverse sweep.

mod ops;

use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub use ops::{BatchStats, BnMode};

use crate::error::{Error, Result};
use crate::tensor::{check_finite, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule: given the output gradient and which inputs need a
/// gradient, returns one optional gradient per input.
type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
    name: &'static str,
}

/// Handle to a value produced on (or registered with) a [`Tape`].
#[derive(Clone)]
pub struct Var {
    value: Rc<Tensor>,
    node: Option<usize>,
    tape: u64,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    /// True when a gradient flows to this value on backward.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("node", &self.node)
            .finish()
    }
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records nothing: every op returns an untracked value and
    /// intermediates are freed as soon as their handles drop.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let node = self.grad_enabled.then(|| {
            self.nodes.push(Node {
                inputs: Vec::new(),
                backward: None,
                name: "leaf",
            });
            self.nodes.len() - 1
        });
        Var {
            value: Rc::new(value),
            node,
            tape: self.id,
        }
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        Var {
            value: Rc::new(value),
            node: None,
            tape: self.id,
        }
    }

    fn check_owned(&self, vars: &[&Var]) -> Result<()> {
        match vars.iter().find(|v| v.tape != self.id) {
            Some(_) => Err(Error::Tape("value was recorded on a different tape".into())),
            None => Ok(()),
        }
    }

    /// Appends a primitive application. The output is validated for
    /// finiteness; the node is only stored when some input is tracked.
    fn record<F>(
        &mut self,
        name: &'static str,
        out: Tensor,
        inputs: &[&Var],
        backward: F,
    ) -> Result<Var>
    where
        F: Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        self.check_owned(inputs)?;
        check_finite(name, out.data())?;
        let tracked = self.grad_enabled && inputs.iter().any(|v| v.node.is_some());
        let node = tracked.then(|| {
            self.nodes.push(Node {
                inputs: inputs.iter().map(|v| v.node).collect(),
                backward: Some(Box::new(backward)),
                name,
            });
            self.nodes.len() - 1
        });
        Ok(Var {
            value: Rc::new(out),
            node,
            tape: self.id,
        })
    }

    /// Reverse sweep from a scalar `loss`. Gradients meeting at fan-out
    /// points are summed; each node is visited once.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.tape != self.id {
            return Err(Error::Tape("loss was not recorded on this tape".into()));
        }
        let Some(root) = loss.node else {
            return Err(Error::Tape(
                "loss is not on the tape (no tracked input reaches it)".into(),
            ));
        };
        if loss.value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &needs);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(j), Some(ig)) = (input, ig) else {
                    continue;
                };
                check_finite(node.name, &ig)
                    .map_err(|e| Error::Numeric(format!("backward of {e}")))?;
                match &mut grads[*j] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Gradients of a loss with respect to the leaves of a tape.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: &Var) -> Option<&[f64]> {
        if var.tape != self.tape {
            return None;
        }
        var.node.and_then(|n| self.grads[n].as_deref())
    }

    /// Like [`Gradients::get`] but materializes zeros for unreached values.
    pub fn get_or_zero(&self, var: &Var) -> Vec<f64> {
        self.get(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; var.value.numel()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 5.0]));
        let loss = tape.sum(&x).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gives_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn fan_out_gradients_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[3.0, 4.0]));
        let a = tape.scale(&x, 2.0).unwrap();
        let b = tape.scale(&x, 5.0).unwrap();
        let c = tape.add(&a, &b).unwrap();
        let loss = tape.sum(&c).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap(), &[7.0, 7.0]);
    }

    #[test]
    fn foreign_or_untracked_loss_is_a_tape_error() {
        let mut other = Tape::new();
        let y = other.leaf(t(&[1], &[1.0]));
        let tape = Tape::new();
        assert!(matches!(tape.backward(&y), Err(Error::Tape(_))));
        let c = tape.constant(t(&[1], &[1.0]));
        assert!(matches!(tape.backward(&c), Err(Error::Tape(_))));
    }

    #[test]
    fn mixing_tapes_is_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(t(&[1], &[1.0]));
        let y = b.leaf(t(&[1], &[1.0]));
        assert!(matches!(a.add(&x, &y), Err(Error::Tape(_))));
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let mut tape = Tape::no_grad();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let y = tape.mul(&x, &x).unwrap();
        assert!(!y.requires_grad());
        assert!(tape.is_empty());
        assert_eq!(y.data(), &[1.0, 4.0]);
    }
}
