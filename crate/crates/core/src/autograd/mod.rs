//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value, its input
//! references and a backward rule. [`Tape::backward`] walks the nodes in
//! reverse recording order, so each node is visited exactly once and input
//! gradients are accumulated by summation.

mod conv;
mod norm;
mod ops;
mod temporal;

pub use conv::ConvGeometry;
pub use norm::{BatchNormStats, BN_EPS, BN_MOMENTUM};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of one recorded operation.
pub(crate) trait BackwardRule {
    fn name(&self) -> &'static str;

    /// Gradients for each input, in recording order. `needs[i]` is false when
    /// input `i` does not require a gradient; the rule may return `None` there.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f32],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<f32>>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    rule: Option<Box<dyn BackwardRule>>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

/// Summary of one backward sweep.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackwardReport {
    /// Recorded (non-leaf) nodes whose rule ran.
    pub visited: usize,
    pub visit_order: Vec<usize>,
}

#[derive(Default)]
enum MaskLog {
    #[default]
    Off,
    Record(Vec<Vec<bool>>),
    Replay(Vec<Vec<bool>>, usize),
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    masks: MaskLog,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Name of the operation that produced `v`; `None` for leaves.
    pub fn op_name(&self, v: Var) -> Option<&'static str> {
        self.nodes[v.0].rule.as_ref().map(|r| r.name())
    }

    /// Start logging the active set of every subsequent [`Tape::relu`].
    pub fn record_relu_masks(&mut self) {
        self.masks = MaskLog::Record(Vec::new());
    }

    /// The logged masks, in recording order; stops logging.
    pub fn take_relu_masks(&mut self) -> Vec<Vec<bool>> {
        match std::mem::take(&mut self.masks) {
            MaskLog::Record(m) | MaskLog::Replay(m, _) => m,
            MaskLog::Off => Vec::new(),
        }
    }

    /// Make subsequent rectifiers reuse `masks` in order, so the tape evaluates
    /// the piecewise-linear region the masks were recorded in. Used by
    /// finite-difference checks, where a perturbation may otherwise cross a kink.
    pub fn replay_relu_masks(&mut self, masks: Vec<Vec<bool>>) {
        self.masks = MaskLog::Replay(masks, 0);
    }

    pub(crate) fn next_replayed_mask(&mut self, len: usize) -> Option<Vec<bool>> {
        match &mut self.masks {
            MaskLog::Replay(masks, next) => {
                let m = masks.get(*next).filter(|m| m.len() == len).cloned();
                *next += 1;
                m
            }
            _ => None,
        }
    }

    pub(crate) fn log_mask(&mut self, mask: &[bool]) {
        if let MaskLog::Record(log) = &mut self.masks {
            log.push(mask.to_vec());
        }
    }

    /// The leaf value with its gradient attached.
    pub fn take_with_grad(&mut self, v: Var) -> Tensor {
        let node = &mut self.nodes[v.0];
        let mut t = node.value.clone();
        if let Some(g) = node.grad.take() {
            t.set_grad(g).expect("grad shape matches value");
        }
        t
    }

    pub(crate) fn record(&mut self, inputs: Vec<Var>, value: Tensor, rule: Box<dyn BackwardRule>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs,
            rule: Some(rule),
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagate `d loss / d node` to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardReport> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        let mut report = BackwardReport::default();
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            if self.nodes[i].rule.is_none() {
                self.nodes[i].grad = Some(grad);
                continue;
            }
            let needs: Vec<bool> = self.nodes[i]
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = {
                let node = &self.nodes[i];
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let rule = node.rule.as_ref().expect("checked above");
                rule.backward(&inputs, &node.value, &grad, &needs)?
            };
            report.visited += 1;
            report.visit_order.push(i);
            let inputs = self.nodes[i].inputs.clone();
            for ((var, g), need) in inputs.into_iter().zip(input_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                let target = &mut self.nodes[var.0];
                debug_assert_eq!(g.len(), target.value.len());
                match &mut target.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            self.nodes[i].grad = Some(grad);
        }
        Ok(report)
    }
}
