use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{BlockSpec, ConvShape, HeadKind, NetworkSpec, PathStep, TEMPORAL_KERNEL};
use crate::autograd::{BatchNormStats, Tape, Var};
use crate::error::{Error, Result};
use crate::temporal::TfcKernel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamInit {
    /// Uniform in `±sqrt(1 / fan_in)`.
    FanIn(usize),
    Const(f32),
    /// `I_T + 0.01·N(0, 1)` per output channel.
    NearIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Conv,
    TemporalConv,
    Tfc,
    Rdw,
    BnScale,
    BnShift,
    FcWeight,
    FcBias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub init: ParamInit,
}

impl ParamDecl {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every parameter tensor of `spec`, in the order [`Network::forward`] consumes them,
/// plus the batch-norm layers (name, channels).
pub fn param_layout(spec: &NetworkSpec) -> (Vec<ParamDecl>, Vec<(String, usize)>) {
    let mut params = Vec::new();
    let mut bns = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, role, init| {
        params.push(ParamDecl {
            name,
            shape,
            role,
            init,
        })
    };
    let mut conv_bn = |push: &mut dyn FnMut(String, Vec<usize>, ParamRole, ParamInit),
                       prefix: &str,
                       shape: ConvShape,
                       tfc: Option<usize>| {
        let fan_in = shape.c_in * shape.kt * shape.kh * shape.kh;
        if shape.is_temporal() {
            push(
                format!("{prefix}.weight"),
                vec![shape.c_out, shape.c_in, shape.kt],
                ParamRole::TemporalConv,
                ParamInit::FanIn(fan_in),
            );
        } else {
            push(
                format!("{prefix}.weight"),
                shape.weight_shape().to_vec(),
                ParamRole::Conv,
                ParamInit::FanIn(fan_in),
            );
        }
        if let Some(t) = tfc {
            push(
                format!("{prefix}.tfc"),
                vec![shape.c_out, t, t],
                ParamRole::Tfc,
                ParamInit::NearIdentity,
            );
        }
        push(
            format!("{prefix}.bn.gamma"),
            vec![shape.c_out],
            ParamRole::BnScale,
            ParamInit::Const(1.0),
        );
        push(
            format!("{prefix}.bn.beta"),
            vec![shape.c_out],
            ParamRole::BnShift,
            ParamInit::Const(0.0),
        );
        bns.push((format!("{prefix}.bn"), shape.c_out));
    };

    conv_bn(&mut push, "stem", spec.stem.conv(), None);
    for (si, stage) in spec.stages.iter().enumerate() {
        for (bi, block) in stage.blocks.iter().enumerate() {
            let base = format!("s{si}.b{bi}");
            let (mut nconv, mut nrdw) = (0, 0);
            for (k, step) in block.path().into_iter().enumerate() {
                match step {
                    PathStep::Conv { shape, .. } => {
                        nconv += 1;
                        let tfc = (k == 0 && block.tfc).then_some(spec.temporal_length);
                        conv_bn(&mut push, &format!("{base}.conv{nconv}"), shape, tfc);
                    }
                    PathStep::Rdw { channels } => {
                        nrdw += 1;
                        push(
                            format!("{base}.rdw{nrdw}"),
                            vec![channels, TEMPORAL_KERNEL],
                            ParamRole::Rdw,
                            ParamInit::Const(0.0),
                        );
                    }
                }
            }
            if let Some(shape) = block.projection() {
                conv_bn(&mut push, &format!("{base}.proj"), shape, None);
            }
        }
    }
    let c = spec.feature_channels();
    push(
        "fc.weight".into(),
        vec![spec.num_classes, c],
        ParamRole::FcWeight,
        ParamInit::FanIn(c),
    );
    push(
        "fc.bias".into(),
        vec![spec.num_classes],
        ParamRole::FcBias,
        ParamInit::FanIn(c),
    );
    (params, bns)
}

fn init_tensor<R: Rng + ?Sized>(decl: &ParamDecl, rng: &mut R) -> Tensor {
    match decl.init {
        ParamInit::FanIn(fan_in) => {
            let bound = (1.0 / fan_in as f64).sqrt() as f32;
            Tensor::from_fn(&decl.shape, |_| rng.gen_range(-bound..=bound))
        }
        ParamInit::Const(v) => Tensor::full(&decl.shape, v),
        ParamInit::NearIdentity => TfcKernel::near_identity(decl.shape[0], decl.shape[1], rng)
            .weights()
            .clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, parameters receive gradients.
    Train,
    /// Running statistics; parameters are constants on the tape.
    Eval,
}

/// Result of recording one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Var,
    /// One tape node per parameter, in [`Network::params`] order.
    pub params: Vec<Var>,
}

/// A built network: its spec, parameter tensors and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    decls: Vec<ParamDecl>,
    params: Vec<Tensor>,
    bn_names: Vec<String>,
    bn: Vec<BatchNormStats>,
}

struct Cursor<'a> {
    tape: &'a mut Tape,
    vars: &'a [Var],
    bn: &'a mut [BatchNormStats],
    next_param: usize,
    next_bn: usize,
    training: bool,
}

impl Cursor<'_> {
    fn take(&mut self) -> Result<Var> {
        let i = self.next_param;
        if i >= self.vars.len() {
            return Err(Error::IncompatibleCheckpoint(
                "network has fewer parameters than its spec".into(),
            ));
        }
        self.next_param += 1;
        Ok(self.vars[i])
    }

    fn conv_bn(&mut self, x: Var, shape: ConvShape, branch_input: Option<Var>, relu: bool) -> Result<Var> {
        let w = self.take()?;
        let mut y = if shape.is_temporal() {
            self.tape.temporal_conv(x, w)?
        } else {
            self.tape.conv3d(x, w, shape.stride)?
        };
        if let Some(src) = branch_input {
            let tw = self.take()?;
            let sub = self.tape.subsample_spatial(src, shape.stride)?;
            let branch = self.tape.tfc(sub, tw)?;
            y = self.tape.add(y, branch)?;
        }
        let gamma = self.take()?;
        let beta = self.take()?;
        let stats = self
            .bn
            .get_mut(self.next_bn)
            .ok_or_else(|| Error::IncompatibleCheckpoint("missing batch-norm statistics".into()))?;
        self.next_bn += 1;
        let y = self.tape.batch_norm(y, gamma, beta, stats, self.training)?;
        Ok(if relu { self.tape.relu(y) } else { y })
    }

    fn block(&mut self, x: Var, block: &BlockSpec) -> Result<Var> {
        let mut h = x;
        for (k, step) in block.path().into_iter().enumerate() {
            h = match step {
                PathStep::Conv { shape, relu } => {
                    let branch = (k == 0 && block.tfc).then_some(x);
                    self.conv_bn(h, shape, branch, relu)?
                }
                PathStep::Rdw { .. } => {
                    let w = self.take()?;
                    self.tape.rdw(h, w)?
                }
            };
        }
        let skip = match block.projection() {
            Some(shape) => self.conv_bn(x, shape, None, false)?,
            None => x,
        };
        let sum = self.tape.add(h, skip)?;
        Ok(self.tape.relu(sum))
    }
}

impl Network {
    /// Build with freshly initialized parameters.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (decls, bns) = param_layout(&spec);
        let params = decls.iter().map(|d| init_tensor(d, rng)).collect();
        Ok(Self {
            spec,
            decls,
            params,
            bn_names: bns.iter().map(|(n, _)| n.clone()).collect(),
            bn: bns.iter().map(|&(_, c)| BatchNormStats::new(c)).collect(),
        })
    }

    /// Assemble from stored tensors, checking every shape against the spec.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor>, bn: Vec<BatchNormStats>) -> Result<Self> {
        spec.validate()?;
        let (decls, bns) = param_layout(&spec);
        if params.len() != decls.len() || bn.len() != bns.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "spec needs {} parameter tensors and {} batch-norm layers, got {} and {}",
                decls.len(),
                bns.len(),
                params.len(),
                bn.len()
            )));
        }
        for (d, p) in decls.iter().zip(&params) {
            if d.shape != p.shape() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{} has shape {:?}, spec needs {:?}",
                    d.name,
                    p.shape(),
                    d.shape
                )));
            }
        }
        for ((name, c), s) in bns.iter().zip(&bn) {
            if s.mean.len() != *c || s.var.len() != *c {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{name} statistics do not have {c} channels"
                )));
            }
        }
        Ok(Self {
            spec,
            decls,
            params,
            bn_names: bns.into_iter().map(|(n, _)| n).collect(),
            bn,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn decls(&self) -> &[ParamDecl] {
        &self.decls
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.decls.iter().position(|d| d.name == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.decls
            .iter()
            .position(|d| d.name == name)
            .map(|i| &mut self.params[i])
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn bn_stats(&self) -> &[BatchNormStats] {
        &self.bn
    }

    /// Total number of scalar parameters (batch-norm scale and shift included).
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Zero every TFC kernel, reducing each TFC block to its base block.
    pub fn zero_tfc_kernels(&mut self) {
        for (d, p) in self.decls.iter().zip(&mut self.params) {
            if d.role == super::ParamRole::Tfc {
                p.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Record a forward pass of `input` (B, C, T, H, W) on `tape`.
    pub fn forward(&mut self, tape: &mut Tape, input: Var, mode: Mode) -> Result<ForwardPass> {
        let training = mode == Mode::Train;
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if training {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        let logits = self.forward_with(tape, input, &vars, training)?;
        Ok(ForwardPass { logits, params: vars })
    }

    /// Forward pass using caller-provided parameter nodes (one per [`Network::params`] entry).
    /// `training` selects batch statistics and updates the running statistics.
    pub fn forward_with(&mut self, tape: &mut Tape, input: Var, vars: &[Var], training: bool) -> Result<Var> {
        let (_, c, t, _, _) = tape.value(input).dims5()?;
        if c != self.spec.stem.c_in {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {c}",
                self.spec.stem.c_in
            )));
        }
        if t != self.spec.temporal_length {
            return Err(Error::TemporalLength {
                expected: self.spec.temporal_length,
                actual: t,
            });
        }
        if vars.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "{} parameter nodes for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        let mut cur = Cursor {
            tape,
            vars,
            bn: &mut self.bn,
            next_param: 0,
            next_bn: 0,
            training,
        };
        let mut h = cur.conv_bn(input, self.spec.stem.conv(), None, true)?;
        if self.spec.stem.max_pool {
            h = cur.tape.max_pool_spatial(h)?;
        }
        for block in self.spec.stages.iter().flat_map(|s| &s.blocks) {
            h = cur.block(h, block)?;
        }
        let (w, b) = (cur.take()?, cur.take()?);
        let logits = match self.spec.head {
            HeadKind::GlobalPool => {
                let pooled = cur.tape.global_avg_pool_3d(h)?;
                cur.tape.linear(pooled, w, Some(b))?
            }
            HeadKind::FrameScores => {
                let frames = cur.tape.frame_avg_pool(h)?;
                let scores = cur.tape.linear(frames, w, Some(b))?;
                cur.tape.segment_mean(scores, t)?
            }
        };
        if cur.next_param != vars.len() || cur.next_bn != cur.bn.len() {
            return Err(Error::IncompatibleCheckpoint(
                "network has more parameters than its spec uses".into(),
            ));
        }
        Ok(logits)
    }

    /// Eval-mode logits for a batch.
    pub fn predict(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let pass = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(pass.logits).clone())
    }
}
