//! Define-by-run reverse-mode autodiff over NCHW tensors.
//!
//! Builder calls execute eagerly and record a node; [`Graph::replay`]
//! re-executes the recorded topology against updated inputs or parameters,
//! which is what both the training loop and the finite-difference gradient
//! check rely on. Nodes are stored in execution order, so the stored order
//! is a valid topological order by construction.

use crate::error::{Error, Result};
use crate::kernels::{batch_stats, bn_normalize, conv2d_backward, conv2d_forward, ConvSpec, Mode};
use crate::loss;
use crate::tensor::{DType, Element, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BnId(pub usize);

/// Running statistics of one graph batch-norm layer. Scale and shift live in
/// the parameter store so they receive gradients.
#[derive(Debug, Clone)]
pub struct BnState<E: Element> {
    pub running_mean: Vec<E>,
    pub running_var: Vec<E>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
pub enum Op {
    Input,
    Conv2d {
        spec: ConvSpec,
        groups: usize,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    BatchNorm {
        state: BnId,
        gamma: ParamId,
        beta: ParamId,
    },
    Relu,
    Add,
    ConcatChannels,
    Sum,
    LossMae,
    LossGrad,
    LossNormal,
    WeightedSum {
        weights: Vec<f64>,
    },
}

struct Node<E: Element> {
    op: Op,
    inputs: Vec<NodeId>,
    out: Tensor<E>,
    /// Batch statistics captured by the last training-mode forward.
    bn_cache: Option<(Vec<E>, Vec<E>)>,
}

struct Param<E: Element> {
    name: String,
    value: Tensor<E>,
}

pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
    params: Vec<Param<E>>,
    bns: Vec<BnState<E>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            bns: Vec::new(),
        }
    }

    // ---- construction ----------------------------------------------------

    pub fn input(&mut self, tensor: Tensor<E>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            inputs: Vec::new(),
            out: tensor,
            bn_cache: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn parameter(&mut self, name: impl Into<String>, value: Tensor<E>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn bn_state(&mut self, channels: usize, momentum: f64, epsilon: f64) -> BnId {
        self.bns.push(BnState {
            running_mean: vec![E::ZERO; channels],
            running_var: vec![E::ONE; channels],
            momentum,
            epsilon,
            mode: Mode::Training,
        });
        BnId(self.bns.len() - 1)
    }

    fn add_node(&mut self, op: Op, inputs: Vec<NodeId>) -> Result<NodeId> {
        for id in &inputs {
            if id.0 >= self.nodes.len() {
                return Err(Error::IndexOutOfRange(format!("node {}", id.0)));
            }
        }
        self.nodes.push(Node {
            op,
            inputs,
            out: Tensor::scalar(E::ZERO),
            bn_cache: None,
        });
        let idx = self.nodes.len() - 1;
        match self.execute(idx) {
            Ok(()) => Ok(NodeId(idx)),
            Err(e) => {
                self.nodes.pop();
                Err(e)
            }
        }
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        self.add_node(
            Op::Conv2d {
                spec,
                groups: 1,
                weight,
                bias,
            },
            vec![input],
        )
    }

    /// Grouped convolution; `groups == in_channels` is a depthwise layer.
    pub fn conv2d_grouped(
        &mut self,
        input: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
        spec: ConvSpec,
        groups: usize,
    ) -> Result<NodeId> {
        self.add_node(
            Op::Conv2d {
                spec,
                groups,
                weight,
                bias,
            },
            vec![input],
        )
    }

    pub fn batch_norm(&mut self, input: NodeId, state: BnId, gamma: ParamId, beta: ParamId) -> Result<NodeId> {
        self.add_node(Op::BatchNorm { state, gamma, beta }, vec![input])
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.add_node(Op::Relu, vec![input])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.add_node(Op::Add, vec![a, b])
    }

    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        self.add_node(Op::ConcatChannels, inputs.to_vec())
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        self.add_node(Op::Sum, vec![input])
    }

    /// Mean absolute error between prediction and target. The target input is
    /// treated as a constant; gradients flow into the prediction only.
    pub fn loss_mae(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.add_node(Op::LossMae, vec![pred, target])
    }

    pub fn loss_grad(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.add_node(Op::LossGrad, vec![pred, target])
    }

    pub fn loss_normal(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.add_node(Op::LossNormal, vec![pred, target])
    }

    pub fn weighted_sum(&mut self, inputs: &[NodeId], weights: &[f64]) -> Result<NodeId> {
        if inputs.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "weighted_sum: {} inputs vs {} weights",
                inputs.len(),
                weights.len()
            )));
        }
        self.add_node(
            Op::WeightedSum {
                weights: weights.to_vec(),
            },
            inputs.to_vec(),
        )
    }

    // ---- access ------------------------------------------------------------

    pub fn out(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].out
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn node_inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn param(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0].value
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.params[id.0].value
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Total number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    pub fn bn(&self, id: BnId) -> &BnState<E> {
        &self.bns[id.0]
    }

    pub fn bn_mut(&mut self, id: BnId) -> &mut BnState<E> {
        &mut self.bns[id.0]
    }

    pub fn bn_count(&self) -> usize {
        self.bns.len()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for bn in &mut self.bns {
            bn.mode = mode;
        }
    }

    pub fn set_input(&mut self, id: NodeId, tensor: Tensor<E>) -> Result<()> {
        if !matches!(self.nodes[id.0].op, Op::Input) {
            return Err(Error::InvalidConfig(format!(
                "node {} is not an input",
                id.0
            )));
        }
        self.nodes[id.0].out = tensor;
        Ok(())
    }

    // ---- execution -----------------------------------------------------

    /// Re-run every node against the current inputs and parameters.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            self.execute(i)?;
        }
        Ok(())
    }

    /// Re-run the prefix of the tape up to and including `last`.
    pub fn replay_until(&mut self, last: NodeId) -> Result<()> {
        for i in 0..=last.0 {
            self.execute(i)?;
        }
        Ok(())
    }

    fn execute(&mut self, idx: usize) -> Result<()> {
        if matches!(self.nodes[idx].op, Op::Input) {
            return Ok(());
        }
        let (out, bn_update) = self.compute(idx)?;
        if let Some((bn_id, mean, var)) = bn_update {
            let bn = &mut self.bns[bn_id.0];
            let mom = E::from_f64(bn.momentum);
            let keep = E::from_f64(1.0 - bn.momentum);
            for c in 0..mean.len() {
                bn.running_mean[c] = keep * bn.running_mean[c] + mom * mean[c];
                bn.running_var[c] = keep * bn.running_var[c] + mom * var[c];
            }
            self.nodes[idx].bn_cache = Some((mean, var));
        }
        self.nodes[idx].out = out;
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn compute(&self, idx: usize) -> Result<(Tensor<E>, Option<(BnId, Vec<E>, Vec<E>)>)> {
        let node = &self.nodes[idx];
        let arg = |k: usize| &self.nodes[node.inputs[k].0].out;
        match &node.op {
            Op::Input => unreachable!("inputs are not executed"),
            Op::Conv2d {
                spec,
                groups,
                weight,
                bias,
            } => {
                let bias_slice = bias.map(|b| self.params[b.0].value.data());
                let out = conv2d_forward(arg(0), &self.params[weight.0].value, bias_slice, spec, *groups)?;
                Ok((out, None))
            }
            Op::BatchNorm { state, gamma, beta } => {
                let input = arg(0);
                let bn = &self.bns[state.0];
                let g = self.params[gamma.0].value.data();
                let b = self.params[beta.0].value.data();
                if input.shape().c != g.len() {
                    return Err(Error::ChannelMismatch {
                        context: "batch_norm".into(),
                        expected: g.len(),
                        actual: input.shape().c,
                    });
                }
                match bn.mode {
                    Mode::Training => {
                        let m = input.shape().n * input.shape().plane();
                        if m < 2 {
                            return Err(Error::BatchTooSmall(m));
                        }
                        let (mean, var) = batch_stats(input);
                        let out = bn_normalize(input, g, b, &mean, &var, bn.epsilon);
                        Ok((out, Some((*state, mean, var))))
                    }
                    Mode::Inference => {
                        let out =
                            bn_normalize(input, g, b, &bn.running_mean, &bn.running_var, bn.epsilon);
                        Ok((out, None))
                    }
                }
            }
            Op::Relu => Ok((arg(0).map(|v| v.max_of(E::ZERO)), None)),
            Op::Add => {
                let (a, b) = (arg(0), arg(1));
                if a.shape() != b.shape() {
                    return Err(Error::ShapeMismatch {
                        context: "add".into(),
                        expected: a.shape().to_string(),
                        actual: b.shape().to_string(),
                    });
                }
                let mut out = a.clone();
                for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
                    *o += v;
                }
                Ok((out, None))
            }
            Op::ConcatChannels => {
                let first = arg(0).shape();
                let mut channels = 0;
                for k in 0..node.inputs.len() {
                    let s = arg(k).shape();
                    if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                        return Err(Error::ShapeMismatch {
                            context: "concat_channels".into(),
                            expected: format!("batch/extent {}x{}x{}", first.n, first.h, first.w),
                            actual: s.to_string(),
                        });
                    }
                    channels += s.c;
                }
                let out_shape = Shape::new(first.n, channels, first.h, first.w);
                let mut data = Vec::with_capacity(out_shape.count());
                for n in 0..first.n {
                    for k in 0..node.inputs.len() {
                        let t = arg(k);
                        for c in 0..t.shape().c {
                            data.extend_from_slice(t.plane(n, c));
                        }
                    }
                }
                Ok((Tensor::from_vec(out_shape, data)?, None))
            }
            Op::Sum => {
                let mut acc = E::ZERO;
                for &v in arg(0).data() {
                    acc += v;
                }
                Ok((Tensor::scalar(acc), None))
            }
            Op::LossMae | Op::LossGrad | Op::LossNormal => {
                let (pred, target) = (arg(0), arg(1));
                let value = self.loss_forward(&node.op, pred, target)?;
                Ok((Tensor::scalar(value), None))
            }
            Op::WeightedSum { weights } => {
                let mut acc = E::ZERO;
                for (k, w) in weights.iter().enumerate() {
                    let t = arg(k);
                    if !t.shape().is_scalar() {
                        return Err(Error::ShapeMismatch {
                            context: "weighted_sum".into(),
                            expected: "scalar inputs".into(),
                            actual: t.shape().to_string(),
                        });
                    }
                    acc += E::from_f64(*w) * t.data()[0];
                }
                Ok((Tensor::scalar(acc), None))
            }
        }
    }

    fn loss_forward(&self, op: &Op, pred: &Tensor<E>, target: &Tensor<E>) -> Result<E> {
        let (ps, ts) = (pred.shape(), target.shape());
        if ps != ts {
            return Err(Error::ShapeMismatch {
                context: "loss".into(),
                expected: ps.to_string(),
                actual: ts.to_string(),
            });
        }
        let needs_extent = !matches!(op, Op::LossMae);
        if needs_extent && (ps.h < 2 || ps.w < 2) {
            return Err(Error::ShapeMismatch {
                context: "loss gradient terms".into(),
                expected: "height and width >= 2".into(),
                actual: format!("{}x{}", ps.h, ps.w),
            });
        }
        let planes = ps.n * ps.c;
        let mut acc = E::ZERO;
        for n in 0..ps.n {
            for c in 0..ps.c {
                let d = pred.plane(n, c);
                let g = target.plane(n, c);
                acc += match op {
                    Op::LossMae => loss::mae_plane(d, g),
                    Op::LossGrad => loss::grad_plane(d, g, ps.h, ps.w),
                    Op::LossNormal => loss::normal_plane(d, g, ps.h, ps.w),
                    _ => unreachable!(),
                };
            }
        }
        Ok(acc / E::from_f64(planes as f64))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// parameter. Parameters the loss does not reach get zero gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<Vec<Tensor<E>>> {
        if !self.nodes[loss.0].out.shape().is_scalar() {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].out.shape().to_string()));
        }
        let mut param_grads: Vec<Tensor<E>> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        let mut node_grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        node_grads[loss.0] = Some(vec![E::ONE]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Conv2d {
                    spec,
                    groups,
                    weight,
                    bias,
                } => {
                    let input_id = node.inputs[0];
                    let input = &self.nodes[input_id.0].out;
                    let gout_t = Tensor::from_vec(
                        Shape::new(
                            input.shape().n,
                            spec.out_channels,
                            spec.out_extent(input.shape().h, input.shape().w)?,
                            spec.out_extent(input.shape().w, input.shape().h)?,
                        ),
                        gout,
                    )?;
                    let want_input = !matches!(self.nodes[input_id.0].op, Op::Input);
                    let mut spec_b = *spec;
                    spec_b.has_bias = bias.is_some();
                    let grads = conv2d_backward(
                        input,
                        &self.params[weight.0].value,
                        &spec_b,
                        *groups,
                        &gout_t,
                        want_input,
                    )?;
                    acc_slice(param_grads[weight.0].data_mut(), grads.weights.data());
                    if let (Some(b), Some(gb)) = (bias, grads.bias) {
                        acc_slice(param_grads[b.0].data_mut(), &gb);
                    }
                    if let Some(gin) = grads.input {
                        acc_node(&mut node_grads[input_id.0], gin.data());
                    }
                }
                Op::BatchNorm { state, gamma, beta } => {
                    let input_id = node.inputs[0];
                    let input = &self.nodes[input_id.0].out;
                    let bn = &self.bns[state.0];
                    let g = self.params[gamma.0].value.data();
                    let shape = input.shape();
                    let plane = shape.plane();
                    let m = (shape.n * plane) as f64;
                    let (mean, var): (&[E], &[E]) = match bn.mode {
                        Mode::Training => {
                            let (mean, var) = node
                                .bn_cache
                                .as_ref()
                                .expect("training-mode forward caches batch stats");
                            (mean, var)
                        }
                        Mode::Inference => (&bn.running_mean, &bn.running_var),
                    };
                    let eps = E::from_f64(bn.epsilon);
                    let mut dgamma = vec![E::ZERO; shape.c];
                    let mut dbeta = vec![E::ZERO; shape.c];
                    let mut dx = vec![E::ZERO; shape.count()];
                    for c in 0..shape.c {
                        let inv_std = E::ONE / (var[c] + eps).sqrt();
                        let mut s1 = E::ZERO; // sum dy
                        let mut s2 = E::ZERO; // sum dy * xhat
                        for n in 0..shape.n {
                            let x = input.plane(n, c);
                            let base = (n * shape.c + c) * plane;
                            let dy = &gout[base..base + plane];
                            for (k, &d) in dy.iter().enumerate() {
                                let xhat = (x[k] - mean[c]) * inv_std;
                                s1 += d;
                                s2 += d * xhat;
                            }
                        }
                        dgamma[c] = s2;
                        dbeta[c] = s1;
                        match bn.mode {
                            Mode::Training => {
                                let m_e = E::from_f64(m);
                                let coeff = g[c] * inv_std / m_e;
                                for n in 0..shape.n {
                                    let x = input.plane(n, c);
                                    let base = (n * shape.c + c) * plane;
                                    let dy = &gout[base..base + plane];
                                    for k in 0..plane {
                                        let xhat = (x[k] - mean[c]) * inv_std;
                                        dx[base + k] = coeff * (m_e * dy[k] - s1 - xhat * s2);
                                    }
                                }
                            }
                            Mode::Inference => {
                                let coeff = g[c] * inv_std;
                                for n in 0..shape.n {
                                    let base = (n * shape.c + c) * plane;
                                    let dy = &gout[base..base + plane];
                                    for k in 0..plane {
                                        dx[base + k] = coeff * dy[k];
                                    }
                                }
                            }
                        }
                    }
                    acc_slice(param_grads[gamma.0].data_mut(), &dgamma);
                    acc_slice(param_grads[beta.0].data_mut(), &dbeta);
                    acc_node(&mut node_grads[input_id.0], &dx);
                }
                Op::Relu => {
                    let input_id = node.inputs[0];
                    let x = self.nodes[input_id.0].out.data();
                    let dx: Vec<E> = gout
                        .iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > E::ZERO { g } else { E::ZERO })
                        .collect();
                    acc_node(&mut node_grads[input_id.0], &dx);
                }
                Op::Add => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    acc_node(&mut node_grads[a.0], &gout);
                    acc_node(&mut node_grads[b.0], &gout);
                }
                Op::ConcatChannels => {
                    let out_shape = node.out.shape();
                    let plane = out_shape.plane();
                    let mut c_start = 0;
                    for k in 0..node.inputs.len() {
                        let input_id = node.inputs[k];
                        let ishape = self.nodes[input_id.0].out.shape();
                        let mut dx = vec![E::ZERO; ishape.count()];
                        for n in 0..ishape.n {
                            for c in 0..ishape.c {
                                let src = ((n * out_shape.c) + c_start + c) * plane;
                                let dst = (n * ishape.c + c) * plane;
                                dx[dst..dst + plane].copy_from_slice(&gout[src..src + plane]);
                            }
                        }
                        acc_node(&mut node_grads[input_id.0], &dx);
                        c_start += ishape.c;
                    }
                }
                Op::Sum => {
                    let input_id = node.inputs[0];
                    let n = self.nodes[input_id.0].out.data().len();
                    let dx = vec![gout[0]; n];
                    acc_node(&mut node_grads[input_id.0], &dx);
                }
                Op::LossMae | Op::LossGrad | Op::LossNormal => {
                    let pred_id = node.inputs[0];
                    let pred = &self.nodes[pred_id.0].out;
                    let target = &self.nodes[node.inputs[1].0].out;
                    let dx = loss_backward(&node.op, pred, target, gout[0]);
                    acc_node(&mut node_grads[pred_id.0], &dx);
                }
                Op::WeightedSum { weights } => {
                    for (k, w) in weights.iter().enumerate() {
                        let contribution = [E::from_f64(*w) * gout[0]];
                        acc_node(&mut node_grads[node.inputs[k].0], &contribution);
                    }
                }
            }
        }
        Ok(param_grads)
    }

    /// Compare analytic and central-difference gradients for sampled entries
    /// of one parameter; returns the worst relative error. Requires a 64-bit
    /// graph and a completed forward pass.
    pub fn grad_check(&mut self, loss: NodeId, param: ParamId, epsilon: f64) -> Result<f64> {
        if E::DTYPE != DType::F64 {
            return Err(Error::PrecisionRequired(E::DTYPE.name()));
        }
        if !(1e-7..=1e-3).contains(&epsilon) {
            return Err(Error::InvalidConfig(format!(
                "grad_check epsilon must be in [1e-7, 1e-3], got {epsilon}"
            )));
        }
        let bn_snapshot: Vec<(Vec<E>, Vec<E>)> = self
            .bns
            .iter()
            .map(|b| (b.running_mean.clone(), b.running_var.clone()))
            .collect();

        self.replay()?;
        let analytic = self.backward(loss)?[param.0].clone();
        let numel = self.params[param.0].value.data().len();
        let samples: Vec<usize> = if numel <= 16 {
            (0..numel).collect()
        } else {
            (0..16).map(|i| i * numel / 16).collect()
        };

        let eps = E::from_f64(epsilon);
        let mut worst = 0.0f64;
        for &i in &samples {
            let original = self.params[param.0].value.data()[i];
            self.params[param.0].value.data_mut()[i] = original + eps;
            self.replay()?;
            let plus = self.nodes[loss.0].out.data()[0].to_f64();
            self.params[param.0].value.data_mut()[i] = original - eps;
            self.replay()?;
            let minus = self.nodes[loss.0].out.data()[0].to_f64();
            self.params[param.0].value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[i].to_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }

        for (bn, (mean, var)) in self.bns.iter_mut().zip(bn_snapshot) {
            bn.running_mean = mean;
            bn.running_var = var;
        }
        self.replay()?;
        Ok(worst)
    }
}

fn acc_slice<E: Element>(dst: &mut [E], src: &[E]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn acc_node<E: Element>(slot: &mut Option<Vec<E>>, src: &[E]) {
    match slot {
        Some(existing) => acc_slice(existing, src),
        None => *slot = Some(src.to_vec()),
    }
}

fn loss_backward<E: Element>(op: &Op, pred: &Tensor<E>, target: &Tensor<E>, gout: E) -> Vec<E> {
    let shape = pred.shape();
    let (h, w) = (shape.h, shape.w);
    let planes = shape.n * shape.c;
    let plane = shape.plane();
    let scale = gout / E::from_f64((plane * planes) as f64);
    let mut dx = vec![E::ZERO; shape.count()];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let d = pred.plane(n, c);
            let g = target.plane(n, c);
            let base = (n * shape.c + c) * plane;
            match op {
                Op::LossMae => {
                    for k in 0..plane {
                        let diff = d[k] - g[k];
                        dx[base + k] += scale * sign(diff);
                    }
                }
                Op::LossGrad => {
                    let diff: Vec<E> = d.iter().zip(g).map(|(a, b)| *a - *b).collect();
                    for y in 0..h {
                        for x in 0..w {
                            if x + 1 < w {
                                let s = sign(diff[y * w + x + 1] - diff[y * w + x]);
                                dx[base + y * w + x + 1] += scale * s;
                                dx[base + y * w + x] -= scale * s;
                            }
                            if y + 1 < h {
                                let s = sign(diff[(y + 1) * w + x] - diff[y * w + x]);
                                dx[base + (y + 1) * w + x] += scale * s;
                                dx[base + y * w + x] -= scale * s;
                            }
                        }
                    }
                }
                Op::LossNormal => {
                    let one = E::ONE;
                    for y in 0..h {
                        for x in 0..w {
                            let a = loss::grad_y(d, w, h, y, x);
                            let b = loss::grad_x(d, w, y, x);
                            let p = loss::grad_y(g, w, h, y, x);
                            let q = loss::grad_x(g, w, y, x);
                            let dot = a * p + b * q + one;
                            let nd2 = a * a + b * b + one;
                            let nd = nd2.sqrt();
                            let ng = (p * p + q * q + one).sqrt();
                            let inv = one / (nd * ng);
                            // loss = 1 - mean cos, so d(loss)/d(cos) = -1/N
                            let coeff = E::ZERO - scale;
                            let dcos_da = p * inv - dot * a * inv / nd2;
                            let dcos_db = q * inv - dot * b * inv / nd2;
                            if y + 1 < h {
                                let ga = coeff * dcos_da;
                                dx[base + (y + 1) * w + x] += ga;
                                dx[base + y * w + x] -= ga;
                            }
                            if x + 1 < w {
                                let gb = coeff * dcos_db;
                                dx[base + y * w + x + 1] += gb;
                                dx[base + y * w + x] -= gb;
                            }
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    dx
}

fn sign<E: Element>(v: E) -> E {
    if v > E::ZERO {
        E::ONE
    } else if v < E::ZERO {
        E::ZERO - E::ONE
    } else {
        E::ZERO
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
        let data = (0..shape.count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_weight_grad_counts_positions() {
        // 4x4 ones input, 3x3 kernel, no padding: each tap sees 4 positions.
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::filled(Shape::new(1, 1, 4, 4), 1.0));
        let w = g.parameter("w", Tensor::filled(Shape::new(1, 1, 3, 3), 0.5));
        let spec = ConvSpec::new(3, 1, 1, 0, 1, 1, false).unwrap();
        let y = g.conv2d(x, w, None, spec).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads[0].data().iter().all(|&v| v == 4.0), "{:?}", grads[0].data());
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::filled(Shape::new(1, 1, 3, 3), 1.0));
        let w = g.parameter("w", Tensor::filled(Shape::new(1, 1, 1, 1), 1.0));
        let orphan = g.parameter("orphan", Tensor::filled(Shape::new(1, 1, 3, 3), 1.0));
        let spec = ConvSpec::new(1, 1, 1, 0, 1, 1, false).unwrap();
        let y = g.conv2d(x, w, None, spec).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads[orphan.0].data().iter().all(|&v| v == 0.0));
        assert!(grads[w.0].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::filled(Shape::new(1, 1, 3, 3), 1.0));
        let y = g.relu(x).unwrap();
        let err = g.backward(y).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss(_)));
    }

    #[test]
    fn relu_forward_and_idempotence() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        assert_eq!(g.out(y).data(), &[0.0, 0.0, 2.0]);
        let z = g.relu(y).unwrap();
        assert_eq!(g.out(z).data(), g.out(y).data());

        let all_neg = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-5.0, -0.1, -7.0]).unwrap();
        g.set_input(x, all_neg).unwrap();
        g.replay().unwrap();
        assert!(g.out(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_add_feeds_both_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::<f64>::new();
        let x = g.input(rand_tensor(&mut rng, Shape::new(1, 2, 5, 5)));
        let spec = ConvSpec::same(3, 1, 2, 2).unwrap();
        let w1 = g.parameter("w1", rand_tensor(&mut rng, Shape::new(2, 2, 3, 3)));
        let w2 = g.parameter("w2", rand_tensor(&mut rng, Shape::new(2, 2, 3, 3)));
        let f = g.conv2d(x, w1, None, spec).unwrap();
        let h = g.conv2d(x, w2, None, spec).unwrap();
        let sum = g.add(f, h).unwrap();
        let loss = g.sum(sum).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads[0].data().iter().any(|&v| v.abs() > 0.0));
        assert!(grads[1].data().iter().any(|&v| v.abs() > 0.0));

        // zeroing one branch's weights still leaves gradient on the other
        for v in g.param_mut(w1).data_mut() {
            *v = 0.0;
        }
        g.replay().unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads[w2.0].data().iter().any(|&v| v.abs() > 0.0));
        assert!(grads[w1.0].data().iter().any(|&v| v.abs() > 0.0));
    }

    #[test]
    fn grad_check_conv_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::<f64>::new();
        let x = g.input(rand_tensor(&mut rng, Shape::new(2, 3, 6, 6)));
        let w = g.parameter("w", rand_tensor(&mut rng, Shape::new(4, 3, 3, 3)));
        let spec = ConvSpec::same(3, 2, 3, 4).unwrap();
        let y = g.conv2d(x, w, None, spec).unwrap();
        let t = g.input(rand_tensor(&mut rng, Shape::new(2, 4, 6, 6)));
        let loss = g.loss_mae(y, t).unwrap();
        let err = g.grad_check(loss, w, 1e-5).unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn grad_check_depthwise_and_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut g = Graph::<f64>::new();
        let x = g.input(rand_tensor(&mut rng, Shape::new(1, 4, 5, 5)));
        let dw = g.parameter("dw", rand_tensor(&mut rng, Shape::new(4, 1, 3, 3)));
        let pw = g.parameter("pw", rand_tensor(&mut rng, Shape::new(2, 4, 1, 1)));
        let s_dw = ConvSpec::same(3, 1, 4, 4).unwrap();
        let s_pw = ConvSpec::same(1, 1, 4, 2).unwrap();
        let mid = g.conv2d_grouped(x, dw, None, s_dw, 4).unwrap();
        let y = g.conv2d(mid, pw, None, s_pw).unwrap();
        let t = g.input(rand_tensor(&mut rng, Shape::new(1, 2, 5, 5)));
        let loss = g.loss_mae(y, t).unwrap();
        assert!(g.grad_check(loss, dw, 1e-5).unwrap() < 1e-4);
        assert!(g.grad_check(loss, pw, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn grad_check_batch_norm_under_combined_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut g = Graph::<f64>::new();
        let x = g.input(rand_tensor(&mut rng, Shape::new(2, 2, 4, 4)));
        let w = g.parameter("w", rand_tensor(&mut rng, Shape::new(1, 2, 3, 3)));
        let gamma = g.parameter("gamma", rand_tensor(&mut rng, Shape::new(1, 2, 1, 1)));
        let beta = g.parameter("beta", rand_tensor(&mut rng, Shape::new(1, 2, 1, 1)));
        let bn = g.bn_state(2, 0.1, 1e-5);
        let normed = g.batch_norm(x, bn, gamma, beta).unwrap();
        let y = g.conv2d(normed, w, None, ConvSpec::same(3, 1, 2, 1).unwrap()).unwrap();
        let t = g.input(rand_tensor(&mut rng, Shape::new(2, 1, 4, 4)));
        let mae = g.loss_mae(y, t).unwrap();
        let lgr = g.loss_grad(y, t).unwrap();
        let lno = g.loss_normal(y, t).unwrap();
        let combined = g.weighted_sum(&[mae, lgr, lno], &[1.0, 1.0, 1.0]).unwrap();
        assert!(g.grad_check(combined, gamma, 1e-5).unwrap() < 1e-4);
        assert!(g.grad_check(combined, beta, 1e-5).unwrap() < 1e-4);
        assert!(g.grad_check(combined, w, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn grad_check_rejects_f32() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::filled(Shape::new(1, 1, 3, 3), 1.0));
        let w = g.parameter("w", Tensor::filled(Shape::new(1, 1, 1, 1), 1.0));
        let y = g
            .conv2d(x, w, None, ConvSpec::new(1, 1, 1, 0, 1, 1, false).unwrap())
            .unwrap();
        let loss = g.sum(y).unwrap();
        let err = g.grad_check(loss, w, 1e-5).unwrap_err();
        assert!(matches!(err, Error::PrecisionRequired("f32")));
    }

    #[test]
    fn grad_check_validates_epsilon_range() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::filled(Shape::new(1, 1, 3, 3), 1.0));
        let w = g.parameter("w", Tensor::filled(Shape::new(1, 1, 1, 1), 1.0));
        let y = g
            .conv2d(x, w, None, ConvSpec::new(1, 1, 1, 0, 1, 1, false).unwrap())
            .unwrap();
        let loss = g.sum(y).unwrap();
        assert!(g.grad_check(loss, w, 1e-2).is_err());
        assert!(g.grad_check(loss, w, 1e-8).is_err());
    }

    #[test]
    fn loss_values_match_pure_functions() {
        use crate::lightfield::DisparityMap;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pred = rand_tensor(&mut rng, Shape::new(1, 1, 8, 8));
        let target = rand_tensor(&mut rng, Shape::new(1, 1, 8, 8));
        let dm = DisparityMap::new(8, 8, pred.data().iter().map(|&v| v as f32).collect()).unwrap();
        let gm = DisparityMap::new(8, 8, target.data().iter().map(|&v| v as f32).collect()).unwrap();

        let mut g = Graph::<f64>::new();
        let p = g.input(pred);
        let t = g.input(target);
        let mae = g.loss_mae(p, t).unwrap();
        let lgr = g.loss_grad(p, t).unwrap();
        let lno = g.loss_normal(p, t).unwrap();
        // f32 maps round through f32, so compare with a loose-but-tight bound
        assert!((g.out(mae).data()[0] - crate::loss::loss_mae(&dm, &gm).unwrap()).abs() < 1e-6);
        assert!((g.out(lgr).data()[0] - crate::loss::loss_grad(&dm, &gm).unwrap()).abs() < 1e-6);
        assert!((g.out(lno).data()[0] - crate::loss::loss_normal(&dm, &gm).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn forward_keeps_values_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut g = Graph::<f64>::new();
        let x = g.input(rand_tensor(&mut rng, Shape::new(2, 3, 8, 8)));
        let w = g.parameter("w", rand_tensor(&mut rng, Shape::new(5, 3, 3, 3)));
        let gamma = g.parameter("gamma", Tensor::filled(Shape::new(1, 5, 1, 1), 1.0));
        let beta = g.parameter("beta", Tensor::zeros(Shape::new(1, 5, 1, 1)));
        let bn = g.bn_state(5, 0.1, 1e-5);
        let c = g.conv2d(x, w, None, ConvSpec::same(3, 4, 3, 5).unwrap()).unwrap();
        let b = g.batch_norm(c, bn, gamma, beta).unwrap();
        let r = g.relu(b).unwrap();
        let loss = g.sum(r).unwrap();
        assert!(g.out(r).all_finite());
        let grads = g.backward(loss).unwrap();
        assert!(grads.iter().all(|t| t.all_finite()));
    }

    #[test]
    fn concat_stacks_channels_in_order() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::filled(Shape::new(1, 1, 2, 2), 1.0));
        let b = g.input(Tensor::filled(Shape::new(1, 2, 2, 2), 2.0));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.out(c).shape(), Shape::new(1, 3, 2, 2));
        assert_eq!(g.out(c).plane(0, 0), &[1.0; 4]);
        assert_eq!(g.out(c).plane(0, 2), &[2.0; 4]);
    }

    #[test]
    fn independent_graphs_run_on_separate_threads() {
        let handles: Vec<_> = (0..4)
            .map(|seed| {
                std::thread::spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut g = Graph::<f64>::new();
                    let x = g.input(rand_tensor(&mut rng, Shape::new(1, 2, 6, 6)));
                    let w = g.parameter("w", rand_tensor(&mut rng, Shape::new(3, 2, 3, 3)));
                    let y = g.conv2d(x, w, None, ConvSpec::same(3, 1, 2, 3).unwrap()).unwrap();
                    let loss = g.sum(y).unwrap();
                    g.backward(loss).unwrap();
                    g.out(loss).data()[0]
                })
            })
            .collect();
        for h in handles {
            assert!(h.join().unwrap().is_finite());
        }
    }

    #[test]
    fn replay_tracks_updated_inputs() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::filled(Shape::new(1, 1, 2, 2), 1.0));
        let loss = g.sum(x).unwrap();
        assert_eq!(g.out(loss).data()[0], 4.0);
        g.set_input(x, Tensor::filled(Shape::new(1, 1, 3, 3), 2.0)).unwrap();
        g.replay().unwrap();
        assert_eq!(g.out(loss).data()[0], 18.0);
    }
}
