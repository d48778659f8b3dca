//! Layer graph for both classifier variants.
//!
//! Topology (kernel `k`, activation `a`):
//!
//! ```text
//! input ─ FEB: 4 × conv(k)+a ─┬─ decusr_l: pool ─ bn ───────────────────────┐
//!   │                          └─ decusr:  concat(FEB, LDUP) ─ LFUP [─ pool] ┤
//!   └─ LDUP: conv(k)+a ─ upsample×1 (decusr only)                            │
//!                                                                     stack ◄┘
//! repeat rb_count times:
//!   h = rb_depth × conv(k)+a on stack [─ bn]
//!   stack = concat(stack, h) [─ pool]
//! head: conv(1×1) ─ flatten ─ dense(1)+sigmoid
//! ```
//!
//! Max pooling is channel-wise, so pooling the concatenated stack equals
//! pooling the block output and every earlier feed separately. Dense
//! connectivity therefore survives pooling, and concatenation widths do not
//! depend on `use_maxpool`.

use super::{ModelConfig, ModelError, Result, Variant, WeightSnapshot};
use crate::nn::Scalar;
use crate::nn::{
    self, bce_loss, concat_channels, gradcheck::Objective, split_channels, ActivationKind, BatchNorm, Conv2d, Dense,
    Flatten, Layer, MaxPool2d, Mode, Param, Tensor, Upsample,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Input,
    Conv,
    MaxPool,
    BatchNorm,
    Upsample,
    Concat,
    Flatten,
    Dense,
}

#[allow(clippy::large_enum_variant)]
pub enum NodeOp<T: Scalar> {
    Input,
    Conv(Conv2d<T>),
    MaxPool(MaxPool2d),
    BatchNorm(BatchNorm<T>),
    Upsample(Upsample),
    Concat,
    Flatten(Flatten),
    Dense(Dense<T>),
}

impl<T: Scalar> NodeOp<T> {
    fn kind(&self) -> NodeKind {
        match self {
            NodeOp::Input => NodeKind::Input,
            NodeOp::Conv(_) => NodeKind::Conv,
            NodeOp::MaxPool(_) => NodeKind::MaxPool,
            NodeOp::BatchNorm(_) => NodeKind::BatchNorm,
            NodeOp::Upsample(_) => NodeKind::Upsample,
            NodeOp::Concat => NodeKind::Concat,
            NodeOp::Flatten(_) => NodeKind::Flatten,
            NodeOp::Dense(_) => NodeKind::Dense,
        }
    }

    fn layer(&self) -> Option<&dyn Layer<T>> {
        match self {
            NodeOp::Input | NodeOp::Concat => None,
            NodeOp::Conv(l) => Some(l),
            NodeOp::MaxPool(l) => Some(l),
            NodeOp::BatchNorm(l) => Some(l),
            NodeOp::Upsample(l) => Some(l),
            NodeOp::Flatten(l) => Some(l),
            NodeOp::Dense(l) => Some(l),
        }
    }

    fn layer_mut(&mut self) -> Option<&mut dyn Layer<T>> {
        match self {
            NodeOp::Input | NodeOp::Concat => None,
            NodeOp::Conv(l) => Some(l),
            NodeOp::MaxPool(l) => Some(l),
            NodeOp::BatchNorm(l) => Some(l),
            NodeOp::Upsample(l) => Some(l),
            NodeOp::Flatten(l) => Some(l),
            NodeOp::Dense(l) => Some(l),
        }
    }
}

pub struct Node<T: Scalar> {
    pub name: String,
    pub op: NodeOp<T>,
    pub inputs: Vec<usize>,
    /// Output shape for a batch of one.
    pub shape: Vec<usize>,
}

impl<T: Scalar> Node<T> {
    pub fn kind(&self) -> NodeKind {
        self.op.kind()
    }
}

/// Instantiated classifier: nodes in topological order, the last one being
/// the single-unit sigmoid dense layer.
pub struct ModelGraph<T: Scalar = f32> {
    config: ModelConfig,
    nodes: Vec<Node<T>>,
    activations: Vec<Option<Tensor<T>>>,
    last_mode: Option<Mode>,
}

struct Builder<T: Scalar> {
    nodes: Vec<Node<T>>,
    seed: u64,
}

/// splitmix64 finalizer; derives independent per-layer seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Scalar> Builder<T> {
    fn channels(&self, id: usize) -> usize {
        *self.nodes[id].shape.last().expect("node shapes are never empty")
    }

    fn push(&mut self, name: String, op: NodeOp<T>, inputs: Vec<usize>) -> Result<usize> {
        let shape = match (&op, inputs.as_slice()) {
            (NodeOp::Input, _) => unreachable!("input is pushed directly"),
            (NodeOp::Concat, ins) => {
                let first = &self.nodes[ins[0]].shape;
                let mut total = 0;
                for &i in ins {
                    let s = &self.nodes[i].shape;
                    if s[..3] != first[..3] {
                        return Err(ModelError::InvalidConfig(format!(
                            "concatenation '{name}' mixes shapes {first:?} and {s:?}"
                        )));
                    }
                    total += s[3];
                }
                vec![first[0], first[1], first[2], total]
            }
            (op, [i]) => {
                let layer = op.layer().expect("layer op");
                layer.output_shape(&self.nodes[*i].shape).map_err(|e| match op {
                    NodeOp::MaxPool(_) => ModelError::InvalidConfig(format!(
                        "pooling at '{name}' would shrink the feature map below 1x1: {e}"
                    )),
                    _ => ModelError::Nn(e),
                })?
            }
            _ => unreachable!("layer ops take one input"),
        };
        self.nodes.push(Node {
            name,
            op,
            inputs,
            shape,
        });
        Ok(self.nodes.len() - 1)
    }

    fn conv(
        &mut self,
        name: String,
        kernel: usize,
        cout: usize,
        act: Option<ActivationKind>,
        from: usize,
    ) -> Result<usize> {
        let cin = self.channels(from);
        let seed = mix_seed(self.seed, self.nodes.len() as u64);
        let layer = Conv2d::new(name.clone(), kernel, cin, cout, act, seed)?;
        self.push(name, NodeOp::Conv(layer), vec![from])
    }

    fn pool(&mut self, name: String, from: usize) -> Result<usize> {
        self.push(name.clone(), NodeOp::MaxPool(MaxPool2d::new(name)), vec![from])
    }

    fn norm(&mut self, name: String, from: usize) -> Result<usize> {
        let c = self.channels(from);
        self.push(name.clone(), NodeOp::BatchNorm(BatchNorm::new(name, c)), vec![from])
    }

    fn upsample(&mut self, name: String, from: usize) -> Result<usize> {
        let layer = Upsample::new(name.clone(), 1)?;
        self.push(name, NodeOp::Upsample(layer), vec![from])
    }

    fn concat(&mut self, name: String, from: Vec<usize>) -> Result<usize> {
        self.push(name, NodeOp::Concat, from)
    }
}

impl<T: Scalar> ModelGraph<T> {
    /// Builds and initializes the graph for `config`. Kernels are
    /// Glorot-uniform from `seed`; biases start at zero.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let act = Some(config.activation);
        let k = config.kernel_size;
        let s = config.input_size;
        let mut b = Builder {
            nodes: vec![Node {
                name: "input".into(),
                op: NodeOp::Input,
                inputs: Vec::new(),
                shape: vec![1, s, s, config.input_channels],
            }],
            seed,
        };
        let input = 0;

        let mut feat = input;
        for (i, &f) in config.feb_filters.iter().enumerate() {
            feat = b.conv(format!("feb_conv{}", i + 1), k, f, act, feat)?;
        }

        let mut stack = match config.variant {
            Variant::DecusrL => {
                let p = b.pool("feb_pool".into(), feat)?;
                b.norm("feb_bn".into(), p)?
            }
            Variant::Decusr => {
                let width = config.feb_filters[3];
                let d = b.conv("ldup_conv".into(), k, width, act, input)?;
                let d = b.upsample("ldup_upsample".into(), d)?;
                let cat = b.concat("lfup_concat".into(), vec![feat, d])?;
                let u = b.conv("lfup_conv".into(), k, width, act, cat)?;
                let u = b.upsample("lfup_upsample".into(), u)?;
                if config.use_maxpool {
                    b.pool("lfup_pool".into(), u)?
                } else {
                    u
                }
            }
        };

        for r in 1..=config.rb_count {
            let mut h = stack;
            for d in 1..=config.rb_depth {
                h = b.conv(format!("rb{r}_conv{d}"), k, config.rb_filters, act, h)?;
            }
            if config.use_batchnorm {
                h = b.norm(format!("rb{r}_bn"), h)?;
            }
            let cat = b.concat(format!("rb{r}_concat"), vec![stack, h])?;
            stack = if config.use_maxpool {
                b.pool(format!("rb{r}_pool"), cat)?
            } else {
                cat
            };
        }

        let head = b.conv("head_conv".into(), 1, 1, None, stack)?;
        let flat = b.push("flatten".into(), NodeOp::Flatten(Flatten::new("flatten")), vec![head])?;
        let features = b.nodes[flat].shape[1];
        let dense_seed = mix_seed(seed, b.nodes.len() as u64);
        let dense = Dense::new("dense", features, 1, Some(ActivationKind::Sigmoid), dense_seed)?;
        b.push("dense".into(), NodeOp::Dense(dense), vec![flat])?;

        let n = b.nodes.len();
        Ok(Self {
            config: config.clone(),
            nodes: b.nodes,
            activations: (0..n).map(|_| None).collect(),
            last_mode: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind() == kind).count()
    }

    /// Total parameter elements, batch-norm running statistics included.
    pub fn count_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.nodes
            .iter()
            .filter_map(|n| n.op.layer())
            .flat_map(|l| l.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.nodes
            .iter_mut()
            .filter_map(|n| n.op.layer_mut())
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let (_, h, w, c) = batch.dims4()?;
        let s = self.config.input_size;
        if (h, w, c) != (s, s, self.config.input_channels) {
            return Err(ModelError::InputShape {
                expected: vec![s, s, self.config.input_channels],
                actual: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn run_node(&mut self, i: usize, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let node = &self.nodes[i];
        let out = match &node.op {
            NodeOp::Input => batch.clone(),
            NodeOp::Concat => {
                let ins: Vec<&Tensor<T>> = node
                    .inputs
                    .iter()
                    .map(|&j| self.activations[j].as_ref().expect("input computed"))
                    .collect();
                concat_channels(&ins)?
            }
            _ => {
                let x = self.activations[node.inputs[0]].take().expect("input computed");
                let y = self.nodes[i].op.layer_mut().expect("layer op").forward(&x, mode);
                self.activations[self.nodes[i].inputs[0]] = Some(x);
                y?
            }
        };
        Ok(out)
    }

    /// Forward pass keeping every activation for [`ModelGraph::backward`].
    /// Returns scores of shape `[N, 1]`.
    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        for i in 0..self.nodes.len() {
            let y = self.run_node(i, batch, mode)?;
            self.activations[i] = Some(y);
        }
        self.last_mode = Some(mode);
        Ok(self.activations.last().cloned().flatten().expect("output computed"))
    }

    /// Inference-mode forward pass that frees intermediates as soon as their
    /// last consumer has run.
    pub fn predict(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let mut last_use = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for &j in &n.inputs {
                last_use[j] = i;
            }
        }
        self.activations.iter_mut().for_each(|a| *a = None);
        self.last_mode = None;
        for i in 0..self.nodes.len() {
            let y = self.run_node(i, batch, Mode::Inference)?;
            self.activations[i] = Some(y);
            for j in self.nodes[i].inputs.clone() {
                if last_use[j] == i {
                    self.activations[j] = None;
                }
            }
        }
        Ok(self
            .activations
            .last_mut()
            .and_then(Option::take)
            .expect("output computed"))
    }

    /// Backpropagates the gradient of a loss with respect to the output
    /// scores. Parameter gradients accumulate; returns the input gradient.
    pub fn backward(&mut self, grad_scores: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_inner(grad_scores, false)
    }

    /// Like [`ModelGraph::backward`], but `grad_logits` is the gradient with
    /// respect to the pre-sigmoid value of the output unit.
    pub fn backward_from_logits(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_inner(grad_logits, true)
    }

    fn backward_inner(&mut self, grad: &Tensor<T>, from_logits: bool) -> Result<Tensor<T>> {
        let mode = self.last_mode.ok_or(ModelError::NoForwardPass)?;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[n - 1] = Some(grad.clone());
        let mut input_grad = None;
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &mut self.nodes[i];
            match &mut node.op {
                NodeOp::Input => {
                    input_grad = Some(g);
                    continue;
                }
                NodeOp::Concat => {
                    let widths: Vec<usize> = node
                        .inputs
                        .iter()
                        .map(|&j| self.activations[j].as_ref().expect("activation").shape()[3])
                        .collect();
                    let parts = split_channels(&g, &widths)?;
                    for (&j, part) in node.inputs.iter().zip(parts) {
                        accumulate(&mut grads[j], part)?;
                    }
                }
                op => {
                    let j = node.inputs[0];
                    let x = self.activations[j].as_ref().ok_or(ModelError::NoForwardPass)?;
                    let y = self.activations[i].as_ref().ok_or(ModelError::NoForwardPass)?;
                    let dx = match op {
                        NodeOp::Dense(d) if from_logits && i == n - 1 => d.backward_preactivation(x, &g)?,
                        op => op.layer_mut().expect("layer op").backward(x, y, &g, mode)?,
                    };
                    accumulate(&mut grads[j], dx)?;
                }
            }
        }
        input_grad.ok_or(ModelError::NoForwardPass)
    }

    /// Copies all parameters into a snapshot tagged with the config fingerprint.
    pub fn snapshot(&self) -> WeightSnapshot {
        WeightSnapshot {
            fingerprint: self.config.fingerprint(),
            tensors: self
                .params()
                .into_iter()
                .map(|p| (p.name.clone(), p.value.cast()))
                .collect(),
        }
    }

    /// Loads parameters from a snapshot of the same configuration.
    pub fn load_snapshot(&mut self, snapshot: &WeightSnapshot) -> Result<()> {
        let expected = self.config.fingerprint();
        if snapshot.fingerprint != expected {
            return Err(ModelError::Fingerprint {
                expected,
                found: snapshot.fingerprint,
            });
        }
        let mut params = self.params_mut();
        if params.len() != snapshot.tensors.len() {
            return Err(ModelError::Format(format!(
                "snapshot has {} tensors, graph has {}",
                snapshot.tensors.len(),
                params.len()
            )));
        }
        for (p, (name, t)) in params.iter_mut().zip(&snapshot.tensors) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(ModelError::Format(format!(
                    "snapshot tensor {name} {:?} does not match {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = t.cast();
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> nn::Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Mean BCE of a double-precision graph, for gradient checking the whole
/// network.
pub struct ModelObjective {
    pub graph: ModelGraph<f64>,
    pub targets: Tensor<f64>,
    pub mode: Mode,
}

impl Objective for ModelObjective {
    fn evaluate(&mut self, input: &Tensor<f64>) -> nn::Result<f64> {
        let p = self.graph.forward(input, self.mode).map_err(ModelError::into_nn)?;
        Ok(bce_loss(&p, &self.targets)?.0)
    }

    fn gradients(&mut self, input: &Tensor<f64>) -> nn::Result<Tensor<f64>> {
        let p = self.graph.forward(input, self.mode).map_err(ModelError::into_nn)?;
        let (_, dp) = bce_loss(&p, &self.targets)?;
        self.graph.zero_grad();
        self.graph.backward(&dp).map_err(ModelError::into_nn)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.graph.params_mut()
    }
}
