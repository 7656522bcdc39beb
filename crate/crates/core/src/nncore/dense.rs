use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    /// ReLU uses subgradient 0 at exactly 0.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer computing `act(x · Wᵀ + b)` for a batch `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Tensor,
    /// length `out`
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Self { weights: Tensor::from_parts(vec![outputs, inputs], w), bias: Tensor::zeros(&[outputs]), activation }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { weights: Tensor::zeros(&[outputs, inputs]), bias: Tensor::zeros(&[outputs]), activation }
    }

    pub fn from_parts(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self, NnError> {
        let (out, _) = weights.dims2("layer weights")?;
        if bias.shape() != [out] {
            return Err(NnError::Shape(format!("bias {:?} does not match {out} outputs", bias.shape())));
        }
        Ok(Self { weights, bias, activation })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Returns `(pre, post)` activations.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor), NnError> {
        let mut pre = x.matmul_t(&self.weights)?;
        let b = self.bias.data();
        for row in pre.data_mut().chunks_exact_mut(b.len()) {
            for (v, bi) in row.iter_mut().zip(b) {
                *v += bi;
            }
        }
        let post = pre.map(|v| self.activation.apply(v));
        Ok((pre, post))
    }
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub pre: Tensor,
    pub post: Tensor,
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub input: Tensor,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        self.layers.last().map_or(&self.input, |l| &l.post)
    }

    /// Pre-activation of the last layer (logits for a sigmoid output).
    pub fn output_pre(&self) -> &Tensor {
        self.layers.last().map_or(&self.input, |l| &l.pre)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Tensor,
}

impl Gradients {
    /// Flattened in `[w0, b0, w1, b1, ...]` order, matching [`Mlp::params`].
    pub fn flat(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|g| [&g.weights, &g.bias]).collect()
    }
}

pub fn forward(layers: &[DenseLayer], x: &Tensor) -> Result<ForwardTrace, NnError> {
    let mut traces = Vec::with_capacity(layers.len());
    let mut current = x;
    for (i, layer) in layers.iter().enumerate() {
        if current.rank() != 2 || current.cols() != layer.inputs() {
            return Err(NnError::Dimension { layer: i, expected: layer.inputs(), got: current.shape().to_vec() });
        }
        let (pre, post) = layer.forward(current)?;
        traces.push(LayerTrace { pre, post });
        current = &traces[i].post;
    }
    Ok(ForwardTrace { input: x.clone(), layers: traces })
}

/// Backpropagates a gradient taken w.r.t. the network output.
pub fn backward(layers: &[DenseLayer], trace: &ForwardTrace, upstream: &Tensor) -> Result<Gradients, NnError> {
    check_trace(layers, trace)?;
    let last = layers.len() - 1;
    let lt = &trace.layers[last];
    upstream.expect_same_shape(&lt.post, "upstream gradient")?;
    let act = layers[last].activation;
    let mut d = upstream.clone();
    for ((g, &p), &q) in d.data_mut().iter_mut().zip(lt.pre.data()).zip(lt.post.data()) {
        *g *= act.derivative(p, q);
    }
    backward_pre(layers, trace, &d)
}

/// Backpropagates a gradient taken w.r.t. the last layer's pre-activation.
/// Used where the loss is expressed directly in logits.
pub fn backward_pre(layers: &[DenseLayer], trace: &ForwardTrace, grad_pre: &Tensor) -> Result<Gradients, NnError> {
    check_trace(layers, trace)?;
    let mut grads = Vec::with_capacity(layers.len());
    let mut d = grad_pre.clone();
    for i in (0..layers.len()).rev() {
        d.expect_same_shape(&trace.layers[i].pre, "pre-activation gradient")?;
        let input = if i == 0 { &trace.input } else { &trace.layers[i - 1].post };
        let dw = d.t_matmul(input)?;
        let db = d.sum_rows();
        let mut dx = d.matmul(&layers[i].weights)?;
        if i > 0 {
            let prev = &trace.layers[i - 1];
            let act = layers[i - 1].activation;
            for ((g, &p), &q) in dx.data_mut().iter_mut().zip(prev.pre.data()).zip(prev.post.data()) {
                *g *= act.derivative(p, q);
            }
        }
        grads.push(LayerGrad { weights: dw, bias: db });
        d = dx;
    }
    grads.reverse();
    Ok(Gradients { layers: grads, input: d })
}

fn check_trace(layers: &[DenseLayer], trace: &ForwardTrace) -> Result<(), NnError> {
    if layers.is_empty() || trace.layers.len() != layers.len() {
        return Err(NnError::StaleCache { layers: layers.len(), cached: trace.layers.len() });
    }
    Ok(())
}

/// A stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`; hidden layers use `hidden`, the last `output`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::new(w[0], w[1], if i + 1 == n { output } else { hidden }, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace, NnError> {
        forward(&self.layers, x)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if cur.rank() != 2 || cur.cols() != layer.inputs() {
                return Err(NnError::Dimension { layer: i, expected: layer.inputs(), got: cur.shape().to_vec() });
            }
            cur = layer.forward(&cur)?.1;
        }
        Ok(cur)
    }

    pub fn backward(&self, trace: &ForwardTrace, upstream: &Tensor) -> Result<Gradients, NnError> {
        backward(&self.layers, trace, upstream)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias]).collect()
    }

    /// Appends this network's tensors to a checkpoint under `prefix`.
    pub fn save_into(&self, prefix: &str, ckpt: &mut super::Checkpoint) {
        for (i, l) in self.layers.iter().enumerate() {
            ckpt.insert(format!("{prefix}.{i}.w"), l.weights.clone());
            ckpt.insert(format!("{prefix}.{i}.b"), l.bias.clone());
            ckpt.insert(format!("{prefix}.{i}.act"), Tensor::from_parts(vec![1], vec![f64::from(l.activation.tag())]));
        }
    }

    pub fn load_from(prefix: &str, ckpt: &super::Checkpoint) -> Result<Self, NnError> {
        let mut layers = Vec::new();
        for i in 0.. {
            let Some(w) = ckpt.get(&format!("{prefix}.{i}.w")) else {
                break;
            };
            let b = ckpt.require(&format!("{prefix}.{i}.b"))?;
            let tag = ckpt.require(&format!("{prefix}.{i}.act"))?.data()[0];
            let act = Activation::from_tag(tag as u8)
                .ok_or_else(|| NnError::Checkpoint(format!("unknown activation tag {tag}")))?;
            layers.push(DenseLayer::from_parts(w.clone(), b.clone(), act)?);
        }
        if layers.is_empty() {
            return Err(NnError::Checkpoint(format!("no layers under prefix {prefix:?}")));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(NnError::Dimension {
                    layer: i + 1,
                    expected: pair[0].outputs(),
                    got: vec![pair[1].inputs()],
                });
            }
        }
        Ok(Self { layers })
    }
}
