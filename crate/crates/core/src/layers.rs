//! Differentiable layers with forward caching and exact backward passes.
//!
//! Every layer consumes and produces batched tensors whose leading dimension
//! is the batch. A forward pass in [`Mode::Train`] caches what the matching
//! backward pass needs; backward returns the gradient with respect to the
//! layer input and accumulates parameter gradients into the layer's slots.

use crate::error::{Error, Result};
use crate::tensor::{self, conv2d_backward, conv2d_valid, maxpool2x2, maxpool2x2_backward, Rng, Tensor};

/// Deliberate backward-pass faults for exercising the gradient checker.
#[doc(hidden)]
pub mod fault {
    use std::cell::Cell;

    thread_local! {
        static DENSE_SIGN_FLIP: Cell<bool> = const { Cell::new(false) };
    }

    /// Negates dense weight gradients on the current thread.
    pub fn set_dense_sign_flip(on: bool) {
        DENSE_SIGN_FLIP.with(|f| f.set(on));
    }

    pub(crate) fn dense_sign_flip() -> bool {
        DENSE_SIGN_FLIP.with(Cell::get)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weight initialization stddev for dense and convolution layers.
pub const DEFAULT_INIT_STD: f64 = 0.05;

fn no_cache(layer: &str) -> Error {
    Error::state(format!("{layer}: backward called without a train-mode forward"))
}

/// Fully connected layer `y = x·W + b` with `W` stored in×out.
#[derive(Clone, Debug)]
pub struct Dense {
    weights: Tensor,
    bias: Tensor,
    grad_weights: Tensor,
    grad_bias: Tensor,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, init_std: f64, rng: &mut Rng) -> Result<Self> {
        let weights = tensor::randn(&[inputs, outputs], init_std, rng)?;
        Dense::from_parts(weights, Tensor::zeros(&[outputs]))
    }

    pub fn from_parts(weights: Tensor, bias: Tensor) -> Result<Self> {
        let &[i, o] = weights.shape() else {
            return Err(Error::shape("dense weights must be a matrix"));
        };
        if bias.shape() != [o] {
            return Err(Error::shape(format!("dense bias {:?} does not match {o} outputs", bias.shape())));
        }
        Ok(Dense {
            grad_weights: Tensor::zeros(&[i, o]),
            grad_bias: Tensor::zeros(&[o]),
            weights,
            bias,
            input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn grad_weights(&self) -> &Tensor {
        &self.grad_weights
    }

    pub fn grad_bias(&self) -> &Tensor {
        &self.grad_bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.inputs() {
            return Err(Error::shape(format!(
                "dense expects N×{}, got {:?}",
                self.inputs(),
                x.shape()
            )));
        }
        let n = x.rows();
        let o = self.outputs();
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(self.bias.data());
        }
        tensor::gemm(n, self.inputs(), o, 1.0, x.data(), (self.inputs(), 1), self.weights.data(), (o, 1), 1.0, &mut out);
        self.input = (mode == Mode::Train).then(|| x.clone());
        Tensor::new(&[n, o], out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("dense"))?;
        if grad.shape() != [x.rows(), self.outputs()] {
            return Err(Error::shape(format!("dense upstream gradient {:?} mismatched", grad.shape())));
        }
        let (n, i, o) = (x.rows(), self.inputs(), self.outputs());
        let alpha = if fault::dense_sign_flip() { -1.0 } else { 1.0 };
        // dW += xᵀ·g
        tensor::gemm(i, n, o, alpha, x.data(), (1, i), grad.data(), (o, 1), 1.0, self.grad_weights.data_mut());
        for r in 0..n {
            for (gb, g) in self.grad_bias.data_mut().iter_mut().zip(grad.row(r)) {
                *gb += g;
            }
        }
        tensor::matmul_nt(grad, &self.weights)
    }
}

/// 2-D convolution layer over N×C×H×W input with F×C×KH×KW kernels.
#[derive(Clone, Debug)]
pub struct Conv2D {
    kernels: Tensor,
    bias: Tensor,
    grad_kernels: Tensor,
    grad_bias: Tensor,
    input: Option<Tensor>,
}

impl Conv2D {
    /// Square `kernel`×`kernel` filters, weights drawn from N(0, init_std²).
    pub fn new(in_channels: usize, filters: usize, kernel: usize, init_std: f64, rng: &mut Rng) -> Result<Self> {
        let kernels = tensor::randn(&[filters, in_channels, kernel, kernel], init_std, rng)?;
        Conv2D::from_parts(kernels, Tensor::zeros(&[filters]))
    }

    pub fn from_parts(kernels: Tensor, bias: Tensor) -> Result<Self> {
        if kernels.rank() != 4 || bias.shape() != [kernels.shape()[0]] {
            return Err(Error::shape("conv kernels must be F×C×KH×KW with F biases"));
        }
        Ok(Conv2D {
            grad_kernels: Tensor::zeros(kernels.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            kernels,
            bias,
            input: None,
        })
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn kernels(&self) -> &Tensor {
        &self.kernels
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn grad_kernels(&self) -> &Tensor {
        &self.grad_kernels
    }

    pub fn grad_bias(&self) -> &Tensor {
        &self.grad_bias
    }

    pub fn param_count(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = conv2d_valid(x, &self.kernels, &self.bias)?;
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("conv2d"))?;
        let g = conv2d_backward(x, &self.kernels, grad)?;
        for (acc, v) in self.grad_kernels.data_mut().iter_mut().zip(g.kernels.data()) {
            *acc += v;
        }
        for (acc, v) in self.grad_bias.data_mut().iter_mut().zip(g.bias.data()) {
            *acc += v;
        }
        Ok(g.input)
    }
}

/// Elementwise `max(0, x)`. The subgradient at exactly 0 is 0.
#[derive(Clone, Debug, Default)]
pub struct Relu {
    active: Option<Vec<bool>>,
}

impl Relu {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        if mode == Mode::Train {
            self.active = Some(x.data().iter().map(|&v| v > 0.0).collect());
        }
        x.max_scalar(0.0)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let active = self.active.as_ref().ok_or_else(|| no_cache("relu"))?;
        if active.len() != grad.len() {
            return Err(Error::shape("relu upstream gradient size mismatch"));
        }
        let data = grad.data().iter().zip(active).map(|(&g, &a)| if a { g } else { 0.0 }).collect();
        Tensor::new(grad.shape(), data)
    }
}

/// 2×2 max pooling with stride 2.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2 {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2 {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (y, idx) = maxpool2x2(x)?;
        if mode == Mode::Train {
            self.cache = Some((idx, x.shape().to_vec()));
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (idx, shape) = self.cache.as_ref().ok_or_else(|| no_cache("maxpool"))?;
        maxpool2x2_backward(grad, idx, shape)
    }
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 − rate)`, so every entry has expectation 1.
pub fn dropout_mask(rate: f64, shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Tensor::full(shape, keep);
    if rate > 0.0 {
        for m in mask.data_mut() {
            if rng.uniform() < rate {
                *m = 0.0;
            }
        }
    }
    Ok(mask)
}

/// Inverted dropout. Identity in eval mode.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: Rng,
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(rate: f64, rng: Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate, rng, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Eval => Ok(x.clone()),
            Mode::Train => {
                let mask = dropout_mask(self.rate, x.shape(), &mut self.rng)?;
                let y = x.mul(&mask)?;
                self.mask = Some(mask);
                Ok(y)
            }
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or_else(|| no_cache("dropout"))?;
        grad.mul(mask)
    }
}

/// Collapses N×C×H×W to N×(C·H·W).
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Train {
            self.shape = Some(x.shape().to_vec());
        }
        x.clone().reshape(&[x.rows(), x.row_len()])
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.shape.as_ref().ok_or_else(|| no_cache("flatten"))?;
        grad.clone().reshape(shape)
    }
}

/// A hidden layer of a [`Network`](crate::model::Network).
#[derive(Clone, Debug)]
pub enum Layer {
    Dense(Dense),
    Conv2D(Conv2D),
    Relu(Relu),
    MaxPool2(MaxPool2),
    Dropout(Dropout),
    Flatten(Flatten),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.forward(x, mode),
            Layer::Conv2D(l) => l.forward(x, mode),
            Layer::Relu(l) => Ok(l.forward(x, mode)),
            Layer::MaxPool2(l) => l.forward(x, mode),
            Layer::Dropout(l) => l.forward(x, mode),
            Layer::Flatten(l) => l.forward(x, mode),
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.backward(grad),
            Layer::Conv2D(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::MaxPool2(l) => l.backward(grad),
            Layer::Dropout(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
        }
    }

    /// Keras-style type label used in summaries.
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2D(_) => "conv2d",
            Layer::Relu(_) => "activation",
            Layer::MaxPool2(_) => "max_pooling2d",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(l) => l.param_count(),
            Layer::Conv2D(l) => l.param_count(),
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::shape(format!("{} cannot take input {input:?}", self.kind()));
        match self {
            Layer::Dense(l) => match input {
                [d] if *d == l.inputs() => Ok(vec![l.outputs()]),
                _ => Err(bad()),
            },
            Layer::Conv2D(l) => match *input {
                [c, h, w] if c == l.in_channels() && h >= l.kernel_size() && w >= l.kernel_size() => {
                    let k = l.kernel_size();
                    Ok(vec![l.filters(), h - k + 1, w - k + 1])
                }
                _ => Err(bad()),
            },
            Layer::MaxPool2(_) => match *input {
                [c, h, w] if h >= 2 && w >= 2 => Ok(vec![c, h / 2, w / 2]),
                _ => Err(bad()),
            },
            Layer::Flatten(_) => Ok(vec![input.iter().product()]),
            Layer::Relu(_) | Layer::Dropout(_) => Ok(input.to_vec()),
        }
    }

    /// Parameter tensors paired with their gradient slots, weights first.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor, &Tensor)> {
        match self {
            Layer::Dense(l) => vec![(&mut l.weights, &l.grad_weights), (&mut l.bias, &l.grad_bias)],
            Layer::Conv2D(l) => vec![(&mut l.kernels, &l.grad_kernels), (&mut l.bias, &l.grad_bias)],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(l) => vec![&l.weights, &l.bias],
            Layer::Conv2D(l) => vec![&l.kernels, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(l) => vec![&l.grad_weights, &l.grad_bias],
            Layer::Conv2D(l) => vec![&l.grad_kernels, &l.grad_bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(l) => vec![&mut l.weights, &mut l.bias],
            Layer::Conv2D(l) => vec![&mut l.kernels, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn zero_grads(&mut self) {
        match self {
            Layer::Dense(l) => {
                l.grad_weights.data_mut().fill(0.0);
                l.grad_bias.data_mut().fill(0.0);
            }
            Layer::Conv2D(l) => {
                l.grad_kernels.data_mut().fill(0.0);
                l.grad_bias.data_mut().fill(0.0);
            }
            _ => {}
        }
    }
}
