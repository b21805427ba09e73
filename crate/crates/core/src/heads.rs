//! The two classification heads and their losses.
//!
//! Both heads compute raw scores `o = h·θ + b` from the penultimate
//! activation `h`. The Softmax head turns them into a probability
//! distribution and trains with softmax cross-entropy. The ReLU head clamps
//! them, `f = max(0, o)`, predicts `argmax f`, and trains with the ReLU
//! cross-entropy `−log₁₀(max(f_true, ε))` whose gradient flows only through
//! the true-class column.
//!
//! Losses are averaged over the batch, so gradients carry a `1/N` factor.

use std::f64::consts::LN_10;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::{self, argmax_last, Rng, Tensor};

/// Clamp applied inside the ReLU-head logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Softmax,
    Relu,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Softmax => "softmax",
            HeadKind::Relu => "relu",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(HeadKind::Softmax),
            "relu" => Ok(HeadKind::Relu),
            other => Err(Error::config(format!("unknown head {other:?} (softmax|relu)"))),
        }
    }
}

/// Batch loss: the mean and the per-example terms it averages.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub mean: f64,
    pub per_example: Vec<f64>,
}

impl LossValue {
    fn from_terms(per_example: Vec<f64>) -> Self {
        let mean = per_example.iter().sum::<f64>() / per_example.len() as f64;
        LossValue { mean, per_example }
    }
}

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, k] => Ok((n, k)),
        _ => Err(Error::shape(format!("{what} must be N×K, got {:?}", t.shape()))),
    }
}

/// Index of the single 1 in each row of a one-hot matrix.
pub fn true_classes(y: &Tensor) -> Result<Vec<usize>> {
    let (n, _) = matrix_dims(y, "targets")?;
    (0..n)
        .map(|i| {
            let row = y.row(i);
            let hot: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, _)| j).collect();
            match hot.as_slice() {
                [k] if row[*k] == 1.0 => Ok(*k),
                _ => Err(Error::input(format!("target row {i} is not one-hot: {row:?}"))),
            }
        })
        .collect()
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    if labels.is_empty() || classes == 0 {
        return Err(Error::input("one_hot needs at least one label and one class"));
    }
    let mut y = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::input(format!("label {l} outside 0..{classes}")));
        }
        y.data_mut()[i * classes + l] = 1.0;
    }
    Ok(y)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(o: &Tensor) -> Result<Tensor> {
    let (n, _) = matrix_dims(o, "logits")?;
    if !o.all_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let mut p = o.clone();
    for i in 0..n {
        let row = p.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(p)
}

/// Softmax cross-entropy (natural log) and its gradient `(p − y)/N` with
/// respect to the logits.
pub fn softmax_xent(o: &Tensor, y: &Tensor) -> Result<(LossValue, Tensor)> {
    if o.shape() != y.shape() {
        return Err(Error::shape(format!("logits {:?} vs targets {:?}", o.shape(), y.shape())));
    }
    let truth = true_classes(y)?;
    let p = softmax(o)?;
    let n = truth.len();
    let mut terms = Vec::with_capacity(n);
    for (i, &k) in truth.iter().enumerate() {
        let row = o.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        terms.push(lse - row[k]);
    }
    let mut grad = p;
    for (i, &k) in truth.iter().enumerate() {
        grad.row_mut(i)[k] -= 1.0;
    }
    let grad = grad.scale(1.0 / n as f64);
    Ok((LossValue::from_terms(terms), grad))
}

fn raw_scores(h: &Tensor, theta: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut o = tensor::matmul(h, theta)?;
    let k = theta.shape()[1];
    if b.shape() != [k] {
        return Err(Error::shape(format!("head bias {:?} does not match {k} classes", b.shape())));
    }
    for i in 0..o.rows() {
        for (v, bias) in o.row_mut(i).iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    Ok(o)
}

/// `max(0, h·θ + b)` elementwise.
pub fn relu_head_scores(h: &Tensor, theta: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(raw_scores(h, theta, b)?.max_scalar(0.0))
}

/// ReLU cross-entropy: per example `−log₁₀(max(score_true, ε))`.
///
/// The loss is negative once the true-class score exceeds 1 and has no lower
/// bound.
pub fn relu_log_loss(scores: &Tensor, y: &Tensor) -> Result<LossValue> {
    if scores.shape() != y.shape() {
        return Err(Error::shape(format!("scores {:?} vs targets {:?}", scores.shape(), y.shape())));
    }
    let truth = true_classes(y)?;
    let terms = truth
        .iter()
        .enumerate()
        .map(|(i, &k)| -scores.row(i)[k].max(LOG_CLAMP).log10())
        .collect();
    Ok(LossValue::from_terms(terms))
}

/// Gradients of the batch-mean ReLU cross-entropy.
#[derive(Clone, Debug)]
pub struct ReluHeadGrads {
    pub h: Tensor,
    pub theta: Tensor,
    pub bias: Tensor,
}

/// Upstream gradient with respect to the raw scores: `−1/(o_k·ln 10)/N` at
/// the true class `k` when `o_k > ε`, zero everywhere else.
fn relu_grad_raw(raw: &Tensor, truth: &[usize]) -> Tensor {
    let n = truth.len() as f64;
    let mut g = Tensor::zeros(raw.shape());
    for (i, &k) in truth.iter().enumerate() {
        let o = raw.row(i)[k];
        if o > LOG_CLAMP {
            g.row_mut(i)[k] = -1.0 / (o * LN_10) / n;
        }
    }
    g
}

fn linear_backward(h: &Tensor, theta: &Tensor, grad_o: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let grad_theta = tensor::matmul_tn(h, grad_o)?;
    let mut grad_b = Tensor::zeros(&[grad_o.shape()[1]]);
    for i in 0..grad_o.rows() {
        for (acc, g) in grad_b.data_mut().iter_mut().zip(grad_o.row(i)) {
            *acc += g;
        }
    }
    let grad_h = tensor::matmul_nt(grad_o, theta)?;
    Ok((grad_h, grad_theta, grad_b))
}

/// Gradients of the ReLU cross-entropy with respect to the penultimate
/// activation and the head parameters.
///
/// Only the true-class column contributes. Examples whose true-class raw
/// score is at or below the clamp get zero gradient.
pub fn relu_loss_grad(h: &Tensor, theta: &Tensor, b: &Tensor, y: &Tensor) -> Result<ReluHeadGrads> {
    let raw = raw_scores(h, theta, b)?;
    if raw.shape() != y.shape() {
        return Err(Error::shape(format!("scores {:?} vs targets {:?}", raw.shape(), y.shape())));
    }
    let truth = true_classes(y)?;
    let g = relu_grad_raw(&raw, &truth);
    let (grad_h, grad_theta, grad_b) = linear_backward(h, theta, &g)?;
    Ok(ReluHeadGrads { h: grad_h, theta: grad_theta, bias: grad_b })
}

/// Class predictions from a head's output (probabilities or clamped scores).
///
/// Ties, including the all-zero rows a ReLU head produces when every raw
/// score is negative, go to the lowest class index.
pub fn predict(_head: HeadKind, output: &Tensor) -> Result<Vec<usize>> {
    // Both outputs are monotone in the raw scores, so one argmax serves both.
    argmax_last(output)
}

/// Fraction of clamped (exactly zero) ReLU-head scores.
#[derive(Clone, Debug, PartialEq)]
pub struct DeadUnitStats {
    pub overall: f64,
    pub per_class: Vec<f64>,
}

pub fn dead_unit_stats(scores: &Tensor) -> Result<DeadUnitStats> {
    let (n, k) = matrix_dims(scores, "scores")?;
    let mut per_class = vec![0.0; k];
    for i in 0..n {
        for (c, &v) in scores.row(i).iter().enumerate() {
            if v == 0.0 {
                per_class[c] += 1.0;
            }
        }
    }
    let overall = per_class.iter().sum::<f64>() / (n * k) as f64;
    for c in &mut per_class {
        *c /= n as f64;
    }
    Ok(DeadUnitStats { overall, per_class })
}

/// Fraction of examples whose true-class ReLU-head score is clamped to 0.
pub fn dead_true_class_fraction(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, k) = matrix_dims(scores, "scores")?;
    if labels.len() != n {
        return Err(Error::shape("label count does not match scores"));
    }
    let mut dead = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::input(format!("label {l} outside 0..{k}")));
        }
        if scores.row(i)[l] <= 0.0 {
            dead += 1;
        }
    }
    Ok(dead as f64 / n as f64)
}

/// Output of a head forward pass.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// `h·θ + b`.
    pub raw: Tensor,
    /// Softmax probabilities or clamped ReLU scores.
    pub output: Tensor,
}

/// The classification layer of a network: parameters `θ` (D×K) and `b` (K)
/// plus the selected head rule.
#[derive(Clone, Debug)]
pub struct Head {
    kind: HeadKind,
    theta: Tensor,
    bias: Tensor,
    grad_theta: Tensor,
    grad_bias: Tensor,
    cache: Option<(Tensor, Tensor)>,
}

impl Head {
    pub fn new(kind: HeadKind, inputs: usize, classes: usize, init_std: f64, rng: &mut Rng) -> Result<Self> {
        let theta = tensor::randn(&[inputs, classes], init_std, rng)?;
        Head::from_parts(kind, theta, Tensor::zeros(&[classes]))
    }

    pub fn from_parts(kind: HeadKind, theta: Tensor, bias: Tensor) -> Result<Self> {
        let &[d, k] = theta.shape() else {
            return Err(Error::shape("head weights must be D×K"));
        };
        if bias.shape() != [k] {
            return Err(Error::shape(format!("head bias {:?} does not match {k} classes", bias.shape())));
        }
        Ok(Head {
            kind,
            grad_theta: Tensor::zeros(&[d, k]),
            grad_bias: Tensor::zeros(&[k]),
            theta,
            bias,
            cache: None,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn inputs(&self) -> usize {
        self.theta.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.theta.shape()[1]
    }

    pub fn theta(&self) -> &Tensor {
        &self.theta
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn theta_mut(&mut self) -> &mut Tensor {
        &mut self.theta
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    pub fn grad_theta(&self) -> &Tensor {
        &self.grad_theta
    }

    pub fn grad_bias(&self) -> &Tensor {
        &self.grad_bias
    }

    pub fn param_count(&self) -> usize {
        self.theta.len() + self.bias.len()
    }

    pub fn forward(&mut self, h: &Tensor, mode: Mode) -> Result<HeadOutput> {
        let raw = raw_scores(h, &self.theta, &self.bias)?;
        let output = match self.kind {
            HeadKind::Softmax => softmax(&raw)?,
            HeadKind::Relu => raw.max_scalar(0.0),
        };
        self.cache = (mode == Mode::Train).then(|| (h.clone(), raw.clone()));
        Ok(HeadOutput { raw, output })
    }

    /// Loss of a forward output against one-hot targets.
    pub fn loss(&self, out: &HeadOutput, y: &Tensor) -> Result<LossValue> {
        match self.kind {
            HeadKind::Softmax => Ok(softmax_xent(&out.raw, y)?.0),
            HeadKind::Relu => relu_log_loss(&out.output, y),
        }
    }

    /// Loss of the cached train-mode forward; accumulates `θ`, `b` gradients
    /// and returns the gradient with respect to `h`.
    pub fn backward(&mut self, y: &Tensor) -> Result<(LossValue, Tensor)> {
        let (h, raw) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("head: backward called without a train-mode forward"))?;
        if raw.shape() != y.shape() {
            return Err(Error::shape(format!("scores {:?} vs targets {:?}", raw.shape(), y.shape())));
        }
        let (loss, grad_raw) = match self.kind {
            HeadKind::Softmax => softmax_xent(raw, y)?,
            HeadKind::Relu => {
                let loss = relu_log_loss(&raw.max_scalar(0.0), y)?;
                (loss, relu_grad_raw(raw, &true_classes(y)?))
            }
        };
        let (grad_h, grad_theta, grad_b) = linear_backward(h, &self.theta, &grad_raw)?;
        for (acc, g) in self.grad_theta.data_mut().iter_mut().zip(grad_theta.data()) {
            *acc += g;
        }
        for (acc, g) in self.grad_bias.data_mut().iter_mut().zip(grad_b.data()) {
            *acc += g;
        }
        Ok((loss, grad_h))
    }

    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor, &Tensor)> {
        vec![(&mut self.theta, &self.grad_theta), (&mut self.bias, &self.grad_bias)]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.theta, &mut self.bias]
    }

    pub fn zero_grads(&mut self) {
        self.grad_theta.data_mut().fill(0.0);
        self.grad_bias.data_mut().fill(0.0);
    }
}
