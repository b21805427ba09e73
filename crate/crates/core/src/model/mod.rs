//! Network assembly, forward/backward orchestration and parameter access.

mod checkpoint;
mod train;

pub use checkpoint::{decode, encode, load, save, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, train_with, EpochStats, TrainConfig, TrainingLog};

use std::fmt;

use crate::error::{Error, Result};
use crate::heads::{Head, HeadKind, HeadOutput, LossValue};
use crate::layers::{Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2, Mode, Relu, DEFAULT_INIT_STD};
use crate::tensor::{Rng, Tensor};

/// Shape of one input example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputSpec {
    Flat(usize),
    /// Channels × height × width. Flat rows of `c·h·w` features are reshaped.
    Image { channels: usize, height: usize, width: usize },
}

impl InputSpec {
    pub fn dims(&self) -> usize {
        match *self {
            InputSpec::Flat(d) => d,
            InputSpec::Image { channels, height, width } => channels * height * width,
        }
    }

    fn shape(&self) -> Vec<usize> {
        match *self {
            InputSpec::Flat(d) => vec![d],
            InputSpec::Image { channels, height, width } => vec![channels, height, width],
        }
    }
}

/// Which named builder produced a network; drives summary layer names.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Cnn,
    Ffnn,
    Wdbc,
    Custom,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Cnn => "cnn",
            Arch::Ffnn => "ffnn",
            Arch::Wdbc => "wdbc",
            Arch::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Option<Arch> {
        [Arch::Cnn, Arch::Ffnn, Arch::Wdbc, Arch::Custom].into_iter().find(|a| a.as_str() == s)
    }

    /// Dropout rates used when [`BuildOptions::dropout`] is `None`.
    pub fn default_dropout(self) -> &'static [f64] {
        match self {
            Arch::Cnn => &[0.25, 0.25, 0.5],
            Arch::Ffnn => &[0.2, 0.2, 0.2],
            Arch::Wdbc => &[0.2, 0.2],
            Arch::Custom => &[],
        }
    }

    /// First Keras-style index for (dense, dropout) names. The FFNN table
    /// continues numbering after the CNN table.
    fn name_offsets(self) -> (usize, usize) {
        match self {
            Arch::Ffnn => (3, 4),
            _ => (1, 1),
        }
    }
}

/// Construction settings shared by the named builders.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    pub seed: u64,
    pub init_std: f64,
    /// Dropout rate per dropout slot; `None` keeps the architecture default.
    pub dropout: Option<Vec<f64>>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { seed: 0, init_std: DEFAULT_INIT_STD, dropout: None }
    }
}

impl BuildOptions {
    pub fn seed(seed: u64) -> Self {
        BuildOptions { seed, ..Self::default() }
    }

    fn rates(&self, defaults: &[f64]) -> Result<Vec<f64>> {
        match &self.dropout {
            None => Ok(defaults.to_vec()),
            Some(r) if r.len() == 1 => Ok(vec![r[0]; defaults.len()]),
            Some(r) if r.len() == defaults.len() => Ok(r.clone()),
            Some(r) => Err(Error::config(format!(
                "{} dropout rates given, architecture has {} dropout layers",
                r.len(),
                defaults.len()
            ))),
        }
    }
}

/// Incremental network construction with shape checking at each step.
pub struct NetworkBuilder {
    input: InputSpec,
    arch: Arch,
    layers: Vec<Layer>,
    shape: Vec<usize>,
    init_std: f64,
    rng: Rng,
}

impl NetworkBuilder {
    pub fn new(input: InputSpec, seed: u64) -> Self {
        NetworkBuilder {
            input,
            arch: Arch::Custom,
            layers: Vec::new(),
            shape: input.shape(),
            init_std: DEFAULT_INIT_STD,
            rng: Rng::seed(seed),
        }
    }

    pub fn init_std(mut self, std: f64) -> Self {
        self.init_std = std;
        self
    }

    fn arch(mut self, arch: Arch) -> Self {
        self.arch = arch;
        self
    }

    fn push(mut self, layer: Layer) -> Result<Self> {
        self.shape = layer.output_shape(&self.shape)?;
        self.layers.push(layer);
        Ok(self)
    }

    /// Valid convolution followed by ReLU.
    pub fn conv(self, filters: usize, kernel: usize) -> Result<Self> {
        let mut b = self;
        let channels = match b.shape.as_slice() {
            [c, _, _] => *c,
            other => return Err(Error::shape(format!("conv needs C×H×W input, got {other:?}"))),
        };
        let conv = Conv2D::new(channels, filters, kernel, b.init_std, &mut b.rng)?;
        b.push(Layer::Conv2D(conv))?.push(Layer::Relu(Relu::default()))
    }

    pub fn pool(self) -> Result<Self> {
        self.push(Layer::MaxPool2(MaxPool2::default()))
    }

    pub fn flatten(self) -> Result<Self> {
        self.push(Layer::Flatten(Flatten::default()))
    }

    /// Fully connected layer followed by ReLU.
    pub fn dense(self, units: usize) -> Result<Self> {
        let mut b = self;
        let inputs = match b.shape.as_slice() {
            [d] => *d,
            other => return Err(Error::shape(format!("dense needs flat input, got {other:?}"))),
        };
        let dense = Dense::new(inputs, units, b.init_std, &mut b.rng)?;
        b.push(Layer::Dense(dense))?.push(Layer::Relu(Relu::default()))
    }

    pub fn dropout(self, rate: f64) -> Result<Self> {
        let mut b = self;
        let rng = b.rng.fork();
        let layer = Dropout::new(rate, rng)?;
        b.push(Layer::Dropout(layer))
    }

    pub fn head(self, kind: HeadKind, classes: usize) -> Result<Network> {
        let mut b = self;
        let inputs = match b.shape.as_slice() {
            [d] => *d,
            other => return Err(Error::shape(format!("head needs flat input, got {other:?}"))),
        };
        if classes < 2 {
            return Err(Error::config("a classifier needs at least 2 classes"));
        }
        let head = Head::new(kind, inputs, classes, b.init_std, &mut b.rng)?;
        Ok(Network { input: b.input, arch: b.arch, layers: b.layers, head })
    }
}

/// A feed-forward classifier: hidden layers followed by one head.
#[derive(Clone, Debug)]
pub struct Network {
    input: InputSpec,
    arch: Arch,
    layers: Vec<Layer>,
    head: Head,
}

/// Hidden activation and head output of a forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub hidden: Tensor,
    pub head: HeadOutput,
}

/// One row of [`Network::summary`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SummaryRow {
    pub name: String,
    pub kind: &'static str,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

impl Network {
    pub fn builder(input: InputSpec, seed: u64) -> NetworkBuilder {
        NetworkBuilder::new(input, seed)
    }

    /// VGG-like CNN on a 1×16×16 input.
    pub fn cnn(head: HeadKind, classes: usize, opts: &BuildOptions) -> Result<Network> {
        let d = opts.rates(Arch::Cnn.default_dropout())?;
        NetworkBuilder::new(InputSpec::Image { channels: 1, height: 16, width: 16 }, opts.seed)
            .arch(Arch::Cnn)
            .init_std(opts.init_std)
            .conv(32, 3)?
            .conv(32, 3)?
            .pool()?
            .dropout(d[0])?
            .conv(64, 3)?
            .conv(64, 3)?
            .pool()?
            .dropout(d[1])?
            .flatten()?
            .dense(256)?
            .dropout(d[2])?
            .head(head, classes)
    }

    /// Three 512-unit hidden layers, each followed by dropout.
    pub fn ffnn(input_dim: usize, head: HeadKind, classes: usize, opts: &BuildOptions) -> Result<Network> {
        let d = opts.rates(Arch::Ffnn.default_dropout())?;
        let mut b = NetworkBuilder::new(InputSpec::Flat(input_dim), opts.seed)
            .arch(Arch::Ffnn)
            .init_std(opts.init_std);
        for rate in d {
            b = b.dense(512)?.dropout(rate)?;
        }
        b.head(head, classes)
    }

    /// 64 → 32 hidden units for the 30-feature diagnostic data.
    pub fn ffnn_wdbc(input_dim: usize, head: HeadKind, classes: usize, opts: &BuildOptions) -> Result<Network> {
        let d = opts.rates(Arch::Wdbc.default_dropout())?;
        NetworkBuilder::new(InputSpec::Flat(input_dim), opts.seed)
            .arch(Arch::Wdbc)
            .init_std(opts.init_std)
            .dense(64)?
            .dropout(d[0])?
            .dense(32)?
            .dropout(d[1])?
            .head(head, classes)
    }

    pub fn input(&self) -> InputSpec {
        self.input
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Head {
        &mut self.head
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head.kind()
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum::<usize>() + self.head.param_count()
    }

    /// Keras-style table of parameterized, pooling, dropout and flatten
    /// layers; activations are folded into the preceding row. The head is
    /// the final dense row.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let (dense0, drop0) = self.arch.name_offsets();
        let mut counters = std::collections::HashMap::new();
        let mut next = |kind: &'static str| {
            let start = match kind {
                "dense" => dense0,
                "dropout" => drop0,
                _ => 1,
            };
            let c = counters.entry(kind).or_insert(start);
            let name = format!("{kind}_{c}");
            *c += 1;
            name
        };
        let mut rows = Vec::new();
        let mut shape = self.input.shape();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).expect("builder validated shapes");
            if matches!(layer, Layer::Relu(_)) {
                continue;
            }
            let kind = layer.kind();
            rows.push(SummaryRow { name: next(kind), kind, output_shape: shape.clone(), params: layer.param_count() });
        }
        rows.push(SummaryRow {
            name: next("dense"),
            kind: "dense",
            output_shape: vec![self.head.classes()],
            params: self.head.param_count(),
        });
        rows
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Sets every dropout rate to 0.
    pub(crate) fn disable_dropout(&mut self) {
        for layer in &mut self.layers {
            if let Layer::Dropout(d) = layer {
                *d = Dropout::new(0.0, Rng::seed(0)).expect("0 is a valid rate");
            }
        }
    }

    pub(crate) fn shape_input(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let want = self.input.dims();
        if x.row_len() != want {
            return Err(Error::shape(format!(
                "input rows have {} features, network expects {want}",
                x.row_len()
            )));
        }
        match self.input {
            InputSpec::Flat(d) if x.rank() == 2 => x.clone().reshape(&[n, d]),
            InputSpec::Flat(_) => Err(Error::shape(format!("flat network given input {:?}", x.shape()))),
            InputSpec::Image { channels, height, width } => {
                let ok = x.rank() == 2 || x.shape()[1..] == [channels, height, width];
                if !ok {
                    return Err(Error::shape(format!("image network given input {:?}", x.shape())));
                }
                x.clone().reshape(&[n, channels, height, width])
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Forward> {
        let mut a = self.shape_input(x)?;
        for layer in &mut self.layers {
            a = layer.forward(&a, mode)?;
        }
        let head = self.head.forward(&a, mode)?;
        Ok(Forward { hidden: a, head })
    }

    /// Backpropagates one-hot targets through the cached train-mode forward,
    /// accumulating gradients for every parameter.
    pub fn backward(&mut self, y: &Tensor) -> Result<LossValue> {
        let (loss, mut grad) = self.head.backward(y)?;
        for layer in self.layers.iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        Ok(loss)
    }

    /// Eval-mode head outputs computed in chunks of `chunk` rows.
    pub fn predict_output(&mut self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = x.shape()[0];
        let chunk = chunk.max(1);
        let mut data = Vec::with_capacity(n * self.classes());
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            let out = self.forward(&x.select_rows(&idx)?, Mode::Eval)?;
            data.extend_from_slice(out.head.output.data());
            start += chunk;
        }
        Tensor::new(&[n, self.classes()], data)
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        let out = self.predict_output(x, 1000)?;
        crate::heads::predict(self.head_kind(), &out)
    }

    pub fn zero_grads(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grads);
        self.head.zero_grads();
    }

    /// Parameter tensors with gradient slots: hidden layers in order, then
    /// head weights and bias.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor, &Tensor)> {
        let mut out: Vec<(&mut Tensor, &Tensor)> =
            self.layers.iter_mut().flat_map(Layer::params_and_grads).collect();
        out.extend(self.head.params_and_grads());
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.layers.iter().flat_map(Layer::params).collect();
        out.push(self.head.theta());
        out.push(self.head.bias());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.layers.iter_mut().flat_map(Layer::params_mut).collect();
        out.extend(self.head.params_mut());
        out
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.layers.iter().flat_map(Layer::grads).collect();
        out.push(self.head.grad_theta());
        out.push(self.head.grad_bias());
        out
    }

    /// Re-seeds every dropout layer from `seed`, in layer order.
    pub fn reseed_dropout(&mut self, seed: u64) {
        let mut rng = Rng::seed(seed);
        for layer in &mut self.layers {
            if let Layer::Dropout(d) = layer {
                *d = Dropout::new(d.rate(), rng.fork()).expect("rate already validated");
            }
        }
    }

    /// Architecture descriptor: one line per element.
    pub fn descriptor(&self) -> String {
        let mut lines = vec![format!("arch={}", self.arch.as_str())];
        lines.push(match self.input {
            InputSpec::Flat(d) => format!("input=flat:{d}"),
            InputSpec::Image { channels, height, width } => format!("input=image:{channels}:{height}:{width}"),
        });
        for layer in &self.layers {
            lines.push(match layer {
                Layer::Dense(l) => format!("dense:{}:{}", l.inputs(), l.outputs()),
                Layer::Conv2D(l) => format!("conv2d:{}:{}:{}", l.in_channels(), l.filters(), l.kernel_size()),
                Layer::Relu(_) => "relu".into(),
                Layer::MaxPool2(_) => "maxpool2".into(),
                Layer::Dropout(l) => format!("dropout:{}", l.rate()),
                Layer::Flatten(_) => "flatten".into(),
            });
        }
        lines.push(format!("head:{}:{}:{}", self.head.kind(), self.head.inputs(), self.head.classes()));
        lines.join("\n")
    }

    /// Rebuilds a zero-initialized network from a descriptor.
    pub fn from_descriptor(text: &str) -> Result<Network> {
        let bad = |line: &str| Error::CorruptPayload(format!("bad descriptor line {line:?}"));
        let mut lines = text.lines();
        let arch_line = lines.next().ok_or_else(|| bad(""))?;
        let arch = arch_line.strip_prefix("arch=").and_then(Arch::parse).ok_or_else(|| bad(arch_line))?;
        let input_line = lines.next().ok_or_else(|| bad(""))?;
        let nums = |rest: &str, line: &str| -> Result<Vec<usize>> {
            rest.split(':').map(|p| p.parse::<usize>().map_err(|_| bad(line))).collect()
        };
        let input = match input_line.strip_prefix("input=") {
            Some(rest) if rest.starts_with("flat:") => {
                let v = nums(&rest[5..], input_line)?;
                match v[..] {
                    [d] if d > 0 => InputSpec::Flat(d),
                    _ => return Err(bad(input_line)),
                }
            }
            Some(rest) if rest.starts_with("image:") => match nums(&rest[6..], input_line)?[..] {
                [c, h, w] if c * h * w > 0 => InputSpec::Image { channels: c, height: h, width: w },
                _ => return Err(bad(input_line)),
            },
            _ => return Err(bad(input_line)),
        };
        let mut layers = Vec::new();
        let mut shape = input.shape();
        let mut head = None;
        for line in lines {
            if head.is_some() {
                return Err(bad(line));
            }
            let (kind, rest) = line.split_once(':').unwrap_or((line, ""));
            let layer = match kind {
                "dense" => match nums(rest, line)?[..] {
                    [i, o] if i > 0 && o > 0 => {
                        Layer::Dense(Dense::from_parts(Tensor::zeros(&[i, o]), Tensor::zeros(&[o]))?)
                    }
                    _ => return Err(bad(line)),
                },
                "conv2d" => match nums(rest, line)?[..] {
                    [c, f, k] if c > 0 && f > 0 && k > 0 => Layer::Conv2D(Conv2D::from_parts(
                        Tensor::zeros(&[f, c, k, k]),
                        Tensor::zeros(&[f]),
                    )?),
                    _ => return Err(bad(line)),
                },
                "relu" => Layer::Relu(Relu::default()),
                "maxpool2" => Layer::MaxPool2(MaxPool2::default()),
                "flatten" => Layer::Flatten(Flatten::default()),
                "dropout" => {
                    let rate: f64 = rest.parse().map_err(|_| bad(line))?;
                    Layer::Dropout(Dropout::new(rate, Rng::seed(0)).map_err(|_| bad(line))?)
                }
                "head" => {
                    let parts: Vec<&str> = rest.split(':').collect();
                    let [kind, d, k] = parts[..] else { return Err(bad(line)) };
                    let kind: HeadKind = kind.parse().map_err(|_| bad(line))?;
                    let (d, k) = (d.parse().map_err(|_| bad(line))?, k.parse().map_err(|_| bad(line))?);
                    if shape != [d] || k < 2 {
                        return Err(bad(line));
                    }
                    head = Some(Head::from_parts(kind, Tensor::zeros(&[d, k]), Tensor::zeros(&[k]))?);
                    continue;
                }
                _ => return Err(bad(line)),
            };
            shape = layer.output_shape(&shape).map_err(|_| bad(line))?;
            layers.push(layer);
        }
        let head = head.ok_or_else(|| Error::CorruptPayload("descriptor has no head".into()))?;
        Ok(Network { input, arch, layers, head })
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22}{:<18}{:>10}", "Layer (type)", "Output Shape", "Param #")?;
        for row in self.summary() {
            let shape = format!("{:?}", row.output_shape);
            writeln!(f, "{:<22}{:<18}{:>10}", format!("{} ({})", row.name, row.kind), shape, row.params)?;
        }
        write!(f, "Total params: {}", self.param_count())
    }
}
