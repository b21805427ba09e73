//! Parameter update rules and mini-batch scheduling.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// A parameter tensor paired with its gradient.
pub type ParamPair<'a> = (&'a mut Tensor, &'a Tensor);

pub trait Optimizer {
    /// Applies one update to every parameter using its current gradient.
    fn step(&mut self, params: &mut [ParamPair<'_>]) -> Result<()>;
}

fn check_pairs(params: &[ParamPair<'_>]) -> Result<()> {
    for (i, (p, g)) in params.iter().enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::state(format!(
                "parameter {i}: shape {:?} but gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam with bias-corrected moment estimates and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam { config, first: Vec::new(), second: Vec::new(), t: 0 })
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [ParamPair<'_>]) -> Result<()> {
        check_pairs(params)?;
        if self.t == 0 {
            self.first = params.iter().map(|(p, _)| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, (p, _))| m.shape() != p.shape())
        {
            return Err(Error::state("parameter set changed between Adam steps"));
        }
        self.t += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
            for ((theta, &grad), (m, v)) in p.data_mut().iter_mut().zip(g.data()).zip(moments) {
                *m = beta1 * *m + (1.0 - beta1) * grad;
                *v = beta2 * *v + (1.0 - beta2) * grad * grad;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent, `θ ← θ − α·∇θ`.
#[derive(Clone, Debug)]
pub struct Sgd {
    learning_rate: f64,
}

impl Sgd {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Sgd { learning_rate })
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [ParamPair<'_>]) -> Result<()> {
        check_pairs(params)?;
        for (p, g) in params.iter_mut() {
            for (theta, grad) in p.data_mut().iter_mut().zip(g.data()) {
                *theta -= self.learning_rate * grad;
            }
        }
        Ok(())
    }
}

/// Serializable optimizer choice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerSpec {
    Adam(AdamConfig),
    Sgd { learning_rate: f64 },
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::Adam(AdamConfig::default())
    }
}

impl OptimizerSpec {
    pub fn build(&self) -> Result<Box<dyn Optimizer>> {
        Ok(match *self {
            OptimizerSpec::Adam(cfg) => Box::new(Adam::new(cfg)?),
            OptimizerSpec::Sgd { learning_rate } => Box::new(Sgd::new(learning_rate)?),
        })
    }
}

/// One epoch's shuffled partition of `0..n` into batches of `batch` indices;
/// the last batch may be short.
pub fn minibatch_iter(n: usize, batch: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    Ok(order.chunks(batch).map(<[usize]>::to_vec).collect())
}
