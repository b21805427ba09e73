//! Mini-batch training loop.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::heads::{one_hot, predict};
use crate::layers::Mode;
use crate::optim::{minibatch_iter, OptimizerSpec};
use crate::tensor::Rng;

use super::Network;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives batch order and dropout masks.
    pub seed: u64,
    pub optimizer: OptimizerSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, batch_size: 128, seed: 0, optimizer: OptimizerSpec::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        self.optimizer.build().map(|_| ())
    }
}

/// Mean training loss and train-mode accuracy of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainingLog> {
    train_with(net, data, cfg, &mut |_, _| Ok(()))
}

/// Trains and calls `on_epoch` after every epoch with that epoch's stats.
pub fn train_with(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats, &mut Network) -> Result<()>,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if data.classes() != net.classes() {
        return Err(Error::config(format!(
            "dataset has {} classes, network head has {}",
            data.classes(),
            net.classes()
        )));
    }
    if data.dims() != net.input().dims() {
        return Err(Error::shape(format!(
            "dataset has {} features, network expects {}",
            data.dims(),
            net.input().dims()
        )));
    }
    let mut optimizer = cfg.optimizer.build()?;
    let mut rng = Rng::seed(cfg.seed);
    net.reseed_dropout(rng.next_u64());
    let mut log = TrainingLog::default();
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in minibatch_iter(data.len(), cfg.batch_size, &mut rng)? {
            let x = data.features().select_rows(&batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let y = one_hot(&labels, net.classes())?;
            net.zero_grads();
            let out = net.forward(&x, Mode::Train)?;
            let loss = net.backward(&y)?;
            if !loss.mean.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss in epoch {epoch}")));
            }
            loss_sum += loss.mean * batch.len() as f64;
            let pred = predict(net.head_kind(), &out.head.output)?;
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
            optimizer.step(&mut net.params_and_grads())?;
        }
        let n = data.len().max(1) as f64;
        let stats = EpochStats { epoch, loss: loss_sum / n, accuracy: correct as f64 / n };
        on_epoch(&stats, net)?;
        log.epochs.push(stats);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::heads::HeadKind;
    use crate::model::BuildOptions;
    use crate::tensor::{randn, Tensor};

    /// Two Gaussian blobs in 4 dimensions.
    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::seed(seed);
        let mut x = randn(&[n, 4], 0.5, &mut rng).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        for (i, &l) in labels.iter().enumerate() {
            let shift = if l == 1 { 1.5 } else { -1.5 };
            x.row_mut(i).iter_mut().for_each(|v| *v += shift);
        }
        Dataset::new(x, labels, vec!["a".into(), "b".into()], Split::Train).unwrap()
    }

    fn net(kind: HeadKind) -> Network {
        Network::ffnn_wdbc(4, kind, 2, &BuildOptions::seed(1)).unwrap()
    }

    #[test]
    fn zero_epochs_leave_parameters() {
        let mut n = net(HeadKind::Relu);
        let before: Vec<Tensor> = n.params().into_iter().cloned().collect();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let log = train(&mut n, &blobs(20, 0), &cfg).unwrap();
        assert!(log.epochs.is_empty());
        let after: Vec<Tensor> = n.params().into_iter().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = blobs(200, 4);
        for kind in [HeadKind::Softmax, HeadKind::Relu] {
            let cfg = TrainConfig { epochs: 5, batch_size: 16, seed: 9, ..Default::default() };
            let mut a = net(kind);
            let log_a = train(&mut a, &data, &cfg).unwrap();
            assert_eq!(log_a.epochs.len(), 5);
            assert!(log_a.epochs[4].loss < log_a.epochs[0].loss, "{kind}: {:?}", log_a.losses());
            assert!(log_a.epochs[4].accuracy > 0.9);
            let mut b = net(kind);
            let log_b = train(&mut b, &data, &cfg).unwrap();
            assert_eq!(log_a, log_b);
            assert_eq!(a.params(), b.params());
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut n = net(HeadKind::Softmax);
        let cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(matches!(train(&mut n, &blobs(10, 0), &cfg), Err(Error::Config(_))));
        let cfg = TrainConfig { optimizer: OptimizerSpec::Sgd { learning_rate: -1.0 }, ..Default::default() };
        assert!(matches!(train(&mut n, &blobs(10, 0), &cfg), Err(Error::Config(_))));
        let mut three = Network::ffnn_wdbc(4, HeadKind::Softmax, 3, &BuildOptions::default()).unwrap();
        assert!(matches!(train(&mut three, &blobs(10, 0), &TrainConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_is_numeric_error() {
        let mut n = net(HeadKind::Softmax);
        let mut data = blobs(10, 0);
        let bad = data.features().map(|v| v * 1e300);
        data = data.with_features(bad).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            optimizer: OptimizerSpec::Sgd { learning_rate: 1e10 },
            ..Default::default()
        };
        let err = train(&mut n, &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn hook_sees_every_epoch() {
        let mut seen = Vec::new();
        let cfg = TrainConfig { epochs: 3, batch_size: 8, ..Default::default() };
        train_with(&mut net(HeadKind::Relu), &blobs(40, 1), &cfg, &mut |s, _| {
            seen.push(s.epoch);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
    }
}
