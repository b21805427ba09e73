//! Finite-difference gradient checking and dead-unit tracking.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::heads::{dead_true_class_fraction, one_hot, true_classes, HeadKind};
use crate::layers::{Layer, Mode};
use crate::model::{train_with, InputSpec, Network, TrainConfig};
use crate::tensor::{randn, Rng, Tensor};

/// Largest network the checker accepts.
pub const MAX_GRADCHECK_PARAMS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates moving a ReLU pre-activation that lies this close to 0
    /// are skipped.
    pub skip_band: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to roundoff do not produce spurious ratios.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, skip_band: 1e-4, floor: 1e-6 }
    }
}

/// Results for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub coordinates: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub head: HeadKind,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn skipped(&self) -> usize {
        self.blocks.iter().map(|b| b.skipped).sum()
    }

    pub fn coordinates(&self) -> usize {
        self.blocks.iter().map(|b| b.coordinates).sum()
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

/// Loss plus every ReLU pre-activation that can affect it.
struct Probe {
    loss: f64,
    kinks: Vec<f64>,
}

fn probe(net: &mut Network, x: &Tensor, y: &Tensor, labels: &[usize]) -> Result<Probe> {
    let mut a = net.shape_input(x)?;
    let mut kinks = Vec::new();
    for layer in net.layers_mut() {
        if matches!(layer, Layer::Relu(_)) {
            kinks.extend_from_slice(a.data());
        }
        a = layer.forward(&a, Mode::Eval)?;
    }
    let head = net.head_mut().forward(&a, Mode::Eval)?;
    if net.head_kind() == HeadKind::Relu {
        kinks.extend(labels.iter().enumerate().map(|(i, &l)| head.raw.row(i)[l]));
    }
    let loss = net.head().loss(&head, y)?.mean;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite loss during gradient check".into()));
    }
    Ok(Probe { loss, kinks })
}

/// True when the ± perturbation crosses or approaches a ReLU kink.
fn near_kink(base: &Probe, up: &Probe, down: &Probe, band: f64) -> bool {
    base.kinks.iter().zip(&up.kinks).zip(&down.kinks).any(|((&b, &u), &d)| {
        if u == d {
            return false;
        }
        let crosses = (u > 0.0) != (d > 0.0) || (b > 0.0) != (u > 0.0);
        crosses || b.abs() < band || u.abs() < band || d.abs() < band
    })
}

fn block_names(net: &Network) -> Vec<String> {
    let mut names = Vec::new();
    for row in net.summary().into_iter().filter(|r| r.params > 0) {
        names.push(format!("{}/kernel", row.name));
        names.push(format!("{}/bias", row.name));
    }
    names
}

/// Compares analytic gradients of the mean loss on `(x, y)` with central
/// differences, coordinate by coordinate. Dropout is disabled on the copy
/// being checked.
pub fn gradcheck(net: &Network, x: &Tensor, y: &Tensor, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(opts.step > 0.0) || !(opts.skip_band >= 0.0) || !(opts.floor > 0.0) {
        return Err(Error::config(format!("invalid gradient-check options {opts:?}")));
    }
    if net.param_count() > MAX_GRADCHECK_PARAMS {
        return Err(Error::config(format!(
            "network has {} parameters; gradient checks are limited to {MAX_GRADCHECK_PARAMS}",
            net.param_count()
        )));
    }
    let mut net = net.clone();
    net.disable_dropout();
    let labels = true_classes(y)?;
    net.zero_grads();
    net.forward(x, Mode::Train)?;
    net.backward(y)?;
    let analytic: Vec<Vec<f64>> = net.grads().iter().map(|g| g.data().to_vec()).collect();
    let base = probe(&mut net, x, y, &labels)?;
    let names = block_names(&net);
    let mut blocks = Vec::with_capacity(analytic.len());
    for (b, grads) in analytic.iter().enumerate() {
        let (mut skipped, mut max, mut sum, mut checked) = (0, 0.0f64, 0.0, 0usize);
        for (i, &a) in grads.iter().enumerate() {
            let orig = net.params()[b].data()[i];
            net.params_mut()[b].data_mut()[i] = orig + opts.step;
            let up = probe(&mut net, x, y, &labels)?;
            net.params_mut()[b].data_mut()[i] = orig - opts.step;
            let down = probe(&mut net, x, y, &labels)?;
            net.params_mut()[b].data_mut()[i] = orig;
            if near_kink(&base, &up, &down, opts.skip_band) {
                skipped += 1;
                continue;
            }
            let numeric = (up.loss - down.loss) / (2.0 * opts.step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            max = max.max(rel);
            sum += rel;
            checked += 1;
        }
        blocks.push(BlockReport {
            name: names.get(b).cloned().unwrap_or_else(|| format!("block_{b}")),
            coordinates: grads.len(),
            skipped,
            max_rel_error: max,
            mean_rel_error: if checked > 0 { sum / checked as f64 } else { 0.0 },
        });
    }
    Ok(GradCheckReport { head: net.head_kind(), blocks })
}

/// A small network with a batch to check it on.
pub struct ToyCase {
    pub name: &'static str,
    pub net: Network,
    pub x: Tensor,
    pub y: Tensor,
}

/// The 8-input FFNN and 1×6×6 CNN used by the gradient-check command. For
/// the ReLU head the output bias is raised so every true-class score starts
/// well above the clamp.
pub fn toy_cases(head: HeadKind, seed: u64) -> Result<Vec<ToyCase>> {
    let mut rng = Rng::seed(seed);
    let labels = [0, 1, 2, 1];
    let y = one_hot(&labels, 3)?;
    let ffnn = Network::builder(InputSpec::Flat(8), seed)
        .init_std(0.4)
        .dense(6)?
        .dense(5)?
        .head(head, 3)?;
    let cnn = Network::builder(InputSpec::Image { channels: 1, height: 6, width: 6 }, seed.wrapping_add(1))
        .init_std(0.4)
        .conv(3, 3)?
        .pool()?
        .flatten()?
        .dense(4)?
        .head(head, 3)?;
    let mut cases = vec![
        ToyCase { name: "ffnn", net: ffnn, x: randn(&[4, 8], 1.0, &mut rng)?, y: y.clone() },
        ToyCase { name: "cnn", net: cnn, x: randn(&[4, 36], 1.0, &mut rng)?, y },
    ];
    if head == HeadKind::Relu {
        for case in &mut cases {
            case.net.head_mut().bias_mut().data_mut().fill(1.0);
        }
    }
    Ok(cases)
}

/// Tolerance on the maximum relative error for each head.
pub fn gradcheck_tolerance(head: HeadKind) -> f64 {
    match head {
        HeadKind::Softmax => 1e-6,
        HeadKind::Relu => 1e-4,
    }
}

/// `case,head,block,coordinates,skipped,max_rel_error,mean_rel_error` rows.
pub fn gradcheck_csv(reports: &[(&str, GradCheckReport)]) -> String {
    let mut out = String::from("case,head,block,coordinates,skipped,max_rel_error,mean_rel_error\n");
    for (case, r) in reports {
        for b in &r.blocks {
            let _ = writeln!(
                out,
                "{case},{},{},{},{},{:.3e},{:.3e}",
                r.head, b.name, b.coordinates, b.skipped, b.max_rel_error, b.mean_rel_error
            );
        }
    }
    out
}

/// Fraction of `sample` whose true-class ReLU-head score is clamped to 0.
pub fn dead_fraction(net: &mut Network, sample: &Dataset) -> Result<f64> {
    if net.head_kind() != HeadKind::Relu {
        return Err(Error::config("dead-unit tracking needs a ReLU head"));
    }
    let scores = net.predict_output(sample.features(), 1000)?;
    dead_true_class_fraction(&scores, sample.labels())
}

/// Trains `net` on `data` and samples [`dead_fraction`] on `sample` after
/// every epoch.
pub fn dead_unit_trace(net: &mut Network, data: &Dataset, sample: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if net.head_kind() != HeadKind::Relu {
        return Err(Error::config("dead-unit tracking needs a ReLU head"));
    }
    let mut series = Vec::with_capacity(cfg.epochs);
    train_with(net, data, cfg, &mut |_, n| {
        series.push(dead_fraction(n, sample)?);
        Ok(())
    })?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::layers::fault;
    use crate::model::BuildOptions;

    #[test]
    fn softmax_toys_pass_tightly() {
        for case in toy_cases(HeadKind::Softmax, 1).unwrap() {
            let r = gradcheck(&case.net, &case.x, &case.y, &GradCheckOptions::default()).unwrap();
            assert!(r.passes(1e-6), "{}: {:?}", case.name, r.blocks);
            assert_eq!(r.coordinates(), case.net.param_count());
        }
    }

    #[test]
    fn relu_toys_pass() {
        for case in toy_cases(HeadKind::Relu, 1).unwrap() {
            let r = gradcheck(&case.net, &case.x, &case.y, &GradCheckOptions::default()).unwrap();
            assert!(r.passes(1e-4), "{}: {:?}", case.name, r.blocks);
            assert!(r.skipped() <= r.coordinates());
        }
    }

    #[test]
    fn clamped_true_class_is_consistent_zero() {
        let mut net = Network::builder(InputSpec::Flat(3), 2).dense(4).unwrap().head(HeadKind::Relu, 2).unwrap();
        net.head_mut().bias_mut().data_mut().fill(-50.0);
        let x = Tensor::full(&[2, 3], 0.5);
        let y = one_hot(&[0, 1], 2).unwrap();
        let r = gradcheck(&net, &x, &y, &GradCheckOptions::default()).unwrap();
        assert_eq!(r.skipped(), 0);
        assert_eq!(r.max_rel_error(), 0.0);
    }

    #[test]
    fn coordinates_at_a_kink_are_skipped() {
        // One hidden unit whose pre-activation is exactly 0 for the first
        // example: its weight and bias straddle the kink, the head does not.
        let mut net = Network::builder(InputSpec::Flat(1), 0).dense(1).unwrap().head(HeadKind::Softmax, 2).unwrap();
        let params = net.params_mut();
        let [w, b, theta, bias] = <[&mut Tensor; 4]>::try_from(params).ok().unwrap();
        w.data_mut()[0] = 1.0;
        b.data_mut()[0] = -0.5;
        theta.data_mut().copy_from_slice(&[1.0, -1.0]);
        bias.data_mut().fill(0.0);
        let x = Tensor::new(&[2, 1], vec![0.5, 2.0]).unwrap();
        let y = one_hot(&[0, 1], 2).unwrap();
        let r = gradcheck(&net, &x, &y, &GradCheckOptions::default()).unwrap();
        let skipped: Vec<usize> = r.blocks.iter().map(|b| b.skipped).collect();
        assert_eq!(skipped, vec![1, 1, 0, 0]);
        assert!(r.passes(1e-6));
    }

    #[test]
    fn sign_flip_is_caught() {
        fault::set_dense_sign_flip(true);
        let case = toy_cases(HeadKind::Softmax, 1).unwrap().remove(0);
        let r = gradcheck(&case.net, &case.x, &case.y, &GradCheckOptions::default());
        fault::set_dense_sign_flip(false);
        assert!(!r.unwrap().passes(1e-4));
    }

    #[test]
    fn rejects_large_networks_and_bad_options() {
        let net = Network::ffnn(256, HeadKind::Softmax, 10, &BuildOptions::default()).unwrap();
        let x = Tensor::zeros(&[1, 256]);
        let y = one_hot(&[0], 10).unwrap();
        assert!(matches!(gradcheck(&net, &x, &y, &GradCheckOptions::default()), Err(Error::Config(_))));
        let small = toy_cases(HeadKind::Softmax, 1).unwrap().remove(0);
        let bad = GradCheckOptions { step: 0.0, ..Default::default() };
        assert!(gradcheck(&small.net, &small.x, &small.y, &bad).is_err());
    }

    fn toy_data() -> Dataset {
        let x = randn(&[20, 3], 1.0, &mut Rng::seed(1)).unwrap();
        Dataset::new(x, (0..20).map(|i| i % 2).collect(), vec!["a".into(), "b".into()], Split::Train).unwrap()
    }

    #[test]
    fn dead_fraction_extremes() {
        let data = toy_data();
        let mut net = Network::builder(InputSpec::Flat(3), 0).dense(4).unwrap().head(HeadKind::Relu, 2).unwrap();
        net.head_mut().bias_mut().data_mut().fill(100.0);
        assert_eq!(dead_fraction(&mut net, &data).unwrap(), 0.0);
        net.head_mut().bias_mut().data_mut().fill(-100.0);
        net.head_mut().theta_mut().data_mut().fill(-100.0);
        assert_eq!(dead_fraction(&mut net, &data).unwrap(), 1.0);
    }

    #[test]
    fn trace_has_one_value_per_epoch() {
        let data = toy_data();
        let mut net = Network::builder(InputSpec::Flat(3), 0).dense(4).unwrap().head(HeadKind::Relu, 2).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 5, ..Default::default() };
        let series = dead_unit_trace(&mut net, &data, &data, &cfg).unwrap();
        assert_eq!(series.len(), 3);
        assert!(series.iter().all(|f| (0.0..=1.0).contains(f)));
        let mut soft = Network::builder(InputSpec::Flat(3), 0).head(HeadKind::Softmax, 2).unwrap();
        assert!(dead_unit_trace(&mut soft, &data, &data, &cfg).is_err());
    }
}
