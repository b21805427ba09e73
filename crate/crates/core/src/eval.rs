//! Classification metrics and k-fold cross-validation.

use std::fmt::Write as _;

use crate::data::{kfold, stratified_kfold, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{train, Network, TrainConfig};
use crate::tensor::Rng;

/// K×K counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    /// Per-class support.
    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.classes).map(|k| self.row(k).iter().sum()).collect()
    }

    /// Per-class prediction counts.
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes).map(|j| (0..self.classes).map(|i| self.get(i, j)).sum()).collect()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Bare K×K integer CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for k in 0..self.classes {
            let row: Vec<String> = self.row(k).iter().map(u64::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::input(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = vec![0u64; classes * classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= classes || p >= classes {
            return Err(Error::input(format!("label pair ({t}, {p}) outside 0..{classes}")));
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Per-class and support-weighted precision, recall and F1.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> ClassMetrics {
    let support = cm.row_sums();
    let predicted = cm.col_sums();
    let k = cm.classes();
    let precision: Vec<f64> = (0..k).map(|c| ratio(cm.get(c, c), predicted[c])).collect();
    let recall: Vec<f64> = (0..k).map(|c| ratio(cm.get(c, c), support[c])).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        .collect();
    let total: u64 = support.iter().sum();
    let weighted = |v: &[f64]| {
        if total == 0 {
            return 0.0;
        }
        v.iter().zip(&support).map(|(x, &s)| x * s as f64).sum::<f64>() / total as f64
    };
    ClassMetrics {
        weighted_precision: weighted(&precision),
        weighted_recall: weighted(&recall),
        weighted_f1: weighted(&f1),
        precision,
        recall,
        f1,
        support,
    }
}

/// Two-decimal rendering used in reports.
pub fn format_rate(x: f64) -> String {
    format!("{x:.2}")
}

/// Test-set metrics of a trained network.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: ClassMetrics,
}

impl Evaluation {
    pub fn from_predictions(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<Evaluation> {
        let confusion = confusion(y_true, y_pred, classes)?;
        Ok(Evaluation { accuracy: confusion.accuracy(), metrics: precision_recall_f1(&confusion), confusion })
    }

    /// `class,precision,recall,f1,support` rows followed by a weighted row.
    pub fn report_csv(&self, class_names: &[String]) -> String {
        let m = &self.metrics;
        let mut out = String::from("class,precision,recall,f1,support\n");
        for k in 0..self.confusion.classes() {
            let name = class_names.get(k).cloned().unwrap_or_else(|| k.to_string());
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{}",
                csv_field(&name),
                m.precision[k],
                m.recall[k],
                m.f1[k],
                m.support[k]
            );
        }
        let _ = writeln!(
            out,
            "weighted,{:.6},{:.6},{:.6},{}",
            m.weighted_precision,
            m.weighted_recall,
            m.weighted_f1,
            self.confusion.total()
        );
        let _ = writeln!(out, "accuracy,{:.6},,,{}", self.accuracy, self.confusion.total());
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Eval-mode predictions on `data`, scored against its labels.
pub fn evaluate(net: &mut Network, data: &Dataset) -> Result<Evaluation> {
    if data.classes() != net.classes() {
        return Err(Error::shape(format!(
            "dataset has {} classes, network has {}",
            data.classes(),
            net.classes()
        )));
    }
    let pred = net.predict(data.features())?;
    Evaluation::from_predictions(data.labels(), &pred, net.classes())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldResult {
    /// 1-based.
    pub fold: usize,
    /// Final-epoch training loss.
    pub loss: f64,
    /// Validation accuracy.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossValReport {
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    /// Population standard deviation of fold accuracies.
    pub std: f64,
}

impl CrossValReport {
    pub fn from_folds(folds: Vec<FoldResult>) -> CrossValReport {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let (mean, std) = mean_std(&acc);
        CrossValReport { folds, mean, std }
    }

    /// `fold,loss,accuracy` rows followed by mean and std lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,loss,accuracy\n");
        for f in &self.folds {
            let _ = writeln!(out, "{},{:.6},{:.6}", f.fold, f.loss, f.accuracy);
        }
        let _ = writeln!(out, "mean,,{:.6}", self.mean);
        let _ = writeln!(out, "std,,{:.6}", self.std);
        out
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains a fresh network per fold (built by `build(fold_index)`) on the
/// fold's training side and scores it on the validation side.
pub fn crossval(
    build: &dyn Fn(usize) -> Result<Network>,
    data: &Dataset,
    k: usize,
    cfg: &TrainConfig,
    stratified: bool,
) -> Result<CrossValReport> {
    crossval_with(build, data, k, cfg, stratified, &|train, valid| Ok((train, valid)))
}

/// Per-fold transformation of (training side, validation side), e.g.
/// preprocessing fitted on the training side only.
pub type FoldPrep<'a> = dyn Fn(Dataset, Dataset) -> Result<(Dataset, Dataset)> + 'a;

/// [`crossval`] with a per-fold `prepare` step applied before training.
pub fn crossval_with(
    build: &dyn Fn(usize) -> Result<Network>,
    data: &Dataset,
    k: usize,
    cfg: &TrainConfig,
    stratified: bool,
    prepare: &FoldPrep<'_>,
) -> Result<CrossValReport> {
    let mut rng = Rng::seed(cfg.seed);
    let plan = if stratified {
        stratified_kfold(data.labels(), k, &mut rng)?
    } else {
        kfold(data.len(), k, &mut rng)?
    };
    let mut folds = Vec::with_capacity(k);
    for (i, fold) in plan.folds.iter().enumerate() {
        let (train_set, valid_set) = prepare(
            data.subset(&fold.train, Split::Train)?,
            data.subset(&fold.validation, Split::Test)?,
        )?;
        let mut net = build(i)?;
        let fold_cfg = TrainConfig { seed: rng.next_u64(), ..*cfg };
        let log = train(&mut net, &train_set, &fold_cfg)?;
        let eval = evaluate(&mut net, &valid_set)?;
        folds.push(FoldResult { fold: i + 1, loss: log.final_loss().unwrap_or(f64::NAN), accuracy: eval.accuracy });
    }
    Ok(CrossValReport::from_folds(folds))
}

/// Cross-validation summary plus test-set evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub crossval: Option<CrossValReport>,
    pub test: Evaluation,
}

impl MetricsReport {
    pub fn cv_mean(&self) -> Option<f64> {
        self.crossval.as_ref().map(|c| c.mean)
    }

    pub fn cv_std(&self) -> Option<f64> {
        self.crossval.as_ref().map(|c| c.std)
    }

    pub fn test_accuracy(&self) -> f64 {
        self.test.accuracy
    }
}
