//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use reluhead::data::{fetch as fetch_dataset, split_train_test, Dataset, DatasetId, LoadedData};
use reluhead::diagnostics::{
    dead_fraction, gradcheck as check_gradients, gradcheck_csv, gradcheck_tolerance, toy_cases, GradCheckOptions,
    GradCheckReport,
};
use reluhead::eval::{crossval_with, evaluate, format_rate, CrossValReport, Evaluation};
use reluhead::heads::HeadKind;
use reluhead::layers::fault;
use reluhead::model::{train_with, BuildOptions, Network};
use reluhead::preprocess::Preprocessor;
use reluhead::Rng;

use crate::config::{ModelKind, RunArgs, RunConfig};
use crate::output::{digest, render_table, write_atomic, FileDigest};
use crate::CliError;

pub fn fetch(dataset: DatasetId, data_dir: Option<PathBuf>) -> Result<(), CliError> {
    let dir = data_dir.unwrap_or_else(reluhead::data::data_dir);
    let report = fetch_dataset(dataset, &dir)?;
    for (path, status) in &report.files {
        println!("{:?}\t{}", status, path.display());
    }
    println!("{dataset}: {} file(s), {} downloaded", report.files.len(), report.downloads());
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub test_accuracy: Option<f64>,
    pub weighted_precision: Option<f64>,
    pub weighted_recall: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub cv_mean: Option<f64>,
    pub cv_std: Option<f64>,
    pub final_train_loss: Option<f64>,
}

/// `manifest.json`: what ran, on which bytes, and what it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub data_files: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
    pub metrics: RunMetrics,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<RunManifest, CliError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Lib(reluhead::Error::Format(format!("{}: {e}", path.display())))
        })
    }
}

/// Artifacts written into a run directory.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Outputs, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, manifest: RunManifest) -> Result<(), CliError> {
        let mut manifest = manifest;
        self.written.push("manifest.json".into());
        manifest.artifacts = self.written.clone();
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.dir.join("manifest.json"), json.as_bytes())?;
        Ok(())
    }
}

/// Raw training and test splits plus the files they came from.
fn load_splits(cfg: &RunConfig) -> Result<(Dataset, Dataset, Vec<FileDigest>), CliError> {
    let loaded = cfg.dataset_id().load(&cfg.data_dir)?;
    let digests = loaded.files().iter().map(|p| digest(p)).collect::<Result<Vec<_>, _>>()?;
    let (train, test) = match loaded {
        LoadedData::Split { train, test, .. } => (train, test),
        LoadedData::Full { data, .. } => split_train_test(&data, cfg.test_fraction, &mut Rng::seed(cfg.seed))?,
    };
    let train = match cfg.train_limit {
        Some(n) => train.head(n)?,
        None => train,
    };
    Ok((train, test, digests))
}

fn prepare(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<(Preprocessor, Dataset, Dataset), CliError> {
    let pre = Preprocessor::fit(train.features(), cfg.scale, cfg.pca_dims)?;
    let tr = train.with_features(pre.transform(train.features())?)?;
    let te = test.with_features(pre.transform(test.features())?)?;
    Ok((pre, tr, te))
}

fn build_network(cfg: &RunConfig, input_dims: usize, classes: usize, seed: u64) -> Result<Network, CliError> {
    let opts = BuildOptions { seed, init_std: cfg.init_std, dropout: Some(cfg.dropout.clone()) };
    let head = cfg.head_kind();
    let net = match cfg.model {
        ModelKind::Cnn => Network::cnn(head, classes, &opts)?,
        ModelKind::Ffnn if cfg.dataset_id().is_image() => Network::ffnn(input_dims, head, classes, &opts)?,
        ModelKind::Ffnn => Network::ffnn_wdbc(input_dims, head, classes, &opts)?,
    };
    Ok(net)
}

fn run_crossval(cfg: &RunConfig, train: &Dataset) -> Result<CrossValReport, CliError> {
    let dims = cfg.pca_dims.unwrap_or(train.dims());
    let classes = train.classes();
    let build = |fold: usize| {
        build_network(cfg, dims, classes, cfg.seed.wrapping_add(fold as u64))
            .map_err(|e| match e {
                CliError::Lib(e) => e,
                other => reluhead::Error::Config(other.to_string()),
            })
    };
    let prep = |tr: Dataset, va: Dataset| {
        let pre = Preprocessor::fit(tr.features(), cfg.scale, cfg.pca_dims)?;
        let tr2 = tr.with_features(pre.transform(tr.features())?)?;
        let va2 = va.with_features(pre.transform(va.features())?)?;
        Ok((tr2, va2))
    };
    eprintln!("cross-validating: {} folds", cfg.cv_folds);
    Ok(crossval_with(&build, train, cfg.cv_folds, &cfg.train_config(), true, &prep)?)
}

fn folds_text(report: &CrossValReport) -> String {
    let mut rows: Vec<Vec<String>> = report
        .folds
        .iter()
        .map(|f| vec![f.fold.to_string(), format!("{:.4}", f.loss), format!("{:.2}%", 100.0 * f.accuracy)])
        .collect();
    rows.push(vec!["mean".into(), String::new(), format!("{:.2}%", 100.0 * report.mean)]);
    rows.push(vec!["std".into(), String::new(), format!("{:.2}%", 100.0 * report.std)]);
    render_table(&["Fold #", "Loss", "Accuracy"], &rows)
}

fn report_text(eval: &Evaluation, names: &[String], cv: Option<&CrossValReport>) -> String {
    let m = &eval.metrics;
    let mut rows: Vec<Vec<String>> = (0..eval.confusion.classes())
        .map(|k| {
            vec![
                names.get(k).cloned().unwrap_or_else(|| k.to_string()),
                format_rate(m.precision[k]),
                format_rate(m.recall[k]),
                format_rate(m.f1[k]),
                m.support[k].to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "weighted avg".into(),
        format_rate(m.weighted_precision),
        format_rate(m.weighted_recall),
        format_rate(m.weighted_f1),
        eval.confusion.total().to_string(),
    ]);
    let mut out = render_table(&["class", "precision", "recall", "f1-score", "support"], &rows);
    out.push_str(&format!("\ntest accuracy: {:.2}%\n", 100.0 * eval.accuracy));
    if let Some(cv) = cv {
        out.push_str(&format!(
            "cross validation: {:.2}% ± {:.2}% over {} folds\n",
            100.0 * cv.mean,
            100.0 * cv.std,
            cv.folds.len()
        ));
    }
    out
}

/// Outcome of `train`, also returned to library callers.
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub evaluation: Evaluation,
    pub crossval: Option<CrossValReport>,
    pub dead_fractions: Vec<f64>,
    pub manifest: RunManifest,
}

pub fn train(args: &RunArgs, with_cv: bool) -> Result<TrainOutcome, CliError> {
    let cfg = RunConfig::resolve(args, "")?;
    let start = Instant::now();
    let (train_raw, test_raw, data_files) = load_splits(&cfg)?;
    let cv = if with_cv { Some(run_crossval(&cfg, &train_raw)?) } else { None };
    let (pre, train_set, test_set) = prepare(&cfg, &train_raw, &test_raw)?;
    let mut net = build_network(&cfg, train_set.dims(), train_set.classes(), cfg.seed)?;
    let sample = train_set.head(1000)?;
    let relu = net.head_kind() == HeadKind::Relu;
    let mut training_csv = String::from("epoch,loss,accuracy,dead_fraction\n");
    let mut dead = Vec::new();
    let log = train_with(&mut net, &train_set, &cfg.train_config(), &mut |s, n| {
        let frac = if relu { Some(dead_fraction(n, &sample)?) } else { None };
        let frac_text = frac.map(|f| format!("{f:.6}")).unwrap_or_default();
        training_csv.push_str(&format!("{},{:.6},{:.6},{frac_text}\n", s.epoch, s.loss, s.accuracy));
        dead.extend(frac);
        eprintln!("epoch {:>3}  loss {:.4}  train acc {:.4}", s.epoch, s.loss, s.accuracy);
        Ok(())
    })?;
    let evaluation = evaluate(&mut net, &test_set)?;
    let names = test_set.class_names().to_vec();

    let mut out = Outputs::new(&cfg.output_dir)?;
    out.write("report.csv", evaluation.report_csv(&names).as_bytes())?;
    out.write("report.txt", report_text(&evaluation, &names, cv.as_ref()).as_bytes())?;
    out.write("confusion.csv", evaluation.confusion.to_csv().as_bytes())?;
    out.write("training.csv", training_csv.as_bytes())?;
    if let Some(cv) = &cv {
        out.write("folds.csv", cv.to_csv().as_bytes())?;
        out.write("folds.txt", folds_text(cv).as_bytes())?;
    }
    out.write("model.ckpt", &net.to_bytes())?;
    if let Some(s) = &pre.scaler {
        out.write("scaler.bin", &s.to_bytes())?;
    }
    if let Some(p) = &pre.pca {
        out.write("pca.bin", &p.to_bytes())?;
    }
    let m = &evaluation.metrics;
    let manifest = RunManifest {
        command: "train".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        data_files,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        metrics: RunMetrics {
            test_accuracy: Some(evaluation.accuracy),
            weighted_precision: Some(m.weighted_precision),
            weighted_recall: Some(m.weighted_recall),
            weighted_f1: Some(m.weighted_f1),
            cv_mean: cv.as_ref().map(|c| c.mean),
            cv_std: cv.as_ref().map(|c| c.std),
            final_train_loss: log.final_loss(),
        },
        artifacts: Vec::new(),
    };
    out.finish(manifest.clone())?;
    print!("{}", report_text(&evaluation, &names, cv.as_ref()));
    println!("outputs: {}", cfg.output_dir.display());
    Ok(TrainOutcome { dir: cfg.output_dir, evaluation, crossval: cv, dead_fractions: dead, manifest })
}

pub fn crossval(args: &RunArgs) -> Result<CrossValReport, CliError> {
    let cfg = RunConfig::resolve(args, "-cv")?;
    let start = Instant::now();
    let (train_raw, _, data_files) = load_splits(&cfg)?;
    let report = run_crossval(&cfg, &train_raw)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.write("folds.csv", report.to_csv().as_bytes())?;
    out.write("folds.txt", folds_text(&report).as_bytes())?;
    out.finish(RunManifest {
        command: "crossval".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        data_files,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        metrics: RunMetrics { cv_mean: Some(report.mean), cv_std: Some(report.std), ..Default::default() },
        artifacts: Vec::new(),
    })?;
    print!("{}", folds_text(&report));
    Ok(report)
}

fn column_label(m: &RunManifest) -> String {
    let head = match m.config.head.as_str() {
        "relu" => "ReLU",
        _ => "Softmax",
    };
    format!("{}-{head}", m.config.model.as_str().to_uppercase())
}

/// The rendered comparison in both formats.
pub struct Comparison {
    pub csv: String,
    pub text: String,
}

pub fn compare(run_a: &Path, run_b: &Path, output_dir: Option<PathBuf>) -> Result<Comparison, CliError> {
    let a = RunManifest::read(run_a)?;
    let b = RunManifest::read(run_b)?;
    for (what, x, y) in [
        ("dataset", a.config.dataset.clone(), b.config.dataset.clone()),
        ("model", a.config.model.as_str().to_string(), b.config.model.as_str().to_string()),
        ("seed", a.config.seed.to_string(), b.config.seed.to_string()),
    ] {
        if x != y {
            return Err(CliError::Usage(format!("runs differ in {what}: {x} vs {y}")));
        }
    }
    if a.metrics.test_accuracy.is_none() || b.metrics.test_accuracy.is_none() {
        return Err(CliError::Usage("compare needs two `train` run directories".into()));
    }
    type Row = (&'static str, fn(&RunMetrics) -> Option<f64>, bool);
    let rows: [Row; 5] = [
        ("Training cross validation", |m| m.cv_mean, true),
        ("Test accuracy", |m| m.test_accuracy, true),
        ("Precision", |m| m.weighted_precision, false),
        ("Recall", |m| m.weighted_recall, false),
        ("F1-score", |m| m.weighted_f1, false),
    ];
    let (la, lb) = (column_label(&a), column_label(&b));
    let mut csv = format!("metric,{la},{lb}\n");
    let mut table = Vec::new();
    for (name, get, percent) in rows {
        let raw = |m: &RunManifest| get(&m.metrics).map(|v| format!("{v:.6}")).unwrap_or_default();
        csv.push_str(&format!("{name},{},{}\n", raw(&a), raw(&b)));
        let shown = |m: &RunManifest| match get(&m.metrics) {
            None => "n/a".to_string(),
            Some(v) if percent => format!("{:.2}%", 100.0 * v),
            Some(v) => format_rate(v),
        };
        table.push(vec![name.to_string(), shown(&a), shown(&b)]);
    }
    let text = render_table(&["Metrics / Models", &la, &lb], &table);
    let dir = output_dir.unwrap_or_else(|| {
        let parent = run_a.parent().unwrap_or(Path::new("."));
        parent.join(format!("compare-{}-{}-s{}", a.config.dataset, a.config.model.as_str(), a.config.seed))
    });
    fs::create_dir_all(&dir)?;
    write_atomic(&dir.join("compare.csv"), csv.as_bytes())?;
    write_atomic(&dir.join("compare.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(Comparison { csv, text })
}

pub fn gradcheck(
    seed: u64,
    step: f64,
    skip_band: f64,
    output_dir: &Path,
    inject_sign_flip: bool,
) -> Result<Vec<(String, GradCheckReport)>, CliError> {
    let opts = GradCheckOptions { step, skip_band, ..GradCheckOptions::default() };
    fault::set_dense_sign_flip(inject_sign_flip);
    let result = (|| {
        let mut reports = Vec::new();
        for head in [HeadKind::Softmax, HeadKind::Relu] {
            for case in toy_cases(head, seed)? {
                let r = check_gradients(&case.net, &case.x, &case.y, &opts)?;
                reports.push((case.name.to_string(), r));
            }
        }
        Ok::<_, reluhead::Error>(reports)
    })();
    fault::set_dense_sign_flip(false);
    let reports = result?;
    let borrowed: Vec<(&str, GradCheckReport)> = reports.iter().map(|(n, r)| (n.as_str(), r.clone())).collect();
    fs::create_dir_all(output_dir)?;
    write_atomic(&output_dir.join("gradcheck.csv"), gradcheck_csv(&borrowed).as_bytes())?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                r.head.to_string(),
                format!("{:.2e}", r.max_rel_error()),
                format!("{:.0e}", gradcheck_tolerance(r.head)),
                format!("{}/{}", r.skipped(), r.coordinates()),
            ]
        })
        .collect();
    print!("{}", render_table(&["case", "head", "max rel err", "tolerance", "skipped"], &rows));
    let failed: Vec<String> = reports
        .iter()
        .filter(|(_, r)| !r.passes(gradcheck_tolerance(r.head)))
        .map(|(n, r)| format!("{n}/{} max rel error {:.2e}", r.head, r.max_rel_error()))
        .collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(CliError::GradcheckFailed(failed.join("; ")))
    }
}
