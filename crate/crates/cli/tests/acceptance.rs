//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion to
//! stderr (uncaptured) and to `acceptance.txt` under the cargo target tmpdir.
//!
//! Criteria listed in `KNOWN_RED` are expected to fail with the default
//! configuration. The test fails if any other criterion fails, and also if a
//! known-red criterion starts passing, so the list cannot go stale.
//!
//! Needs the datasets under `$RELUHEAD_DATA_DIR` or `<workspace>/data`
//! (`reluhead fetch mnist|fashion|wdbc`). Training runs take about half an
//! hour on one CPU core.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use reluhead::data::{kfold, DatasetId, DATA_DIR_ENV};
use reluhead::eval::{confusion, precision_recall_f1};
use reluhead::heads::{softmax, HeadKind};
use reluhead::model::{decode, encode, train, BuildOptions, InputSpec, Network, TrainConfig};
use reluhead::preprocess::{PcaParams, ScalerParams};
use reluhead::tensor::argmax_last;
use reluhead::{Rng, Tensor};
use reluhead_cli::commands::{self, TrainOutcome};
use reluhead_cli::{Cli, Command};

use clap::Parser;

/// Criteria that do not pass under the default ReLU-head loss.
const KNOWN_RED: &[u32] = &[3, 4, 6];

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn runs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn train_run(dataset: &str, model: &str, head: &str, extra: &[&str]) -> TrainOutcome {
    let out = runs_dir().join(format!("{dataset}-{model}-{head}"));
    let data = data_dir();
    let mut args = vec![
        "reluhead", "train", "--dataset", dataset, "--model", model, "--head", head, "--data-dir",
        data.to_str().unwrap(), "--output-dir", out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let Command::Train { run, cv } = Cli::parse_from(args).command else { unreachable!() };
    match commands::train(&run, cv) {
        Ok(o) => o,
        Err(e) => panic!("{dataset}/{model}/{head} run failed: {e} (datasets come from `reluhead fetch {dataset}`)"),
    }
}

fn summary(o: &TrainOutcome) -> String {
    format!("acc {:.2}% F1 {:.4}", 100.0 * o.evaluation.accuracy, o.evaluation.metrics.weighted_f1)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let counts = |net: &Network| -> Vec<usize> {
        net.summary().iter().map(|r| r.params).filter(|&p| p > 0).collect()
    };
    let opts = BuildOptions::default();
    let cnn = counts(&Network::cnn(HeadKind::Softmax, 10, &opts).unwrap());
    let ffnn = counts(&Network::ffnn(256, HeadKind::Relu, 10, &opts).unwrap());
    let elapsed = start.elapsed();
    let pass = cnn == [320, 9248, 18496, 36928, 16640, 2570]
        && ffnn == [131584, 262656, 262656, 5130]
        && elapsed < Duration::from_secs(1);
    Verdict {
        id: 1,
        name: "architecture parameter counts",
        pass,
        detail: format!("cnn {cnn:?} ffnn {ffnn:?} in {elapsed:.2?}"),
    }
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let out = runs_dir().join("gradcheck");
    let result = commands::gradcheck(0, 1e-5, 1e-4, &out, false);
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(reports) => {
            let worst = |h: HeadKind| {
                reports.iter().filter(|(_, r)| r.head == h).map(|(_, r)| r.max_rel_error()).fold(0.0, f64::max)
            };
            let heads = reports.iter().any(|(_, r)| r.head == HeadKind::Softmax)
                && reports.iter().any(|(_, r)| r.head == HeadKind::Relu);
            let (s, r) = (worst(HeadKind::Softmax), worst(HeadKind::Relu));
            (
                heads && s < 1e-6 && r < 1e-4 && elapsed < Duration::from_secs(30),
                format!("softmax max {s:.2e}, relu max {r:.2e} in {elapsed:.2?}"),
            )
        }
        Err(e) => (false, e.to_string()),
    };
    Verdict { id: 2, name: "gradient check on toy networks", pass, detail }
}

fn pair(dataset: &str, model: &str, extra: &[&str]) -> (TrainOutcome, TrainOutcome) {
    (train_run(dataset, model, "softmax", extra), train_run(dataset, model, "relu", extra))
}

fn reproduction(id: u32, name: &'static str, dataset: &str, soft_min: f64, relu_min: f64, f1_min: Option<f64>) -> Verdict {
    let (s, r) = pair(dataset, "ffnn", &[]);
    let f1_ok = |o: &TrainOutcome| f1_min.is_none_or(|m| o.evaluation.metrics.weighted_f1 >= m);
    let pass = s.evaluation.accuracy >= soft_min && r.evaluation.accuracy >= relu_min && f1_ok(&s) && f1_ok(&r);
    Verdict { id, name, pass, detail: format!("softmax {}; relu {}", summary(&s), summary(&r)) }
}

fn criterion_6() -> Verdict {
    let (s, r) = pair("mnist", "cnn", &[]);
    let early = &r.dead_fractions[..r.dead_fractions.len().min(3)];
    let dead = early.iter().any(|&f| f > 0.0);
    let pass = s.evaluation.accuracy > r.evaluation.accuracy && r.evaluation.accuracy >= 0.85 && dead;
    Verdict {
        id: 6,
        name: "CNN head gap on MNIST",
        pass,
        detail: format!("softmax {}; relu {}; relu dead fraction, first epochs {early:.3?}", summary(&s), summary(&r)),
    }
}

fn criterion_7() -> Verdict {
    let mut rng = Rng::seed(2024);
    let mut worst = 0.0f64;
    let mut counts_ok = true;
    for k in [2usize, 10] {
        let truth: Vec<usize> = (0..1000).map(|_| (rng.next_u64() % k as u64) as usize).collect();
        let pred: Vec<usize> =
            truth.iter().map(|&t| if rng.uniform() < 0.5 { t } else { (rng.next_u64() % k as u64) as usize }).collect();
        let cm = confusion(&truth, &pred, k).unwrap();
        let m = precision_recall_f1(&cm);
        for c in 0..k {
            let count = |f: &dyn Fn(usize, usize) -> bool| truth.iter().zip(&pred).filter(|&(&t, &p)| f(t, p)).count();
            for p in 0..k {
                counts_ok &= cm.get(c, p) as usize == count(&|t, q| t == c && q == p);
            }
            let tp = count(&|t, p| t == c && p == c) as f64;
            let predicted = count(&|_, p| p == c) as f64;
            let actual = count(&|t, _| t == c) as f64;
            let prec = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let rec = if actual > 0.0 { tp / actual } else { 0.0 };
            let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
            worst = worst.max((m.precision[c] - prec).abs()).max((m.recall[c] - rec).abs()).max((m.f1[c] - f1).abs());
        }
    }
    Verdict {
        id: 7,
        name: "metric oracle equivalence",
        pass: counts_ok && worst <= 1e-12,
        detail: format!("counts exact: {counts_ok}, max rate deviation {worst:.1e}"),
    }
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| scale * (2.0 * rng.uniform() - 1.0)).collect()).unwrap()
}

fn criterion_8() -> Verdict {
    let mut rng = Rng::seed(8);
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok && !failures.contains(&name.to_string()) {
            failures.push(name.to_string());
        }
    };
    for _ in 0..100 {
        let (r, c) = (1 + rng.next_u64() as usize % 6, 1 + rng.next_u64() as usize % 10);
        let o = random_matrix(&mut rng, r, c, 300.0);
        let p = softmax(&o).unwrap();
        check("softmax normalization", (0..r).all(|i| (p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12));
        let shift = 1e3 * (2.0 * rng.uniform() - 1.0);
        let q = softmax(&o.map(|x| x + shift)).unwrap();
        check("softmax shift invariance", p.data().iter().zip(q.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        let (a, b) = (argmax_last(&o).unwrap(), argmax_last(&o.max_scalar(0.0)).unwrap());
        check("argmax clamp invariance", (0..r).all(|i| o.row(i).iter().all(|&x| x <= 0.0) || a[i] == b[i]));
    }
    for _ in 0..30 {
        let (n, d) = (10 + rng.next_u64() as usize % 30, 2 + rng.next_u64() as usize % 6);
        let x = random_matrix(&mut rng, n, d, 20.0);
        let z = ScalerParams::fit(&x).unwrap().transform(&x).unwrap();
        let stats_ok = (0..d).all(|j| {
            let col: Vec<f64> = (0..n).map(|i| z.at(i, j)).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9
        });
        check("scaler mean 0 / std 1", stats_ok);
        let mut last = f64::INFINITY;
        for k in 1..=d {
            let p = PcaParams::fit(&x, k).unwrap();
            let c = &p.components;
            let ortho = (0..k).all(|a| {
                (0..k).all(|b| {
                    let dot: f64 = (0..d).map(|j| c.at(j, a) * c.at(j, b)).sum();
                    (dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10
                })
            });
            check("PCA orthonormality", ortho);
            let back = p.reconstruct(&p.transform(&x).unwrap()).unwrap();
            let err: f64 = back.data().iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum();
            check("PCA reconstruction monotonicity", err <= last + 1e-9);
            last = err;
        }
    }
    for _ in 0..50 {
        let n = 2 + rng.next_u64() as usize % 200;
        let k = 2 + rng.next_u64() as usize % (n - 1).min(10);
        let plan = kfold(n, k, &mut rng.fork()).unwrap();
        let mut seen = vec![0; n];
        plan.folds.iter().flat_map(|f| &f.validation).for_each(|&i| seen[i] += 1);
        let disjoint = plan.folds.iter().all(|f| f.train.len() + f.validation.len() == n);
        check("kfold partition", plan.folds.len() == k && disjoint && seen.iter().all(|&s| s == 1));
    }
    for _ in 0..50 {
        let values: Vec<f64> = (0..1 + rng.next_u64() as usize % 50).map(|_| f64::from_bits(rng.next_u64())).collect();
        let (_, back) = decode(&encode("arch=custom", &values)).unwrap();
        check("checkpoint bit-exactness", back.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let run = || {
        let mut r = Rng::seed(5);
        let x = random_matrix(&mut r, 60, 5, 1.0);
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let names = vec!["a".into(), "b".into(), "c".into()];
        let data = reluhead::data::Dataset::new(x, labels, names, reluhead::data::Split::Train).unwrap();
        let builder = Network::builder(InputSpec::Flat(5), 9).dense(8).unwrap().dropout(0.3).unwrap();
        let mut net = builder.head(HeadKind::Relu, 3).unwrap();
        train(&mut net, &data, &TrainConfig { epochs: 3, batch_size: 8, seed: 9, ..Default::default() }).unwrap();
        net.to_bytes()
    };
    check("seeded determinism", run() == run());
    let pass = failures.is_empty();
    let detail = if pass { "all property checks hold".to_string() } else { format!("violated: {}", failures.join(", ")) };
    Verdict { id: 8, name: "property suites", pass, detail }
}

#[test]
fn acceptance_criteria() {
    let data = data_dir();
    for id in [DatasetId::Mnist, DatasetId::Fashion, DatasetId::Wdbc] {
        assert!(id.load(&data).is_ok(), "{id} not found under {}; run `reluhead fetch {id}`", data.display());
    }
    let start = Instant::now();
    let mut log = String::new();
    let mut report = |v: Verdict| {
        let line = format!(
            "criterion {}: {} | {} | {}",
            v.id,
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.detail
        );
        let _ = writeln!(std::io::stderr(), "{line}");
        let _ = writeln!(log, "{line}");
        v
    };
    let verdicts = vec![
        report(criterion_1()),
        report(criterion_2()),
        report(criterion_7()),
        report(criterion_8()),
        report(reproduction(5, "WDBC FFNN reproduction", "wdbc", 0.89, 0.87, None)),
        report(reproduction(3, "MNIST FFNN reproduction", "mnist", 0.97, 0.965, Some(0.97))),
        report(reproduction(4, "Fashion-MNIST FFNN reproduction", "fashion", 0.88, 0.87, Some(0.87))),
        report(criterion_6()),
    ];
    let _ = writeln!(log, "total wall clock {:.0?}", start.elapsed());
    std::fs::create_dir_all(runs_dir()).unwrap();
    std::fs::write(runs_dir().join("acceptance.txt"), &log).unwrap();

    let unexpected: Vec<u32> = verdicts.iter().filter(|v| !v.pass && !KNOWN_RED.contains(&v.id)).map(|v| v.id).collect();
    let stale: Vec<u32> = verdicts.iter().filter(|v| v.pass && KNOWN_RED.contains(&v.id)).map(|v| v.id).collect();
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
    assert!(stale.is_empty(), "criteria {stale:?} now pass; remove them from KNOWN_RED");
}
