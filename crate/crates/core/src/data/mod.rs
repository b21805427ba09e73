//! Dataset ingestion, train/test splitting and k-fold partitioning.

mod fetch;
mod idx;
mod wdbc;

pub use fetch::{data_dir, fetch, fetch_with, Downloader, FetchReport, FileStatus, HttpDownloader, DATA_DIR_ENV};
pub use idx::{load_idx, write_idx};
pub use wdbc::load_wdbc;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    /// Whole dataset before any split (WDBC ships unsplit).
    Full,
}

/// Feature matrix with integer labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    class_names: Vec<String>,
    split: Split,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_names: Vec<String>, split: Split) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::shape(format!("features must be N×D, got {:?}", features.shape())));
        }
        if features.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Consistency(format!(
                "label {bad} outside 0..{}",
                class_names.len()
            )));
        }
        Ok(Dataset { features, labels, class_names, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Same examples with replaced features (e.g. after preprocessing).
    pub fn with_features(&self, features: Tensor) -> Result<Dataset> {
        Dataset::new(features, self.labels.clone(), self.class_names.clone(), self.split)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Dataset> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= names.len()) {
            return Err(Error::Consistency(format!("label {bad} outside 0..{}", names.len())));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Dataset> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.class_names.clone(), split)
    }

    /// First `n` examples (or all of them if fewer).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.split)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Stratified, seeded train/test split.
///
/// Each class contributes `⌊count·fraction⌋` test examples, and the
/// remaining `round(N·fraction)` total is allocated by largest remainder, so
/// every class is within one example of its exact share.
pub fn split_train_test(ds: &Dataset, test_fraction: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let target = (ds.len() as f64 * test_fraction).round() as usize;
    let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * test_fraction).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            missing -= 1;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (members, n_test) in by_class.iter_mut().zip(take) {
        rng.shuffle(members);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train, Split::Train)?, ds.subset(&test, Split::Test)?))
}

/// One fold of a cross-validation plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// k folds whose validation sets partition `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
}

fn plan_from_assignment(n: usize, k: usize, fold_of: &[usize]) -> FoldPlan {
    let folds = (0..k)
        .map(|f| {
            let (validation, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == f);
            Fold { train, validation }
        })
        .collect();
    FoldPlan { k, folds }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 2 || k > n {
        return Err(Error::config(format!("fold count {k} must satisfy 2 ≤ k ≤ {n}")));
    }
    Ok(())
}

/// Shuffled k-fold plan. The first `n mod k` folds hold one extra example.
pub fn kfold(n: usize, k: usize, rng: &mut Rng) -> Result<FoldPlan> {
    check_k(n, k)?;
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let (base, extra) = (n / k, n % k);
    let mut fold_of = vec![0; n];
    let mut pos = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        for &i in &order[pos..pos + size] {
            fold_of[i] = f;
        }
        pos += size;
    }
    Ok(plan_from_assignment(n, k, &fold_of))
}

/// k-fold plan that deals each class's shuffled members round-robin across
/// folds, so class proportions match in every fold.
pub fn stratified_kfold(labels: &[usize], k: usize, rng: &mut Rng) -> Result<FoldPlan> {
    let n = labels.len();
    check_k(n, k)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut order = Vec::with_capacity(n);
    for c in 0..classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut members);
        order.extend(members);
    }
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(plan_from_assignment(n, k, &fold_of))
}

/// The three benchmark datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetId {
    Mnist,
    Fashion,
    Wdbc,
}

const FASHION_CLASSES: [&str; 10] = [
    "T-shirt/top",
    "Trouser",
    "Pullover",
    "Dress",
    "Coat",
    "Sandal",
    "Shirt",
    "Sneaker",
    "Bag",
    "Ankle boot",
];

impl DatasetId {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::Fashion => "fashion",
            DatasetId::Wdbc => "wdbc",
        }
    }

    pub fn is_image(self) -> bool {
        !matches!(self, DatasetId::Wdbc)
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            DatasetId::Mnist => (0..10).map(|d| d.to_string()).collect(),
            DatasetId::Fashion => FASHION_CLASSES.iter().map(|s| s.to_string()).collect(),
            DatasetId::Wdbc => vec!["benign".into(), "malignant".into()],
        }
    }

    /// Loads the cached files of this dataset from `dir/<id>/`.
    ///
    /// Image datasets return their published train/test split. WDBC returns
    /// the whole file as a single [`Split::Full`] dataset in both slots'
    /// place: the first element, with an empty second element omitted, so
    /// callers split it with [`split_train_test`].
    pub fn load(self, dir: &Path) -> Result<LoadedData> {
        let base = dir.join(self.as_str());
        let resolve = |name: &str| -> Result<PathBuf> {
            let plain = base.join(name);
            if plain.exists() {
                return Ok(plain);
            }
            let gz = base.join(format!("{name}.gz"));
            if gz.exists() {
                return Ok(gz);
            }
            Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} not found (run `reluhead fetch {}`)", plain.display(), self.as_str()),
            )))
        };
        match self {
            DatasetId::Mnist | DatasetId::Fashion => {
                let train_files =
                    [resolve("train-images-idx3-ubyte")?, resolve("train-labels-idx1-ubyte")?];
                let test_files = [resolve("t10k-images-idx3-ubyte")?, resolve("t10k-labels-idx1-ubyte")?];
                let train = load_idx(&train_files[0], &train_files[1])?.with_class_names(self.class_names())?;
                let test = load_idx(&test_files[0], &test_files[1])?.with_class_names(self.class_names())?;
                let test = Dataset { split: Split::Test, ..test };
                let files = train_files.into_iter().chain(test_files).collect();
                Ok(LoadedData::Split { train, test, files })
            }
            DatasetId::Wdbc => {
                let path = resolve("wdbc.data")?;
                let full = load_wdbc(&path)?;
                Ok(LoadedData::Full { data: full, files: vec![path] })
            }
        }
    }
}

/// What [`DatasetId::load`] found on disk.
#[derive(Clone, Debug)]
pub enum LoadedData {
    Split { train: Dataset, test: Dataset, files: Vec<PathBuf> },
    Full { data: Dataset, files: Vec<PathBuf> },
}

impl LoadedData {
    pub fn files(&self) -> &[PathBuf] {
        match self {
            LoadedData::Split { files, .. } | LoadedData::Full { files, .. } => files,
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetId::Mnist),
            "fashion" | "fashion-mnist" => Ok(DatasetId::Fashion),
            "wdbc" => Ok(DatasetId::Wdbc),
            other => Err(Error::config(format!("unknown dataset {other:?} (mnist|fashion|wdbc)"))),
        }
    }
}
