//! Command-line run settings and their validation.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use reluhead::data::{data_dir, DatasetId};
use reluhead::heads::HeadKind;
use reluhead::layers::DEFAULT_INIT_STD;
use reluhead::model::{Arch, TrainConfig};
use reluhead::optim::{AdamConfig, OptimizerSpec};

use crate::CliError;

pub(crate) fn parse_dataset(s: &str) -> Result<DatasetId, String> {
    s.parse().map_err(|e: reluhead::Error| e.to_string())
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    s.parse().map_err(|e: reluhead::Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ffnn,
    Cnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ffnn => "ffnn",
            ModelKind::Cnn => "cnn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Flags shared by `train` and `crossval`.
#[derive(Args, Clone, Debug)]
pub struct RunArgs {
    /// mnist, fashion or wdbc
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: DatasetId,
    #[arg(long, value_enum, default_value_t = ModelKind::Ffnn)]
    pub model: ModelKind,
    /// softmax or relu
    #[arg(long, value_parser = parse_head, default_value = "softmax")]
    pub head: HeadKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Adam)]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    /// PCA output dimensions; 0 disables PCA. Default: 256 for image data,
    /// off for wdbc.
    #[arg(long)]
    pub pca_dims: Option<usize>,
    /// Skip feature standardization.
    #[arg(long)]
    pub no_scale: bool,
    /// Comma-separated dropout rates, one per dropout layer or a single
    /// rate for all of them.
    #[arg(long, value_delimiter = ',')]
    pub dropout: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_INIT_STD)]
    pub init_std: f64,
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 10)]
    pub cv_folds: usize,
    /// Held-out fraction for datasets without a published test split.
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    /// Use only the first N training examples.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Dataset cache (default: $RELUHEAD_DATA_DIR or ./data).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Fully resolved and validated run settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub model: ModelKind,
    pub head: String,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub pca_dims: Option<usize>,
    pub scale: bool,
    pub dropout: Vec<f64>,
    pub init_std: f64,
    pub cv_folds: usize,
    pub test_fraction: f64,
    pub train_limit: Option<usize>,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    pub fn resolve(args: &RunArgs, default_dir_suffix: &str) -> Result<RunConfig, CliError> {
        let image = args.dataset.is_image();
        let raw_dims = if image { 784 } else { 30 };
        if args.model == ModelKind::Cnn && !image {
            return Err(usage(format!("--model cnn needs an image dataset, not {}", args.dataset)));
        }
        let pca_dims = match args.pca_dims {
            Some(0) => None,
            Some(d) => Some(d),
            None if image => Some(256),
            None => None,
        };
        if let Some(d) = pca_dims {
            if d > raw_dims {
                return Err(usage(format!("--pca-dims {d} exceeds the {raw_dims} input features")));
            }
        }
        if args.model == ModelKind::Cnn && pca_dims != Some(256) {
            return Err(usage("--model cnn reshapes 256 PCA features to 16×16; use --pca-dims 256"));
        }
        let arch = match (args.model, image) {
            (ModelKind::Cnn, _) => Arch::Cnn,
            (ModelKind::Ffnn, true) => Arch::Ffnn,
            (ModelKind::Ffnn, false) => Arch::Wdbc,
        };
        let slots = arch.default_dropout().len();
        let dropout = match &args.dropout {
            None => arch.default_dropout().to_vec(),
            Some(r) if r.len() == 1 => vec![r[0]; slots],
            Some(r) if r.len() == slots => r.clone(),
            Some(r) => {
                return Err(usage(format!("{} dropout rates given, the {} model has {slots}", r.len(), args.model.as_str())))
            }
        };
        if let Some(bad) = dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(usage(format!("dropout rate {bad} outside [0, 1)")));
        }
        if args.batch_size == 0 {
            return Err(usage("--batch-size must be at least 1"));
        }
        if !(args.learning_rate > 0.0) || !(args.epsilon > 0.0) {
            return Err(usage("--learning-rate and --epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&args.beta1) || !(0.0..1.0).contains(&args.beta2) {
            return Err(usage("--beta1 and --beta2 must lie in [0, 1)"));
        }
        if !(args.init_std > 0.0) {
            return Err(usage("--init-std must be positive"));
        }
        if args.cv_folds < 2 {
            return Err(usage("--cv-folds must be at least 2"));
        }
        if !(args.test_fraction > 0.0 && args.test_fraction < 1.0) {
            return Err(usage("--test-fraction must lie in (0, 1)"));
        }
        if args.train_limit == Some(0) {
            return Err(usage("--train-limit must be at least 1"));
        }
        let output_dir = args.output_dir.clone().unwrap_or_else(|| {
            PathBuf::from("runs").join(format!(
                "{}-{}-{}-s{}{default_dir_suffix}",
                args.dataset,
                args.model.as_str(),
                args.head,
                args.seed
            ))
        });
        Ok(RunConfig {
            dataset: args.dataset.to_string(),
            model: args.model,
            head: args.head.to_string(),
            seed: args.seed,
            epochs: args.epochs,
            batch_size: args.batch_size,
            optimizer: OptimizerConfig {
                kind: args.optimizer,
                learning_rate: args.learning_rate,
                beta1: args.beta1,
                beta2: args.beta2,
                epsilon: args.epsilon,
            },
            pca_dims,
            scale: !args.no_scale,
            dropout,
            init_std: args.init_std,
            cv_folds: args.cv_folds,
            test_fraction: args.test_fraction,
            train_limit: args.train_limit,
            data_dir: args.data_dir.clone().unwrap_or_else(data_dir),
            output_dir,
        })
    }

    pub fn dataset_id(&self) -> DatasetId {
        self.dataset.parse().expect("validated at resolve time")
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head.parse().expect("validated at resolve time")
    }

    pub fn train_config(&self) -> TrainConfig {
        let o = &self.optimizer;
        let optimizer = match o.kind {
            OptimizerKind::Adam => OptimizerSpec::Adam(AdamConfig {
                learning_rate: o.learning_rate,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
            }),
            OptimizerKind::Sgd => OptimizerSpec::Sgd { learning_rate: o.learning_rate },
        };
        TrainConfig { epochs: self.epochs, batch_size: self.batch_size, seed: self.seed, optimizer }
    }
}
