//! End-to-end experiments, metrics and report files.

mod config;
mod detect;
mod hitl;
mod metrics;
mod report;

pub use config::{
    DataConfig, ExperimentConfig, ExperimentKind, GpConfig, HealthyConfig, OodConfig, RlConfig, ThresholdPolicy,
    VaeConfig, DATA_DIR_ENV, DEFAULT_CIFAR_BATCH,
};
pub use detect::{
    adversarial_mse_comparison, obtain_vae, run_detection, train_codec, DetectionReport, DetectionRun, ReconGrid,
    SampleScore,
};
pub use hitl::{run_hitl, write_hitl_outputs, HitlReport};
pub use metrics::{confusion, pca2, roc_auc, trapezoid_auc, Confusion, Projection, RocPoint};
pub use report::{emit_report, read_scores_csv, summarize_dir, write_pgm, Summary};

use std::fmt;
use std::path::PathBuf;

use crate::data::{filter_labels, load_mnist_test, load_mnist_train, procedural_digits, ImageDataset};
use crate::rng::SeedRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Data,
    Train,
    Fit,
    Calibrate,
    Score,
    Attack,
    Rl,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Data => "data",
            Stage::Train => "train",
            Stage::Fit => "fit",
            Stage::Calibrate => "calibrate",
            Stage::Score => "score",
            Stage::Attack => "attack",
            Stage::Rl => "rl",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("metric error: {0}")]
    Metric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            HarnessError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub(crate) fn at<E>(stage: Stage) -> impl FnOnce(E) -> HarnessError
where
    E: std::error::Error + Send + Sync + 'static,
{
    move |e| HarnessError::Stage { stage, source: Box::new(e) }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_owned(), source }
}

/// Healthy digits for the experiments.
pub(crate) enum HealthyData {
    Procedural,
    Mnist { train: ImageDataset, test: ImageDataset },
}

impl HealthyData {
    pub(crate) fn open(cfg: &HealthyConfig) -> Result<Self, HarnessError> {
        match cfg {
            HealthyConfig::Procedural => Ok(HealthyData::Procedural),
            HealthyConfig::Mnist { dir } => {
                let dir = config::data_dir(dir)?;
                Ok(HealthyData::Mnist {
                    train: load_mnist_train(&dir).map_err(at(Stage::Data))?,
                    test: load_mnist_test(&dir).map_err(at(Stage::Data))?,
                })
            }
        }
    }

    /// `count` images from the training split (or freshly rendered digits).
    pub(crate) fn train(&self, count: usize, rng: &mut SeedRng) -> Result<ImageDataset, HarnessError> {
        match self {
            HealthyData::Procedural => procedural_digits(count, rng).map_err(at(Stage::Data)),
            HealthyData::Mnist { train, .. } => take(train, count, rng),
        }
    }

    pub(crate) fn test(&self, count: usize, rng: &mut SeedRng) -> Result<ImageDataset, HarnessError> {
        match self {
            HealthyData::Procedural => procedural_digits(count, rng).map_err(at(Stage::Data)),
            HealthyData::Mnist { test, .. } => take(test, count, rng),
        }
    }

    /// `count` images from the test split, half of them even digits.
    pub(crate) fn balanced_test(&self, count: usize, rng: &mut SeedRng) -> Result<ImageDataset, HarnessError> {
        let n_even = count / 2;
        let pool = match self {
            HealthyData::Procedural => procedural_digits(count * 3, rng).map_err(at(Stage::Data))?,
            HealthyData::Mnist { test, .. } => test.clone(),
        };
        let even = filter_labels(&pool, crate::data::is_even).map_err(at(Stage::Data))?;
        let odd = filter_labels(&pool, crate::data::is_odd).map_err(at(Stage::Data))?;
        let even = take(&even, n_even, rng)?;
        let odd = take(&odd, count - n_even, rng)?;
        let images = crate::nncore::Tensor::concat_rows(&[&even.images, &odd.images]).map_err(at(Stage::Data))?;
        let labels = even.labels.iter().chain(&odd.labels).copied().collect();
        ImageDataset::new(images, labels, even.source).map_err(at(Stage::Data))
    }
}

fn take(ds: &ImageDataset, count: usize, rng: &mut SeedRng) -> Result<ImageDataset, HarnessError> {
    if count > ds.len() {
        return Err(HarnessError::Stage {
            stage: Stage::Data,
            source: format!("requested {count} images from a split of {}", ds.len()).into(),
        });
    }
    ds.sample(count, rng).map_err(at(Stage::Data))
}
