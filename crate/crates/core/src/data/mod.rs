//! Image datasets: MNIST IDX files, CIFAR-10 batches as out-of-distribution
//! inputs, procedurally rendered digits, and uniform-noise images.
//!
//! Loaders never shuffle; callers that need randomness pass their own
//! generator.

mod cifar;
mod idx;
mod procedural;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cifar::{luminance, parse_cifar_batch, resize_bilinear, CIFAR_SIDE, RECORD_LEN as CIFAR_RECORD_LEN};
pub use idx::{parse_idx, serialize_idx, IdxArray};
pub use procedural::{glyph, render_digit};

use crate::nncore::{NnError, Tensor};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_DIM: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Label carried by out-of-distribution images.
pub const OOD_LABEL: u8 = u8::MAX;

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(
        "{0} not found; pass the synthetic source instead (\"source\": \"synthetic\") to run without dataset files"
    )]
    MissingOod(PathBuf),
    #[error("dataset is empty after filtering")]
    Empty,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Mnist,
    Procedural,
    CifarOod,
    SyntheticOod,
}

/// `N × 784` images in [0,1] with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub source: DataSource,
}

impl ImageDataset {
    pub fn new(images: Tensor, labels: Vec<u8>, source: DataSource) -> Result<Self, DataError> {
        if images.rank() != 2 || images.cols() != IMAGE_DIM {
            return Err(DataError::Invalid(format!("images must be N×{IMAGE_DIM}, got {:?}", images.shape())));
        }
        if images.rows() != labels.len() {
            return Err(DataError::Invalid(format!("{} images but {} labels", images.rows(), labels.len())));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::Invalid("pixel outside [0,1]".into()));
        }
        Ok(Self { images, labels, source })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows at `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self, DataError> {
        if idx.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Self {
            images: self.images.select_rows(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            source: self.source,
        })
    }

    /// A contiguous slice `[start, start + len)`.
    pub fn range(&self, start: usize, len: usize) -> Result<Self, DataError> {
        if start + len > self.len() {
            return Err(DataError::Invalid(format!("range {start}..{} exceeds {} samples", start + len, self.len())));
        }
        self.subset(&(start..start + len).collect::<Vec<_>>())
    }

    /// Uniform sample of `count` rows without replacement, kept in dataset order.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Self, DataError> {
        if count > self.len() {
            return Err(DataError::Invalid(format!("cannot sample {count} of {} samples", self.len())));
        }
        let mut idx = sample(rng, self.len(), count).into_vec();
        idx.sort_unstable();
        self.subset(&idx)
    }
}

/// Keeps rows whose label satisfies `keep`, preserving order and source tag.
pub fn filter_labels(ds: &ImageDataset, keep: impl Fn(u8) -> bool) -> Result<ImageDataset, DataError> {
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| keep(ds.labels[i])).collect();
    if idx.is_empty() {
        return Err(DataError::Empty);
    }
    ds.subset(&idx)
}

pub fn is_odd(label: u8) -> bool {
    label < 10 && label % 2 == 1
}

pub fn is_even(label: u8) -> bool {
    label < 10 && label.is_multiple_of(2)
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io { path: path.to_owned(), source })
}

/// Loads an image/label IDX pair.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<ImageDataset, DataError> {
    let imgs = parse_idx(&read(images)?)?;
    if imgs.dims.len() != 3 || imgs.dims[1] * imgs.dims[2] != IMAGE_DIM {
        return Err(DataError::Invalid(format!("{}: expected N×28×28, got {:?}", images.display(), imgs.dims)));
    }
    let labels = parse_idx(&read(labels)?)?.to_labels()?;
    ImageDataset::new(imgs.to_images()?, labels, DataSource::Mnist)
}

/// Loads the MNIST training split from a directory of decompressed IDX files.
pub fn load_mnist_train(dir: &Path) -> Result<ImageDataset, DataError> {
    load_idx_pair(&dir.join(MNIST_TRAIN_IMAGES), &dir.join(MNIST_TRAIN_LABELS))
}

pub fn load_mnist_test(dir: &Path) -> Result<ImageDataset, DataError> {
    load_idx_pair(&dir.join(MNIST_TEST_IMAGES), &dir.join(MNIST_TEST_LABELS))
}

/// `count` procedural digits with labels drawn uniformly from 0..=9.
pub fn procedural_digits<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Result<ImageDataset, DataError> {
    if count == 0 {
        return Err(DataError::Empty);
    }
    let mut labels = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * IMAGE_DIM);
    for _ in 0..count {
        let d: u8 = rng.random_range(0..10);
        labels.push(d);
        data.extend(render_digit(d, rng));
    }
    ImageDataset::new(Tensor::matrix(count, IMAGE_DIM, data)?, labels, DataSource::Procedural)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OodSource {
    /// A CIFAR-10 binary batch file.
    Cifar(PathBuf),
    /// I.i.d. uniform pixels.
    Synthetic,
}

pub fn load_ood<R: Rng + ?Sized>(source: &OodSource, count: usize, rng: &mut R) -> Result<ImageDataset, DataError> {
    if count == 0 {
        return Err(DataError::Empty);
    }
    match source {
        OodSource::Synthetic => {
            let data = (0..count * IMAGE_DIM).map(|_| rng.random::<f64>()).collect();
            ImageDataset::new(Tensor::matrix(count, IMAGE_DIM, data)?, vec![OOD_LABEL; count], DataSource::SyntheticOod)
        }
        OodSource::Cifar(path) => {
            if !path.exists() {
                return Err(DataError::MissingOod(path.clone()));
            }
            let images = parse_cifar_batch(&read(path)?)?;
            let n = images.rows();
            let all = ImageDataset::new(images, vec![OOD_LABEL; n], DataSource::CifarOod)?;
            if count >= n {
                Ok(all)
            } else {
                all.sample(count, rng)
            }
        }
    }
}
