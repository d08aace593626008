//! Image datasets: procedural synthetic shapes, CIFAR-10 binary files, and
//! the subset/filter transforms used by auxiliary-data ablations.

mod cifar;
mod synthetic;

pub use cifar::{load_cifar10, load_cifar10_files, write_cifar10, CIFAR10_CLASSES, CIFAR10_LIVING, CIFAR_RECORD_LEN};
pub use synthetic::{gen_synthetic, DomainShift, SyntheticSpec, SYNTHETIC_CLASSES, SYNTHETIC_LIVING};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Cifar10Bin,
    Filtered,
    Subsampled,
}

/// `[N, C, H, W]` images in [-1, 1] with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    images: Tensor<f64>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    provenance: Provenance,
}

impl ImageDataset {
    pub fn new(images: Tensor<f64>, labels: Vec<usize>, class_names: Vec<String>, provenance: Provenance) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Shape(format!("images must be [N, C, H, W], got {:?}", images.shape())));
        }
        if images.batch() != labels.len() {
            return Err(Error::Shape(format!("{} images, {} labels", images.batch(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidArgument(format!("label {bad} with {} classes", class_names.len())));
        }
        if images.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("image values outside [-1, 1]".into()));
        }
        Ok(Self { images, labels, class_names, provenance })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f64> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Per-sample `[C, H, W]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Images and labels at `indices`, converted to the working precision.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let x = self.images.select_rows(indices)?.cast();
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    pub fn subset(&self, indices: &[usize], provenance: Provenance) -> Result<Self> {
        let images = self.images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Self { images, labels, class_names: self.class_names.clone(), provenance })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Keep only samples whose label is in `keep`, preserving order.
pub fn filter_categories(ds: &ImageDataset, keep: &[usize]) -> Result<ImageDataset> {
    if keep.is_empty() {
        return Err(Error::InvalidArgument("category filter keeps nothing".into()));
    }
    if let Some(&bad) = keep.iter().find(|&&k| k >= ds.num_classes()) {
        return Err(Error::InvalidArgument(format!("class {bad} not in dataset ({} classes)", ds.num_classes())));
    }
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| keep.contains(&ds.labels[i])).collect();
    if idx.is_empty() {
        return Err(Error::Empty("category filter result"));
    }
    if idx.len() == ds.len() {
        return Ok(ds.clone());
    }
    ds.subset(&idx, Provenance::Filtered)
}

/// `n` samples drawn without replacement, in draw order.
pub fn subsample(ds: &ImageDataset, n: usize, rng: &mut Rng) -> Result<ImageDataset> {
    if n == 0 || n > ds.len() {
        return Err(Error::InvalidArgument(format!("subsample size {n} outside 1..={}", ds.len())));
    }
    let mut perm = rng.permutation(ds.len());
    perm.truncate(n);
    ds.subset(&perm, Provenance::Subsampled)
}
