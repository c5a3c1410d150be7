//! Two-domain synthetic benchmark, mirror augmentation, batch sampling and
//! dataset files.

mod io;
mod sampler;
mod synth;

pub use io::{load_dataset, read_dataset, save_dataset, write_csv, write_dataset, DATASET_MAGIC};
pub use sampler::{epoch_batches, next_batch, Batch};
pub use synth::{generate, Benchmark, SyntheticSpec};

use thiserror::Error;

use crate::numcore::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid synthetic spec: `{field}` {message}")]
    Spec { field: &'static str, message: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("dataset format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    fn tag(self) -> u8 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Domain::Source),
            1 => Some(Domain::Target),
            _ => None,
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

/// Square grayscale images flattened row-major, values in `[0, 1]`.
///
/// Identity labels are global ids inside `class_range`. Training target
/// sets carry no labels; a labeled copy of a target set exists only for
/// evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub side: usize,
    pub samples: Vec<f64>,
    pub labels: Option<Vec<u32>>,
    pub class_range: (u32, u32),
    pub domain: Domain,
}

impl DomainDataset {
    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn len(&self) -> usize {
        if self.dim() == 0 {
            0
        } else {
            self.samples.len() / self.dim()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.samples[i * d..(i + 1) * d]
    }

    pub fn num_classes(&self) -> usize {
        (self.class_range.1 - self.class_range.0) as usize
    }

    /// Labels shifted to `0..num_classes`, for the classifier.
    pub fn class_indices(&self) -> Option<Vec<usize>> {
        let lo = self.class_range.0;
        self.labels.as_ref().map(|l| l.iter().map(|&y| (y - lo) as usize).collect())
    }

    /// All samples as an `[n × side²]` matrix.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.dim()], self.samples.clone()).expect("dataset shape")
    }

    /// Mirror of every sample, `[n × side²]`.
    pub fn mirrored_tensor(&self) -> Tensor {
        let mut out = Vec::with_capacity(self.samples.len());
        for i in 0..self.len() {
            out.extend(mirror(self.sample(i), self.side));
        }
        Tensor::new(vec![self.len(), self.dim()], out).expect("dataset shape")
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self, DataError> {
        if labels.len() != self.len() {
            return Err(DataError::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }
}

/// Horizontal flip of a flattened `side × side` image.
pub fn mirror(x: &[f64], side: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(side) {
        out.extend(row.iter().rev());
    }
    out
}

/// [`mirror`] with the side length inferred; errors when the length is not
/// a perfect square.
pub fn mirror_square(x: &[f64]) -> Result<Vec<f64>, DataError> {
    let side = (x.len() as f64).sqrt().round() as usize;
    if side * side != x.len() {
        return Err(DataError::Shape(format!("{} values is not a square image", x.len())));
    }
    Ok(mirror(x, side))
}
