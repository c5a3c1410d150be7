use rand::seq::index;
use rand::Rng;

use super::{mirror, DataError, DomainDataset};
use crate::numcore::Tensor;

/// One training batch: source rows with mirrors and class indices, target
/// rows with mirrors. Either side may be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub source: Tensor,
    pub source_mirror: Tensor,
    pub source_labels: Vec<usize>,
    pub target: Tensor,
    pub target_mirror: Tensor,
}

impl Batch {
    pub fn source_len(&self) -> usize {
        self.source.shape()[0]
    }

    pub fn target_len(&self) -> usize {
        self.target.shape()[0]
    }
}

/// Number of batches in one epoch over `n` samples drawn `k` at a time.
pub fn epoch_batches(n: usize, k: usize) -> usize {
    if k == 0 {
        0
    } else {
        n.div_ceil(k)
    }
}

fn draw(
    data: &DomainDataset,
    k: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor, Tensor, Vec<usize>), DataError> {
    if k > data.len() {
        return Err(DataError::Sampling(format!(
            "batch of {k} requested from {} dataset of {} samples",
            data.domain,
            data.len()
        )));
    }
    let dim = data.dim();
    let picks = index::sample(rng, data.len(), k);
    let mut rows = Vec::with_capacity(k * dim);
    let mut mirrors = Vec::with_capacity(k * dim);
    let mut picked = Vec::with_capacity(k);
    for i in picks.iter() {
        rows.extend_from_slice(data.sample(i));
        mirrors.extend(mirror(data.sample(i), data.side));
        picked.push(i);
    }
    let rows = Tensor::new(vec![k, dim], rows).expect("batch shape");
    let mirrors = Tensor::new(vec![k, dim], mirrors).expect("batch shape");
    Ok((rows, mirrors, picked))
}

/// Draws `k_s` source and `k_t` target samples, each without replacement
/// within the batch.
pub fn next_batch(
    source: &DomainDataset,
    target: Option<&DomainDataset>,
    k_s: usize,
    k_t: usize,
    rng: &mut impl Rng,
) -> Result<Batch, DataError> {
    let classes = source
        .class_indices()
        .ok_or_else(|| DataError::Sampling("source dataset has no labels".into()))?;
    let (s, sm, picked) = draw(source, k_s, rng)?;
    let source_labels = picked.iter().map(|&i| classes[i]).collect();
    let (t, tm) = match target {
        Some(target) => {
            if target.dim() != source.dim() {
                return Err(DataError::Shape(format!(
                    "source images are {}², target images are {}²",
                    source.side, target.side
                )));
            }
            let (t, tm, _) = draw(target, k_t, rng)?;
            (t, tm)
        }
        None if k_t == 0 => {
            let empty = Tensor::zeros(&[0, source.dim()]);
            (empty.clone(), empty)
        }
        None => return Err(DataError::Sampling("target batch requested without a target set".into())),
    };
    Ok(Batch { source: s, source_mirror: sm, source_labels, target: t, target_mirror: tm })
}
