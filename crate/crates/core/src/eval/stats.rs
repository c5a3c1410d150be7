use super::metrics::norm;
use super::EvalError;
use crate::numcore::Tensor;

/// Mean similarities and length of a set of embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStats {
    /// Mean cosine between each embedding and that of its mirror image.
    pub mirror_similarity: f64,
    /// Mean cosine over all same-class pairs.
    pub intra_class_similarity: f64,
    /// Mean cosine over all different-class pairs.
    pub inter_class_similarity: f64,
    /// Mean Euclidean norm of the raw embeddings.
    pub embedding_length: f64,
    pub samples: usize,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
    /// Classes with fewer than two samples, left out of the intra-class
    /// mean.
    pub skipped_classes: Vec<u32>,
}

/// Statistics from embeddings `z`, their mirror embeddings, and labels.
pub fn embedding_stats(z: &Tensor, z_mirror: &Tensor, labels: &[u32]) -> Result<EmbeddingStats, EvalError> {
    let (n, d) = match z.shape() {
        [n, d] => (*n, *d),
        s => return Err(EvalError::Protocol(format!("embeddings must be a matrix, got {s:?}"))),
    };
    if z_mirror.shape() != z.shape() || labels.len() != n {
        return Err(EvalError::Protocol(format!(
            "embeddings {:?}, mirror embeddings {:?}, {} labels",
            z.shape(),
            z_mirror.shape(),
            labels.len()
        )));
    }
    if n == 0 {
        return Err(EvalError::Protocol("no embeddings".into()));
    }
    let row = |t: &Tensor, i: usize| t.data()[i * d..(i + 1) * d].to_vec();
    let mut lengths = Vec::with_capacity(n);
    let mut unit = Vec::with_capacity(n);
    let mut unit_mirror = Vec::with_capacity(n);
    for i in 0..n {
        for (src, dst) in [(z, &mut unit), (z_mirror, &mut unit_mirror)] {
            let r = row(src, i);
            let len = norm(&r);
            if len == 0.0 {
                return Err(EvalError::Degenerate(format!("embedding {i} is zero")));
            }
            dst.push(r.iter().map(|v| v / len).collect::<Vec<f64>>());
        }
        lengths.push(norm(&row(z, i)));
    }
    let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mirror = (0..n).map(|i| cos(&unit[i], &unit_mirror[i])).sum::<f64>() / n as f64;
    let (mut intra, mut inter) = (0.0, 0.0);
    let (mut n_intra, mut n_inter) = (0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let c = cos(&unit[i], &unit[j]);
            if labels[i] == labels[j] {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 || n_inter == 0 {
        return Err(EvalError::Protocol(format!(
            "need same-class and different-class pairs, got {n_intra} and {n_inter}"
        )));
    }
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let skipped_classes = counts.into_iter().filter(|&(_, c)| c < 2).map(|(l, _)| l).collect();
    Ok(EmbeddingStats {
        mirror_similarity: mirror,
        intra_class_similarity: intra / n_intra as f64,
        inter_class_similarity: inter / n_inter as f64,
        embedding_length: lengths.iter().sum::<f64>() / n as f64,
        samples: n,
        intra_pairs: n_intra,
        inter_pairs: n_inter,
        skipped_classes,
    })
}
