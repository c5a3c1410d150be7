//! Biometric evaluation: verification (TPR@FPR), open-set identification
//! (TPIR@FPIR), closed-set identification (Rank-K), and embedding
//! statistics.
//!
//! ```
//! use ssa_core::eval::tpr_at_fpr;
//!
//! let tpr = tpr_at_fpr(&[0.9, 0.8], &[0.1, 0.2], &[0.01, 1.0]).unwrap();
//! assert_eq!(tpr, vec![1.0, 1.0]);
//! ```

mod metrics;
mod protocol;
mod stats;

pub use metrics::{
    best_matches, normalize_rows, open_set_identify, probe_ranks, rank_k, roc_curve, score,
    score_matrix, tpr_at_fpr, ProbeId,
};
pub use protocol::{IdentificationSplit, VerificationProtocol};
pub use stats::{embedding_stats, EmbeddingStats};

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::DomainDataset;
use crate::model::{Model, ModelError};
use crate::numcore::Tensor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub fpr_targets: Vec<f64>,
    pub fpir_targets: Vec<f64>,
    pub ranks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { fpr_targets: vec![1e-4, 1e-3, 1e-2, 1e-1], fpir_targets: vec![1e-2, 1e-1], ranks: vec![1, 5] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationResult {
    pub genuine_pairs: usize,
    pub impostor_pairs: usize,
    /// `(fpr target, tpr)`.
    pub points: Vec<(f64, f64)>,
    pub roc: Vec<(f64, f64)>,
}

impl VerificationResult {
    /// The smallest configured FPR target that admits at least one
    /// impostor pair, with its TPR.
    pub fn lowest_measurable(&self) -> Option<(f64, f64)> {
        self.points
            .iter()
            .filter(|(fpr, _)| fpr * self.impostor_pairs as f64 >= 1.0)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenSetResult {
    pub known_probes: usize,
    pub unknown_probes: usize,
    pub gallery: usize,
    /// `(fpir target, tpir)`.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedSetResult {
    pub probes: usize,
    pub gallery: usize,
    /// `(K, accuracy)`.
    pub points: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub classes: usize,
    pub verification: VerificationResult,
    pub open_set: OpenSetResult,
    pub closed_set: ClosedSetResult,
    pub stats: EmbeddingStats,
}

fn labels_of(data: &DomainDataset) -> Result<&[u32], EvalError> {
    data.labels.as_deref().ok_or_else(|| EvalError::Protocol("evaluation needs a labeled dataset".into()))
}

fn rows(z: &Tensor, idx: &[usize]) -> Tensor {
    let d = z.shape()[1];
    let data = idx.iter().flat_map(|&i| z.row(i).iter().copied()).collect();
    Tensor::new(vec![idx.len(), d], data).expect("row selection")
}

/// Verification over every pair of `z`.
pub fn verify(z: &Tensor, protocol: &VerificationProtocol, fpr_targets: &[f64]) -> Result<VerificationResult, EvalError> {
    let unit = normalize_rows(z)?;
    let mut genuine = Vec::with_capacity(protocol.genuine_count());
    let mut impostor = Vec::with_capacity(protocol.impostor_count());
    for &(i, j, same) in &protocol.pairs {
        let s: f64 = unit.row(i).iter().zip(unit.row(j)).map(|(a, b)| a * b).sum();
        let s = s.clamp(-1.0, 1.0);
        if same {
            genuine.push(s);
        } else {
            impostor.push(s);
        }
    }
    let tpr = tpr_at_fpr(&genuine, &impostor, fpr_targets)?;
    Ok(VerificationResult {
        genuine_pairs: genuine.len(),
        impostor_pairs: impostor.len(),
        points: fpr_targets.iter().copied().zip(tpr).collect(),
        roc: roc_curve(&genuine, &impostor)?,
    })
}

/// Runs every protocol on a labeled dataset.
pub fn evaluate(model: &mut Model, data: &DomainDataset, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    let labels = labels_of(data)?;
    if data.dim() != model.input_dim() {
        return Err(EvalError::Protocol(format!(
            "model takes {} inputs, dataset images are {}x{} = {}",
            model.input_dim(),
            data.side,
            data.side,
            data.dim()
        )));
    }
    if data.is_empty() {
        return Err(EvalError::Protocol("empty dataset".into()));
    }
    let z = model.embed_all(&data.to_tensor())?;
    let z_mirror = model.embed_all(&data.mirrored_tensor())?;

    let verification = verify(&z, &VerificationProtocol::all_pairs(labels)?, &config.fpr_targets)?;

    let open = IdentificationSplit::open_set(labels)?;
    open.validate_against(labels)?;
    let scores = score_matrix(&rows(&z, &open.probes), &rows(&z, &open.gallery))?;
    let tpir = open_set_identify(&scores, &open.gallery_ids, &open.probe_ids, &config.fpir_targets)?;
    let unknown = open.probe_ids.iter().filter(|p| **p == ProbeId::Unknown).count();
    let open_set = OpenSetResult {
        known_probes: open.probes.len() - unknown,
        unknown_probes: unknown,
        gallery: open.gallery.len(),
        points: config.fpir_targets.iter().copied().zip(tpir).collect(),
    };

    let closed = IdentificationSplit::closed_set(labels)?;
    closed.validate_against(labels)?;
    let scores = score_matrix(&rows(&z, &closed.probes), &rows(&z, &closed.gallery))?;
    let probe_ids = closed.known_ids().expect("closed set has only known probes");
    let acc = rank_k(&scores, &closed.gallery_ids, &probe_ids, &config.ranks)?;
    let closed_set = ClosedSetResult {
        probes: closed.probes.len(),
        gallery: closed.gallery.len(),
        points: config.ranks.iter().copied().zip(acc).collect(),
    };

    let stats = embedding_stats(&z, &z_mirror, labels)?;
    let classes = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    Ok(EvalReport { samples: data.len(), classes, verification, open_set, closed_set, stats })
}

/// Embedding statistics of a labeled dataset.
pub fn analyze(model: &mut Model, data: &DomainDataset) -> Result<EmbeddingStats, EvalError> {
    let labels = labels_of(data)?;
    let z = model.embed_all(&data.to_tensor())?;
    let z_mirror = model.embed_all(&data.mirrored_tensor())?;
    embedding_stats(&z, &z_mirror, labels)
}

impl EmbeddingStats {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let skipped = if self.skipped_classes.is_empty() {
            "none".to_string()
        } else {
            self.skipped_classes.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(out, "mirror_similarity: {}", self.mirror_similarity);
        let _ = writeln!(out, "intra_class_similarity: {}", self.intra_class_similarity);
        let _ = writeln!(out, "inter_class_similarity: {}", self.inter_class_similarity);
        let _ = writeln!(out, "embedding_length: {}", self.embedding_length);
        let _ = writeln!(out, "samples: {}", self.samples);
        let _ = writeln!(out, "intra_pairs: {}", self.intra_pairs);
        let _ = writeln!(out, "inter_pairs: {}", self.inter_pairs);
        let _ = writeln!(out, "skipped_classes: {skipped}");
        out
    }
}

impl EvalReport {
    /// One `[section]` per protocol, `key: value` lines inside.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let v = &self.verification;
        let _ = writeln!(out, "[dataset]\nsamples: {}\nclasses: {}\n", self.samples, self.classes);
        let _ = writeln!(out, "[verification]");
        let _ = writeln!(out, "genuine_pairs: {}\nimpostor_pairs: {}", v.genuine_pairs, v.impostor_pairs);
        for (fpr, tpr) in &v.points {
            let _ = writeln!(out, "tpr@fpr={fpr}: {tpr}");
        }
        match v.lowest_measurable() {
            Some((fpr, tpr)) => {
                let _ = writeln!(out, "lowest_measurable_fpr: {fpr}\ntpr@lowest_measurable_fpr: {tpr}");
            }
            None => {
                let _ = writeln!(out, "lowest_measurable_fpr: none");
            }
        }
        let o = &self.open_set;
        let _ = writeln!(out, "\n[open_set]");
        let _ = writeln!(out, "gallery: {}\nknown_probes: {}\nunknown_probes: {}", o.gallery, o.known_probes, o.unknown_probes);
        for (fpir, tpir) in &o.points {
            let _ = writeln!(out, "tpir@fpir={fpir}: {tpir}");
        }
        let c = &self.closed_set;
        let _ = writeln!(out, "\n[closed_set]");
        let _ = writeln!(out, "gallery: {}\nprobes: {}", c.gallery, c.probes);
        for (k, acc) in &c.points {
            let _ = writeln!(out, "rank_{k}: {acc}");
        }
        let _ = writeln!(out, "\n[embedding]");
        out.push_str(&self.stats.to_text());
        out
    }

    /// `fpr,tpr` rows of the full ROC.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.verification.roc {
            let _ = writeln!(out, "{f},{t}");
        }
        out
    }
}

/// One row per sample: identity (or -1), then the embedding with 17
/// significant digits.
pub fn embeddings_csv(z: &Tensor, labels: Option<&[u32]>) -> String {
    let mut out = String::new();
    for i in 0..z.shape()[0] {
        let id = labels.map_or(-1, |l| i64::from(l[i]));
        let _ = write!(out, "{id}");
        for v in z.row(i) {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests;
