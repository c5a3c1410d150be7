//! Score-level metrics: verification, open-set and closed-set
//! identification.
//!
//! Operating points use one threshold rule throughout. For a target rate
//! `α` over `n` negative scores, the threshold `t` is the smallest candidate
//! score whose admission rate `|{s ≥ t}| / n` is at most `α`; the reported
//! rate is the fraction of positive scores `≥ t`. Candidates are every
//! observed score plus `±∞`.

use super::EvalError;
use crate::numcore::{matmul_nt, Tensor};

/// Cosine similarity.
pub fn score(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Protocol(format!("embedding widths {} and {}", a.len(), b.len())));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::Degenerate("zero embedding".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rows scaled to unit length; a zero row is an error.
pub fn normalize_rows(z: &Tensor) -> Result<Tensor, EvalError> {
    let (n, d) = match z.shape() {
        [n, d] => (*n, *d),
        s => return Err(EvalError::Protocol(format!("embeddings must be a matrix, got {s:?}"))),
    };
    let mut out = z.clone();
    for i in 0..n {
        let row = &mut out.data_mut()[i * d..(i + 1) * d];
        let len = norm(row);
        if len == 0.0 {
            return Err(EvalError::Degenerate(format!("embedding {i} is zero")));
        }
        row.iter_mut().for_each(|v| *v /= len);
    }
    Ok(out)
}

/// Cosine similarity of every probe row against every gallery row,
/// `[probes × gallery]`.
pub fn score_matrix(probes: &Tensor, gallery: &Tensor) -> Result<Tensor, EvalError> {
    if probes.shape().get(1) != gallery.shape().get(1) {
        return Err(EvalError::Protocol(format!(
            "probe embeddings {:?} and gallery embeddings {:?} differ in width",
            probes.shape(),
            gallery.shape()
        )));
    }
    let p = normalize_rows(probes)?;
    let g = normalize_rows(gallery)?;
    let (n, m, d) = (p.shape()[0], g.shape()[0], p.shape()[1]);
    let data = matmul_nt(p.data(), g.data(), n, d, m).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Ok(Tensor::new(vec![n, m], data).expect("score shape"))
}

/// Largest admitted count `a ≤ n` with `a / n ≤ alpha`.
fn admitted(n: usize, alpha: f64) -> usize {
    let rate = |a: usize| a as f64 / n as f64;
    let mut a = ((alpha * n as f64).floor().max(0.0) as usize).min(n);
    while a < n && rate(a + 1) <= alpha {
        a += 1;
    }
    while a > 0 && rate(a) > alpha {
        a -= 1;
    }
    a
}

/// Threshold state for one list of negative scores.
struct Negatives {
    /// Sorted descending.
    sorted: Vec<f64>,
}

impl Negatives {
    fn new(scores: &[f64]) -> Result<Self, EvalError> {
        if scores.iter().any(|s| s.is_nan()) {
            return Err(EvalError::Protocol("NaN score".into()));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { sorted })
    }

    /// Scores strictly above this bound pass at target rate `alpha`;
    /// `None` means every score passes.
    fn bound(&self, alpha: f64) -> Option<f64> {
        let a = admitted(self.sorted.len(), alpha);
        self.sorted.get(a).copied()
    }
}

fn check_targets(targets: &[f64]) -> Result<(), EvalError> {
    match targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        Some(t) => Err(EvalError::Protocol(format!("target rate {t} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn passes(s: f64, bound: Option<f64>) -> bool {
    bound.is_none_or(|b| s > b)
}

/// TPR at each target FPR.
pub fn tpr_at_fpr(genuine: &[f64], impostor: &[f64], targets: &[f64]) -> Result<Vec<f64>, EvalError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(EvalError::Protocol(format!(
            "verification needs genuine and impostor scores, got {} and {}",
            genuine.len(),
            impostor.len()
        )));
    }
    if genuine.iter().any(|s| s.is_nan()) {
        return Err(EvalError::Protocol("NaN score".into()));
    }
    check_targets(targets)?;
    let neg = Negatives::new(impostor)?;
    Ok(targets
        .iter()
        .map(|&alpha| {
            let bound = neg.bound(alpha);
            genuine.iter().filter(|&&s| passes(s, bound)).count() as f64 / genuine.len() as f64
        })
        .collect())
}

/// Every distinct operating point as `(fpr, tpr)`, from the strictest
/// threshold to the most permissive.
pub fn roc_curve(genuine: &[f64], impostor: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(EvalError::Protocol("ROC needs genuine and impostor scores".into()));
    }
    let neg = Negatives::new(impostor)?;
    let n = impostor.len();
    let mut points = Vec::new();
    for a in 0..=n {
        if a > 0 && a < n && neg.sorted[a - 1] == neg.sorted[a] {
            continue;
        }
        let bound = neg.sorted.get(a).copied();
        let tpr = genuine.iter().filter(|&&s| passes(s, bound)).count() as f64 / genuine.len() as f64;
        points.push((a as f64 / n as f64, tpr));
    }
    Ok(points)
}

/// Probe identity in an identification protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeId {
    Known(u32),
    Unknown,
}

/// Highest-scoring gallery index per probe row; ties go to the lower index.
pub fn best_matches(scores: &Tensor) -> Vec<(usize, f64)> {
    let (n, g) = (scores.shape()[0], scores.shape()[1]);
    (0..n)
        .map(|i| {
            let row = &scores.data()[i * g..(i + 1) * g];
            row.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (j, &s)| {
                if s > best.1 {
                    (j, s)
                } else {
                    best
                }
            })
        })
        .collect()
}

fn check_scores(scores: &Tensor, gallery_ids: &[u32], probes: usize) -> Result<(), EvalError> {
    match scores.shape() {
        [p, g] if *p == probes && *g == gallery_ids.len() && *g > 0 => {}
        s => {
            return Err(EvalError::Protocol(format!(
                "score matrix {s:?} for {probes} probes and {} gallery entries",
                gallery_ids.len()
            )))
        }
    }
    if scores.data().iter().any(|s| s.is_nan()) {
        return Err(EvalError::Protocol("NaN score".into()));
    }
    Ok(())
}

/// TPIR at each target FPIR. A known probe counts only when its best
/// gallery match has the right identity and clears the threshold; the
/// threshold comes from the best scores of unknown probes.
pub fn open_set_identify(
    scores: &Tensor,
    gallery_ids: &[u32],
    probe_ids: &[ProbeId],
    targets: &[f64],
) -> Result<Vec<f64>, EvalError> {
    check_scores(scores, gallery_ids, probe_ids.len())?;
    check_targets(targets)?;
    let best = best_matches(scores);
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for (&(j, s), id) in best.iter().zip(probe_ids) {
        match id {
            ProbeId::Known(y) => known.push((gallery_ids[j] == *y, s)),
            ProbeId::Unknown => unknown.push(s),
        }
    }
    if known.is_empty() || unknown.is_empty() {
        return Err(EvalError::Protocol(format!(
            "open-set identification needs known and unknown probes, got {} and {}",
            known.len(),
            unknown.len()
        )));
    }
    let neg = Negatives::new(&unknown)?;
    Ok(targets
        .iter()
        .map(|&alpha| {
            let bound = neg.bound(alpha);
            known.iter().filter(|&&(ok, s)| ok && passes(s, bound)).count() as f64 / known.len() as f64
        })
        .collect())
}

/// Zero-based rank of each probe's best correct gallery entry: the number
/// of entries ordered before it (higher score, or equal score and lower
/// index).
pub fn probe_ranks(scores: &Tensor, gallery_ids: &[u32], probe_ids: &[u32]) -> Result<Vec<usize>, EvalError> {
    check_scores(scores, gallery_ids, probe_ids.len())?;
    let g = gallery_ids.len();
    probe_ids
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = &scores.data()[i * g..(i + 1) * g];
            let beats = |j: usize, k: usize| row[k] > row[j] || (row[k] == row[j] && k < j);
            (0..g)
                .filter(|&j| gallery_ids[j] == y)
                .map(|j| (0..g).filter(|&k| beats(j, k)).count())
                .min()
                .ok_or_else(|| EvalError::Protocol(format!("probe {i} identity {y} is not in the gallery")))
        })
        .collect()
}

/// Rank-K accuracy for each `K`.
pub fn rank_k(scores: &Tensor, gallery_ids: &[u32], probe_ids: &[u32], ks: &[usize]) -> Result<Vec<f64>, EvalError> {
    if probe_ids.is_empty() {
        return Err(EvalError::Protocol("closed-set identification needs probes".into()));
    }
    if ks.contains(&0) {
        return Err(EvalError::Protocol("rank K must be at least 1".into()));
    }
    let ranks = probe_ranks(scores, gallery_ids, probe_ids)?;
    Ok(ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64)
        .collect())
}
