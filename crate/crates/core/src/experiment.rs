//! Baseline-then-adapt experiments and the ρ sweep.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{Benchmark, DomainDataset};
use crate::eval::{evaluate, EvalConfig, EvalError, EvalReport};
use crate::losses::LossConfig;
use crate::model::Model;
use crate::train::{adapt_ssa, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("empty rho list")]
    NoRho,
}

/// One row of a sweep table.
#[derive(Debug)]
pub struct SweepRow {
    /// `None` for the baseline row.
    pub rho: Option<f64>,
    pub outcome: Result<EvalReport, String>,
    /// The adapted model, when adaptation succeeded.
    pub model: Option<Model>,
}

impl SweepRow {
    pub fn label(&self) -> String {
        match self.rho {
            None => "baseline".into(),
            Some(r) => format!("rho={r}"),
        }
    }

    /// TPR at the lowest measurable FPR target.
    pub fn headline(&self) -> Option<f64> {
        self.outcome.as_ref().ok().and_then(|r| r.verification.lowest_measurable()).map(|p| p.1)
    }
}

#[derive(Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Rows are methods; columns are TPR at each FPR target, TPIR at each
    /// FPIR target, Rank-K accuracies and the embedding statistics. Failed
    /// runs keep their row with the error in place of numbers.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header = self.rows.iter().find_map(|r| r.outcome.as_ref().ok());
        let mut cols = vec!["method".to_string()];
        if let Some(r) = header {
            cols.extend(r.verification.points.iter().map(|(f, _)| format!("tpr@fpr={f}")));
            cols.extend(r.open_set.points.iter().map(|(f, _)| format!("tpir@fpir={f}")));
            cols.extend(r.closed_set.points.iter().map(|(k, _)| format!("rank_{k}")));
            cols.extend(["mirror_sim", "intra_sim", "inter_sim", "length"].map(String::from));
        }
        let _ = writeln!(out, "{}", cols.join("\t"));
        for row in &self.rows {
            let mut fields = vec![row.label()];
            match &row.outcome {
                Ok(r) => {
                    fields.extend(r.verification.points.iter().map(|p| format!("{:.4}", p.1)));
                    fields.extend(r.open_set.points.iter().map(|p| format!("{:.4}", p.1)));
                    fields.extend(r.closed_set.points.iter().map(|p| format!("{:.4}", p.1)));
                    let s = &r.stats;
                    fields.extend(
                        [s.mirror_similarity, s.intra_class_similarity, s.inter_class_similarity, s.embedding_length]
                            .map(|v| format!("{v:.4}")),
                    );
                }
                Err(e) => fields.push(format!("FAILED: {e}")),
            }
            let _ = writeln!(out, "{}", fields.join("\t"));
        }
        out
    }
}

/// Adapts `baseline` with one ratio and evaluates on `eval_set`.
pub fn adapt_and_evaluate(
    baseline: &Model,
    bench: &Benchmark,
    adapt: &TrainConfig,
    rho: f64,
    eval: &EvalConfig,
) -> Result<(Model, EvalReport), ExperimentError> {
    let config = TrainConfig { loss: LossConfig { rho, ..adapt.loss }, ..adapt.clone() };
    let (mut model, _) = adapt_ssa(baseline, &bench.source, &bench.target, &config)?;
    let report = evaluate(&mut model, &target_eval(bench)?, eval)?;
    Ok((model, report))
}

fn target_eval(bench: &Benchmark) -> Result<DomainDataset, EvalError> {
    if bench.target_labels.len() != bench.target.len() {
        return Err(EvalError::Protocol("target identities unavailable for evaluation".into()));
    }
    Ok(bench.target_eval())
}

/// Evaluates the baseline, then adapts and evaluates once per ratio, in
/// parallel. Every run uses the same adaptation seed.
pub fn sweep(
    baseline: &Model,
    bench: &Benchmark,
    adapt: &TrainConfig,
    rhos: &[f64],
    eval: &EvalConfig,
) -> Result<SweepReport, ExperimentError> {
    if rhos.is_empty() {
        return Err(ExperimentError::NoRho);
    }
    let base = target_eval(bench).and_then(|d| evaluate(&mut baseline.clone(), &d, eval));
    let mut rows = vec![SweepRow { rho: None, outcome: base.map_err(|e| e.to_string()), model: None }];
    let adapted: Vec<SweepRow> = rhos
        .par_iter()
        .map(|&rho| match adapt_and_evaluate(baseline, bench, adapt, rho, eval) {
            Ok((model, report)) => SweepRow { rho: Some(rho), outcome: Ok(report), model: Some(model) },
            Err(e) => SweepRow { rho: Some(rho), outcome: Err(e.to_string()), model: None },
        })
        .collect();
    rows.extend(adapted);
    Ok(SweepReport { rows })
}
