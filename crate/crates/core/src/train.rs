//! Optimizer, learning-rate schedule, and the two training stages:
//! source-only baseline pretraining and SSA adaptation.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{epoch_batches, next_batch, Batch, DataError, DomainDataset};
use crate::losses::{total_loss, LossConfig, LossError, LossValues, Objective};
use crate::model::{ClassifierSettings, Mode, Model, ModelConfig, ModelError, TensorId, TensorStore};
use crate::numcore::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: String },
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Loss(LossError::Model(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Baseline,
    Adapt,
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Stage::Baseline),
            "adapt" => Ok(Stage::Adapt),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_divisor: f64,
    /// Epochs between learning-rate divisions.
    pub lr_interval: usize,
    pub momentum: f64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub loss: LossConfig,
    pub seed: u64,
    /// Hidden widths of the embedding network (baseline stage only).
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    /// SimSiam head hidden width; `None` means a quarter of the embedding
    /// width.
    pub head_hidden: Option<usize>,
    pub classifier: ClassifierSettings,
    /// Diagnostic: optimize only the adapting loss during adaptation.
    pub drop_classification: bool,
    /// Baseline only: classify each source batch together with its mirrors.
    pub mirror_augment: bool,
}

impl TrainConfig {
    pub fn baseline() -> Self {
        Self {
            stage: Stage::Baseline,
            epochs: 50,
            base_lr: 0.1,
            lr_divisor: 10.0,
            lr_interval: 12,
            momentum: 0.9,
            batch_source: 32,
            batch_target: 32,
            loss: LossConfig::default(),
            seed: 0,
            hidden: vec![256, 256],
            embed_dim: 128,
            head_hidden: None,
            classifier: ClassifierSettings::default(),
            drop_classification: false,
            mirror_augment: false,
        }
    }

    pub fn adapt() -> Self {
        Self { stage: Stage::Adapt, base_lr: 1e-4, ..Self::baseline() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.base_lr));
        }
        if self.lr_divisor.is_nan() || self.lr_divisor < 1.0 {
            return bad(format!("lr divisor {} must be >= 1", self.lr_divisor));
        }
        if self.lr_interval == 0 {
            return bad("lr interval must be at least one epoch".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_source < 2 {
            return bad("source batch must hold at least 2 samples".into());
        }
        if self.stage == Stage::Adapt && self.batch_target < 2 {
            return bad("target batch must hold at least 2 samples".into());
        }
        if self.embed_dim == 0 || self.hidden.contains(&0) || self.head_hidden == Some(0) {
            return bad("layer widths must be positive".into());
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// `base_lr / divisor^⌊epoch / interval⌋`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let drops = (epoch / config.lr_interval.max(1)) as i32;
    config.base_lr / config.lr_divisor.powi(drops)
}

/// SGD with momentum: `v ← μ·v + g`, `p ← p − lr·v`.
///
/// Nothing is modified when any gradient is non-finite.
pub fn sgd_step(
    params: &mut TensorStore,
    grads: &[Tensor],
    lr: f64,
    momentum: f64,
    velocity: &mut Vec<Tensor>,
    step: usize,
) -> Result<(), TrainError> {
    if grads.len() != params.len() {
        return Err(TrainError::Config(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
        return Err(TrainError::NonFinite { step, what: format!("gradient of {}", params.name(TensorId(i))) });
    }
    if velocity.is_empty() {
        *velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
    }
    for ((p, g), v) in params.tensors_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || v.shape() != g.shape() {
            return Err(TrainError::Config(format!("gradient shape {:?} for parameter {:?}", g.shape(), p.shape())));
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// One optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossValues,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    /// One `key=value` line per step.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let l = &r.losses;
            let _ = writeln!(
                out,
                "step={} epoch={} lr={:e} l_c={:.12e} l_s_source={:.12e} l_s_target={:.12e} l_a={:.12e} total={:.12e} wall_s={:.3}",
                r.step, r.epoch, r.lr, l.classification, l.simsiam_source, l.simsiam_target, l.adapt, l.total, r.wall_secs
            );
        }
        out
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }
}

struct Loop<'a> {
    source: &'a DomainDataset,
    target: Option<&'a DomainDataset>,
    steps_per_epoch: usize,
    k_t: usize,
    objective: Objective,
}

fn run(model: &mut Model, config: &TrainConfig, spec: Loop<'_>, rng: &mut ChaCha8Rng) -> Result<TrainLog, TrainError> {
    let start = Instant::now();
    let mut log = TrainLog::default();
    let mut velocity = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        for _ in 0..spec.steps_per_epoch {
            let mut batch = next_batch(spec.source, spec.target, config.batch_source, spec.k_t, rng)?;
            if config.mirror_augment && spec.objective == Objective::Classification {
                batch = with_mirrored_sources(batch);
            }
            let (losses, grads) = {
                let mut s = model.session();
                let terms = total_loss(&mut s, &batch, &config.loss, spec.objective)?;
                let values = terms.values(&s.graph);
                if !values.total.is_finite() {
                    return Err(TrainError::NonFinite { step, what: "loss".into() });
                }
                (values, s.param_grads(terms.total)?)
            };
            sgd_step(&mut model.params, &grads, lr, config.momentum, &mut velocity, step)?;
            log.records.push(StepRecord {
                step,
                epoch,
                lr,
                losses,
                wall_secs: start.elapsed().as_secs_f64(),
            });
            step += 1;
        }
    }
    Ok(log)
}

fn with_mirrored_sources(mut batch: Batch) -> Batch {
    let (k, d) = (batch.source.shape()[0], batch.source.shape()[1]);
    let mut rows = batch.source.data().to_vec();
    rows.extend_from_slice(batch.source_mirror.data());
    let mut mirrors = batch.source_mirror.data().to_vec();
    mirrors.extend_from_slice(batch.source.data());
    batch.source = Tensor::new(vec![2 * k, d], rows).expect("stacked batch");
    batch.source_mirror = Tensor::new(vec![2 * k, d], mirrors).expect("stacked batch");
    batch.source_labels.extend_from_within(..);
    batch
}

/// Trains a fresh model on the labeled source set with focal
/// cross-entropy only.
pub fn train_baseline(source: &DomainDataset, config: &TrainConfig) -> Result<(Model, TrainLog), TrainError> {
    config.validate()?;
    if source.labels.is_none() {
        return Err(TrainError::Config("baseline training needs a labeled source set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arch = ModelConfig {
        input_dim: source.dim(),
        hidden: config.hidden.clone(),
        embed_dim: config.embed_dim,
        num_classes: source.num_classes(),
        classifier: config.classifier,
    };
    let mut model = Model::new(&arch, &mut rng);
    let spec = Loop {
        source,
        target: None,
        steps_per_epoch: epoch_batches(source.len(), config.batch_source),
        k_t: 0,
        objective: Objective::Classification,
    };
    let log = run(&mut model, config, spec, &mut rng)?;
    Ok((model, log))
}

/// Continues from a baseline model with `L = L_c + L_a`. Epochs are
/// counted in target-set batches. A model without a SimSiam head gets a
/// fresh one; zero epochs return the input unchanged.
pub fn adapt_ssa(
    baseline: &Model,
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
) -> Result<(Model, TrainLog), TrainError> {
    config.validate()?;
    let mut model = baseline.clone();
    model.set_classifier(config.classifier);
    if config.epochs == 0 {
        return Ok((model, TrainLog::default()));
    }
    if source.dim() != model.input_dim() || target.dim() != model.input_dim() {
        return Err(TrainError::Config(format!(
            "model takes {} inputs; source has {}, target has {}",
            model.input_dim(),
            source.dim(),
            target.dim()
        )));
    }
    if source.num_classes() != model.num_classes() {
        return Err(TrainError::Config(format!(
            "model classifies {} classes; source has {}",
            model.num_classes(),
            source.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if model.head.is_none() {
        model.attach_head(config.head_hidden, &mut rng);
    }
    let objective =
        if config.drop_classification { Objective::AdaptingOnly } else { Objective::Adapting };
    let spec = Loop {
        source,
        target: Some(target),
        steps_per_epoch: epoch_batches(target.len(), config.batch_target),
        k_t: config.batch_target,
        objective,
    };
    let log = run(&mut model, config, spec, &mut rng)?;
    Ok((model, log))
}

/// Fraction of samples whose highest-probability class is their label,
/// in inference mode.
pub fn accuracy(model: &mut Model, data: &DomainDataset) -> Result<f64, TrainError> {
    let labels = data
        .class_indices()
        .ok_or_else(|| TrainError::Config("accuracy needs a labeled dataset".into()))?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let z = model.embed_all(&data.to_tensor())?;
    let mut s = model.session();
    let zv = s.input(z);
    let probs = s.classify(zv, None, Mode::Eval)?;
    let p = s.graph.value(probs);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let row = p.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == l
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}
