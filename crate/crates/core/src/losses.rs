//! Training objectives.
//!
//! * focal cross-entropy on labeled source rows,
//! * negative cosine `D(p, z)`,
//! * the symmetric stop-gradient self-similarity loss between an image and
//!   its mirror,
//! * the adapting loss mixing source and target self-similarity by `rho`,
//! * the total loss `L = L_c + L_a`.
//!
//! All reductions are batch means.

use thiserror::Error;

use crate::data::Batch;
use crate::model::{ModelError, Mode, Session};
use crate::numcore::{Graph, NumError, Tensor, Var};

/// Floor applied to the true-class probability before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid loss config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl From<NumError> for LossError {
    fn from(e: NumError) -> Self {
        LossError::Model(ModelError::Num(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Focal exponent; 0 gives plain cross-entropy.
    pub gamma: f64,
    /// Adapting ratio: weight of the target self-similarity term.
    pub rho: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: 2.0, rho: 0.6 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(LossError::Config(format!("rho = {} is outside [0, 1]", self.rho)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(LossError::Config(format!("gamma = {} must be >= 0", self.gamma)));
        }
        Ok(())
    }
}

/// Mean over rows of `-(1 - p_y)^gamma · ln p_y`, with `p_y` the
/// probability of the row's label floored at [`PROB_FLOOR`].
pub fn focal_ce(g: &mut Graph, probs: Var, labels: &[usize], gamma: f64) -> Result<Var, LossError> {
    let (rows, classes) = match g.shape(probs) {
        [r, c] => (*r, *c),
        s => return Err(LossError::Contract(format!("probabilities must be a matrix, got {s:?}"))),
    };
    if labels.len() != rows || rows == 0 {
        return Err(LossError::Contract(format!("{} labels for {rows} rows", labels.len())));
    }
    let value = g.value(probs);
    for i in 0..rows {
        let total: f64 = value.row(i).iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(LossError::Contract(format!("row {i} sums to {total}, not 1")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(LossError::Contract(format!("label {bad} out of range 0..{classes}")));
    }
    let mut mask = vec![0.0; rows * classes];
    for (i, &l) in labels.iter().enumerate() {
        mask[i * classes + l] = 1.0;
    }
    let mask = g.constant(Tensor::new(vec![rows, classes], mask)?);
    let picked = g.mul(probs, mask)?;
    let p_true = g.row_sum(picked)?;
    let floored = g.clamp(p_true, PROB_FLOOR, f64::INFINITY);
    let log_p = g.log(floored)?;
    let per_row = if gamma == 0.0 {
        log_p
    } else {
        let neg = g.neg(p_true);
        let miss = g.add_scalar(neg, 1.0);
        let miss = g.clamp(miss, 0.0, 1.0);
        let weight = g.powf(miss, gamma);
        g.mul(weight, log_p)?
    };
    let mean = g.mean(per_row);
    Ok(g.neg(mean))
}

/// Mean over rows of `-cos(p_i, z_i)`.
pub fn neg_cosine(g: &mut Graph, p: Var, z: Var) -> Result<Var, LossError> {
    if g.shape(p) != g.shape(z) {
        return Err(LossError::Contract(format!(
            "neg_cosine operands {:?} and {:?}",
            g.shape(p),
            g.shape(z)
        )));
    }
    let pn = g.l2_normalize(p)?;
    let zn = g.l2_normalize(z)?;
    let dots = g.row_dot(pn, zn)?;
    let mean = g.mean(dots);
    Ok(g.neg(mean))
}

/// `½[D(h(z'), sg(z)) + D(h(z), sg(z'))]` with `z = f(x)`, `z' = f(x')`.
pub fn simsiam_loss(s: &mut Session<'_>, x: Var, x_mirror: Var) -> Result<Var, LossError> {
    let z = s.embed(x, Mode::Train)?;
    let z_m = s.embed(x_mirror, Mode::Train)?;
    let p = s.head(z, Mode::Train)?;
    let p_m = s.head(z_m, Mode::Train)?;
    symmetric_stop_gradient(&mut s.graph, z, z_m, p, p_m)
}

/// `½[D(p', sg(z)) + D(p, sg(z'))]` for precomputed embeddings and head
/// outputs.
pub fn symmetric_stop_gradient(
    g: &mut Graph,
    z: Var,
    z_mirror: Var,
    p: Var,
    p_mirror: Var,
) -> Result<Var, LossError> {
    let z_stop = g.stop_gradient(z);
    let z_m_stop = g.stop_gradient(z_mirror);
    let a = neg_cosine(g, p_mirror, z_stop)?;
    let b = neg_cosine(g, p, z_m_stop)?;
    let sum = g.add(a, b)?;
    Ok(g.scale(sum, 0.5))
}

/// Diagnostic variant with both branches stopped and no head:
/// `½[D(sg(z'), sg(z)) + D(sg(z), sg(z'))]`. Carries no parameter gradient.
pub fn simsiam_loss_fully_stopped(
    s: &mut Session<'_>,
    x: Var,
    x_mirror: Var,
) -> Result<Var, LossError> {
    let z = s.embed(x, Mode::Train)?;
    let z_m = s.embed(x_mirror, Mode::Train)?;
    let z_stop = s.graph.stop_gradient(z);
    let z_m_stop = s.graph.stop_gradient(z_m);
    let a = neg_cosine(&mut s.graph, z_m_stop, z_stop)?;
    let b = neg_cosine(&mut s.graph, z_stop, z_m_stop)?;
    let sum = s.graph.add(a, b)?;
    Ok(s.graph.scale(sum, 0.5))
}

/// Graph nodes of the adapting loss and its two self-similarity terms.
#[derive(Clone, Copy, Debug)]
pub struct AdaptTerms {
    pub source: Var,
    pub target: Var,
    pub value: Var,
}

/// `(1 - rho) · L_s(source) + rho · L_s(target)`.
pub fn adapting_loss(s: &mut Session<'_>, batch: &Batch, rho: f64) -> Result<AdaptTerms, LossError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(LossError::Config(format!("rho = {rho} is outside [0, 1]")));
    }
    if batch.source_len() == 0 || batch.target_len() == 0 {
        return Err(LossError::Contract("adapting loss needs non-empty source and target".into()));
    }
    let xs = s.input(batch.source.clone());
    let xs_m = s.input(batch.source_mirror.clone());
    let source = simsiam_loss(s, xs, xs_m)?;
    let xt = s.input(batch.target.clone());
    let xt_m = s.input(batch.target_mirror.clone());
    let target = simsiam_loss(s, xt, xt_m)?;
    let ws = s.graph.scale(source, 1.0 - rho);
    let wt = s.graph.scale(target, rho);
    let value = s.graph.add(ws, wt)?;
    Ok(AdaptTerms { source, target, value })
}

/// Graph nodes of every loss component for one step.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub classification: Var,
    pub adapt: Option<AdaptTerms>,
    pub total: Var,
}

/// Scalar values of [`LossTerms`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub classification: f64,
    pub simsiam_source: f64,
    pub simsiam_target: f64,
    pub adapt: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |x: Var| g.value(x).item();
        let (ss, st, a) = match self.adapt {
            Some(t) => (v(t.source), v(t.target), v(t.value)),
            None => (0.0, 0.0, 0.0),
        };
        LossValues {
            classification: v(self.classification),
            simsiam_source: ss,
            simsiam_target: st,
            adapt: a,
            total: v(self.total),
        }
    }
}

/// Which terms enter the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// `L_c` only.
    Classification,
    /// `L_c + L_a`.
    Adapting,
    /// `L_a` only; leaves the classifier without gradient.
    AdaptingOnly,
}

/// Focal cross-entropy on the labeled source rows plus, depending on
/// `objective`, the adapting loss. A batch without target rows is accepted
/// for `rho = 0`, where the target term is dropped.
pub fn total_loss(
    s: &mut Session<'_>,
    batch: &Batch,
    config: &LossConfig,
    objective: Objective,
) -> Result<LossTerms, LossError> {
    config.validate()?;
    let xs = s.input(batch.source.clone());
    let z = s.embed(xs, Mode::Train)?;
    let probs = s.classify(z, Some(&batch.source_labels), Mode::Train)?;
    let classification = focal_ce(&mut s.graph, probs, &batch.source_labels, config.gamma)?;
    let adapt = match objective {
        Objective::Classification => None,
        _ if batch.target_len() == 0 && config.rho == 0.0 => {
            let xs_m = s.input(batch.source_mirror.clone());
            let source = simsiam_loss(s, xs, xs_m)?;
            Some(AdaptTerms { source, target: source, value: source })
        }
        _ => Some(adapting_loss(s, batch, config.rho)?),
    };
    let total = match (objective, adapt) {
        (Objective::Classification, _) | (_, None) => classification,
        (Objective::Adapting, Some(a)) => s.graph.add(classification, a.value)?,
        (Objective::AdaptingOnly, Some(a)) => a.value,
    };
    let adapt = adapt.map(|a| {
        if batch.target_len() == 0 {
            // target term absent: report it as zero rather than aliasing source
            let zero = s.graph.constant(Tensor::scalar(0.0));
            AdaptTerms { target: zero, ..a }
        } else {
            a
        }
    });
    Ok(LossTerms { classification, adapt, total })
}

#[cfg(test)]
mod tests;
