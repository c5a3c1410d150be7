use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::store::{Bound, TensorId, TensorStore};
use super::{ModelError, Mode};
use crate::numcore::{Graph, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// He-style initialization: N(0, 2 / fan_in).
pub(crate) fn he_normal(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("init shape")
}

/// `y = x W + b` with `W: [in × out]`, `b: [out]`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub weight: TensorId,
    pub bias: TensorId,
}

impl Affine {
    pub(crate) fn init(
        params: &mut TensorStore,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.insert(format!("{prefix}.weight"), he_normal(rng, fan_in, fan_out));
        let bias = params.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
        Self { weight, bias }
    }

    pub(crate) fn locate(params: &TensorStore, prefix: &str) -> Option<Self> {
        Some(Self {
            weight: params.find(&format!("{prefix}.weight"))?,
            bias: params.find(&format!("{prefix}.bias"))?,
        })
    }

    pub fn dims(&self, params: &TensorStore) -> (usize, usize) {
        let s = params.get(self.weight).shape();
        (s[0], s[1])
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, ModelError> {
        let rows = g.shape(x)[0];
        let xw = g.matmul(x, p.var(self.weight))?;
        let b = g.broadcast_rows(p.var(self.bias), rows)?;
        Ok(g.add(xw, b)?)
    }
}

/// Batch-statistics normalization with a learned per-feature scale/shift.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: TensorId,
    pub beta: TensorId,
    pub running_mean: TensorId,
    pub running_var: TensorId,
}

impl BatchNorm {
    pub(crate) fn init(
        params: &mut TensorStore,
        stats: &mut TensorStore,
        prefix: &str,
        width: usize,
    ) -> Self {
        Self {
            gamma: params.insert(format!("{prefix}.gamma"), Tensor::filled(&[width], 1.0)),
            beta: params.insert(format!("{prefix}.beta"), Tensor::zeros(&[width])),
            running_mean: stats.insert(format!("{prefix}.running_mean"), Tensor::zeros(&[width])),
            running_var: stats.insert(format!("{prefix}.running_var"), Tensor::filled(&[width], 1.0)),
        }
    }

    pub(crate) fn locate(params: &TensorStore, stats: &TensorStore, prefix: &str) -> Option<Self> {
        Some(Self {
            gamma: params.find(&format!("{prefix}.gamma"))?,
            beta: params.find(&format!("{prefix}.beta"))?,
            running_mean: stats.find(&format!("{prefix}.running_mean"))?,
            running_var: stats.find(&format!("{prefix}.running_var"))?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        stats: &mut TensorStore,
        x: Var,
        mode: Mode,
    ) -> Result<Var, ModelError> {
        let (rows, width) = match g.shape(x) {
            [r, c] => (*r, *c),
            s => return Err(ModelError::Shape(format!("batch norm input {s:?}"))),
        };
        let normalized = match mode {
            Mode::Train => {
                if rows < 2 {
                    return Err(ModelError::BatchSize(rows));
                }
                let mean = g.col_mean(x)?;
                let mean_b = g.broadcast_rows(mean, rows)?;
                let centered = g.sub(x, mean_b)?;
                let sq = g.mul(centered, centered)?;
                let var = g.col_mean(sq)?;
                let shifted = g.add_scalar(var, BN_EPS);
                let std = g.sqrt(shifted)?;
                let std_b = g.broadcast_rows(std, rows)?;
                let out = g.div(centered, std_b)?;

                let unbias = rows as f64 / (rows - 1) as f64;
                let batch_mean = g.value(mean).data().to_vec();
                let batch_var = g.value(var).data().to_vec();
                let rm = stats.get_mut(self.running_mean).data_mut();
                for (r, m) in rm.iter_mut().zip(&batch_mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
                let rv = stats.get_mut(self.running_var).data_mut();
                for (r, v) in rv.iter_mut().zip(&batch_var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
                }
                out
            }
            Mode::Eval => {
                let mean = stats.get(self.running_mean).clone().reshaped(&[1, width])?;
                let inv_std = stats
                    .get(self.running_var)
                    .map(|v| 1.0 / (v + BN_EPS).sqrt())
                    .reshaped(&[1, width])?;
                let mean = g.constant(mean);
                let mean_b = g.broadcast_rows(mean, rows)?;
                let inv = g.constant(inv_std);
                let inv_b = g.broadcast_rows(inv, rows)?;
                let centered = g.sub(x, mean_b)?;
                g.mul(centered, inv_b)?
            }
        };
        let gamma = g.broadcast_rows(p.var(self.gamma), rows)?;
        let beta = g.broadcast_rows(p.var(self.beta), rows)?;
        let scaled = g.mul(normalized, gamma)?;
        Ok(g.add(scaled, beta)?)
    }
}

/// The embedding function: `[affine → batch norm → relu]* → affine`.
///
/// The output layer has no normalization or activation, so embeddings are
/// raw vectors whose length is meaningful.
#[derive(Clone, Debug)]
pub struct EmbeddingNet {
    pub hidden: Vec<(Affine, BatchNorm)>,
    pub output: Affine,
    pub input_dim: usize,
    pub embed_dim: usize,
}

impl EmbeddingNet {
    pub(crate) fn init(
        params: &mut TensorStore,
        stats: &mut TensorStore,
        input_dim: usize,
        hidden: &[usize],
        embed_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input_dim;
        for (i, &width) in hidden.iter().enumerate() {
            let prefix = format!("embed.{i}");
            let affine = Affine::init(params, &prefix, fan_in, width, rng);
            let bn = BatchNorm::init(params, stats, &format!("{prefix}.bn"), width);
            layers.push((affine, bn));
            fan_in = width;
        }
        let output = Affine::init(params, "embed.out", fan_in, embed_dim, rng);
        Self { hidden: layers, output, input_dim, embed_dim }
    }

    pub(crate) fn locate(params: &TensorStore, stats: &TensorStore) -> Result<Self, ModelError> {
        let mut hidden = Vec::new();
        while let Some(affine) = Affine::locate(params, &format!("embed.{}", hidden.len())) {
            let prefix = format!("embed.{}.bn", hidden.len());
            let bn = BatchNorm::locate(params, stats, &prefix)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensors for {prefix}")))?;
            hidden.push((affine, bn));
        }
        let output = Affine::locate(params, "embed.out")
            .ok_or_else(|| ModelError::Checkpoint("missing embed.out layer".into()))?;
        let input_dim = match hidden.first() {
            Some((a, _)) => a.dims(params).0,
            None => output.dims(params).0,
        };
        let mut prev = input_dim;
        for a in hidden.iter().map(|(a, _)| a).chain(std::iter::once(&output)) {
            let (i, o) = a.dims(params);
            if i != prev || params.get(a.bias).shape() != [o] {
                return Err(ModelError::Checkpoint("embedding layer shapes do not chain".into()));
            }
            prev = o;
        }
        let embed_dim = output.dims(params).1;
        Ok(Self { hidden, output, input_dim, embed_dim })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        stats: &mut TensorStore,
        x: Var,
        mode: Mode,
    ) -> Result<Var, ModelError> {
        match g.shape(x) {
            [_, c] if *c == self.input_dim => {}
            s => {
                return Err(ModelError::Shape(format!(
                    "embedding input {s:?}, expected [batch, {}]",
                    self.input_dim
                )))
            }
        }
        if mode == Mode::Train && g.shape(x)[0] < 2 {
            return Err(ModelError::BatchSize(g.shape(x)[0]));
        }
        let mut h = x;
        for (affine, bn) in &self.hidden {
            let a = affine.forward(g, p, h)?;
            let n = bn.forward(g, p, stats, a, mode)?;
            h = g.relu(n);
        }
        self.output.forward(g, p, h)
    }
}

/// Two-layer head `h` that remaps one branch's embedding before it is
/// compared with the other branch's stopped embedding.
#[derive(Clone, Debug)]
pub struct SimSiamHead {
    pub first: Affine,
    pub bn: BatchNorm,
    pub second: Affine,
}

impl SimSiamHead {
    pub(crate) fn init(
        params: &mut TensorStore,
        stats: &mut TensorStore,
        embed_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let first = Affine::init(params, "head.0", embed_dim, hidden, rng);
        let bn = BatchNorm::init(params, stats, "head.bn", hidden);
        let second = Affine::init(params, "head.1", hidden, embed_dim, rng);
        Self { first, bn, second }
    }

    pub(crate) fn locate(params: &TensorStore, stats: &TensorStore) -> Option<Self> {
        Some(Self {
            first: Affine::locate(params, "head.0")?,
            bn: BatchNorm::locate(params, stats, "head.bn")?,
            second: Affine::locate(params, "head.1")?,
        })
    }

    pub fn hidden_width(&self, params: &TensorStore) -> usize {
        self.first.dims(params).1
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        stats: &mut TensorStore,
        z: Var,
        mode: Mode,
    ) -> Result<Var, ModelError> {
        let a = self.first.forward(g, p, z)?;
        let n = self.bn.forward(g, p, stats, a, mode)?;
        let r = g.relu(n);
        self.second.forward(g, p, r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierMode {
    Softmax,
    AngularMargin,
}

impl std::str::FromStr for ClassifierMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "angular-margin" | "arcface" => Ok(Self::AngularMargin),
            other => Err(format!("unknown classifier mode `{other}` (softmax | angular-margin)")),
        }
    }
}

impl std::fmt::Display for ClassifierMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Softmax => "softmax",
            Self::AngularMargin => "angular-margin",
        })
    }
}

/// Classification head over embeddings, `W: [d × C]`.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub weight: TensorId,
    pub mode: ClassifierMode,
    pub scale: f64,
    pub margin: f64,
}

/// Guard on `1 - cos²θ` before taking the square root for `sin θ`.
const SIN_SQ_FLOOR: f64 = 1e-14;

impl ClassifierHead {
    pub fn num_classes(&self, params: &TensorStore) -> usize {
        params.get(self.weight).shape()[1]
    }

    /// Class probabilities `[b × C]`.
    ///
    /// In angular-margin mode, training with labels replaces the true-class
    /// logit `s·cos θ_y` by `s·cos(θ_y + m)`; without labels no margin is
    /// applied.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        z: Var,
        labels: Option<&[usize]>,
        mode: Mode,
    ) -> Result<Var, ModelError> {
        let w = p.var(self.weight);
        let (d, classes) = {
            let s = g.shape(w);
            (s[0], s[1])
        };
        let rows = match g.shape(z) {
            [r, c] if *c == d => *r,
            s => return Err(ModelError::Shape(format!("classifier input {s:?}, expected [b, {d}]"))),
        };
        if let Some(labels) = labels {
            if labels.len() != rows {
                return Err(ModelError::Contract(format!(
                    "{} labels for a batch of {rows}",
                    labels.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(ModelError::Contract(format!("label {bad} out of range 0..{classes}")));
            }
        }
        let logits = match self.mode {
            ClassifierMode::Softmax => g.matmul(z, w)?,
            ClassifierMode::AngularMargin => {
                let zn = g.l2_normalize(z)?;
                let wsq = g.mul(w, w)?;
                let col_sq = g.col_sum(wsq)?;
                let col_norm = g.sqrt(col_sq)?;
                let col_norm = g.broadcast_rows(col_norm, d)?;
                let wn = g.div(w, col_norm)?;
                let cos = g.matmul(zn, wn)?;
                let with_margin = match (mode, labels) {
                    (Mode::Train, None) => {
                        return Err(ModelError::Contract(
                            "angular-margin training needs labels".into(),
                        ))
                    }
                    (Mode::Train, Some(labels)) if self.margin != 0.0 => {
                        let c = g.clamp(cos, -1.0, 1.0);
                        let c_sq = g.mul(c, c)?;
                        let neg = g.neg(c_sq);
                        let sin_sq = g.add_scalar(neg, 1.0);
                        let sin_sq = g.clamp(sin_sq, SIN_SQ_FLOOR, 1.0);
                        let sin = g.sqrt(sin_sq)?;
                        let a = g.scale(c, self.margin.cos());
                        let b = g.scale(sin, self.margin.sin());
                        let shifted = g.sub(a, b)?;
                        let delta = g.sub(shifted, cos)?;
                        let mask = g.constant(one_hot(labels, classes));
                        let masked = g.mul(delta, mask)?;
                        g.add(cos, masked)?
                    }
                    _ => cos,
                };
                g.scale(with_margin, self.scale)
            }
        };
        Ok(g.softmax_rows(logits)?)
    }
}

pub(crate) fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data).expect("one-hot shape")
}
