//! Embedding network `f`, classification head, and SimSiam head `h`.

mod checkpoint;
mod layers;
mod store;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use layers::{
    Affine, BatchNorm, ClassifierHead, ClassifierMode, EmbeddingNet, SimSiamHead, BN_EPS,
    BN_MOMENTUM,
};
pub use store::{Bound, TensorId, TensorStore};

use rand::Rng;
use thiserror::Error;

use crate::numcore::{Gradients, Graph, NumError, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("batch of {0} samples in training mode; batch statistics need at least 2")]
    BatchSize(usize),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether normalization layers use batch statistics (and update their
/// running averages) or the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub classifier: ClassifierSettings,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 256,
            hidden: vec![256, 256],
            embed_dim: 128,
            num_classes: 20,
            classifier: ClassifierSettings::default(),
        }
    }
}

/// Classifier hyperparameters not recoverable from tensor shapes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierSettings {
    pub mode: ClassifierMode,
    pub scale: f64,
    pub margin: f64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self { mode: ClassifierMode::AngularMargin, scale: 16.0, margin: 0.3 }
    }
}

/// All learnable parameters plus normalization running statistics.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: TensorStore,
    pub stats: TensorStore,
    pub embedding: EmbeddingNet,
    pub classifier: ClassifierHead,
    pub head: Option<SimSiamHead>,
}

impl Model {
    pub fn new(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut params = TensorStore::new();
        let mut stats = TensorStore::new();
        let embedding = EmbeddingNet::init(
            &mut params,
            &mut stats,
            config.input_dim,
            &config.hidden,
            config.embed_dim,
            rng,
        );
        let weight = params.insert(
            "classifier.weight",
            layers::he_normal(rng, config.embed_dim, config.num_classes),
        );
        let classifier = ClassifierHead {
            weight,
            mode: config.classifier.mode,
            scale: config.classifier.scale,
            margin: config.classifier.margin,
        };
        Self { params, stats, embedding, classifier, head: None }
    }

    /// Adds a freshly initialized SimSiam head. Default hidden width is a
    /// quarter of the embedding dimension.
    pub fn attach_head(&mut self, hidden: Option<usize>, rng: &mut impl Rng) {
        let d = self.embedding.embed_dim;
        let hidden = hidden.unwrap_or((d / 4).max(1));
        self.head = Some(SimSiamHead::init(&mut self.params, &mut self.stats, d, hidden, rng));
    }

    pub fn input_dim(&self) -> usize {
        self.embedding.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes(&self.params)
    }

    pub fn set_classifier(&mut self, settings: ClassifierSettings) {
        self.classifier.mode = settings.mode;
        self.classifier.scale = settings.scale;
        self.classifier.margin = settings.margin;
    }

    pub fn session(&mut self) -> Session<'_> {
        let mut graph = Graph::new();
        let bound = self.params.bind(&mut graph);
        Session { graph, bound, model: self }
    }

    /// Inference-mode embeddings for a `[n × input_dim]` matrix, computed
    /// in chunks.
    pub fn embed_all(&mut self, inputs: &Tensor) -> Result<Tensor, ModelError> {
        let (n, dim) = match inputs.shape() {
            [n, d] => (*n, *d),
            s => return Err(ModelError::Shape(format!("inputs {s:?}"))),
        };
        if dim != self.input_dim() {
            return Err(ModelError::Shape(format!(
                "inputs have width {dim}, model expects {}",
                self.input_dim()
            )));
        }
        let d = self.embed_dim();
        let mut out = Vec::with_capacity(n * d);
        const CHUNK: usize = 256;
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let rows = inputs.data()[start * dim..end * dim].to_vec();
            let chunk = Tensor::new(vec![end - start, dim], rows)?;
            let mut s = self.session();
            let x = s.input(chunk);
            let z = s.embed(x, Mode::Eval)?;
            out.extend_from_slice(s.graph.value(z).data());
        }
        Ok(Tensor::new(vec![n, d], out)?)
    }
}

/// One forward/backward pass over a model: a fresh graph with every
/// parameter bound as a trainable leaf.
pub struct Session<'m> {
    pub graph: Graph,
    bound: Bound,
    model: &'m mut Model,
}

impl Session<'_> {
    pub fn input(&mut self, x: Tensor) -> Var {
        self.graph.constant(x)
    }

    pub fn bound(&self) -> &Bound {
        &self.bound
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// `z = f(x)`. Training mode needs at least two rows.
    pub fn embed(&mut self, x: Var, mode: Mode) -> Result<Var, ModelError> {
        let m = &mut *self.model;
        m.embedding.forward(&mut self.graph, &self.bound, &mut m.stats, x, mode)
    }

    /// Class probabilities for embeddings `z`.
    pub fn classify(
        &mut self,
        z: Var,
        labels: Option<&[usize]>,
        mode: Mode,
    ) -> Result<Var, ModelError> {
        self.model.classifier.forward(&mut self.graph, &self.bound, z, labels, mode)
    }

    /// `p = h(z)`.
    pub fn head(&mut self, z: Var, mode: Mode) -> Result<Var, ModelError> {
        let m = &mut *self.model;
        let head = m
            .head
            .as_ref()
            .ok_or_else(|| ModelError::Contract("model has no SimSiam head attached".into()))?;
        match self.graph.shape(z) {
            [_, c] if *c == m.embedding.embed_dim => {}
            s => return Err(ModelError::Shape(format!("head input {s:?}"))),
        }
        head.forward(&mut self.graph, &self.bound, &mut m.stats, z, mode)
    }

    /// Gradients for every parameter, in store order.
    pub fn param_grads(&self, loss: Var) -> Result<Vec<Tensor>, ModelError> {
        let grads: Gradients = self.graph.backward(loss)?;
        Ok(self.bound.gradients(&grads))
    }
}
