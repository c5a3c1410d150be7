//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! "SSA1"
//! u32 parameter count, then per parameter a tensor record
//! u32 running-statistic count, then per statistic a tensor record
//!
//! tensor record: u32 name length, name bytes (UTF-8), u32 rank,
//!                rank × u64 extents, extents-product × f64 values
//! ```

use std::path::Path;

use super::layers::{ClassifierHead, EmbeddingNet, SimSiamHead};
use super::store::TensorStore;
use super::{ClassifierSettings, Model, ModelError};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSA1";

/// Serialized form of a [`Model`]: parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: TensorStore,
    pub stats: TensorStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.params.numel() + self.stats.numel()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for store in [&self.params, &self.stats] {
            out.extend_from_slice(&(store.len() as u32).to_le_bytes());
            for (name, t) in store.iter() {
                out.extend_from_slice(&(name.len() as u32).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                for &e in t.shape() {
                    out.extend_from_slice(&(e as u64).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Format { offset: 0, message: "bad magic, expected SSA1".into() });
        }
        let params = r.store("parameter")?;
        let stats = r.store("running statistic")?;
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { params, stats })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: String) -> ModelError {
        ModelError::Format { offset: self.pos, message }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn store(&mut self, kind: &str) -> Result<TensorStore, ModelError> {
        let count = self.u32(&format!("{kind} count"))?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let name_len = self.u32("name length")? as usize;
            let name_start = self.pos;
            let name = std::str::from_utf8(self.take(name_len, "name")?)
                .map_err(|_| ModelError::Format {
                    offset: name_start,
                    message: "name is not UTF-8".into(),
                })?
                .to_string();
            let rank = self.u32("rank")? as usize;
            if rank > 8 {
                return Err(self.err(format!("implausible rank {rank} for {name}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u64("extent")? as usize);
            }
            let n = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
            let n = match n {
                Some(n) if n.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos) => n,
                _ => return Err(self.err(format!("truncated values for {name}"))),
            };
            let raw = self.take(n * 8, "values")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        Ok(TensorStore::from_entries(entries))
    }
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { params: self.params.clone(), stats: self.stats.clone() }
    }

    /// Rebuilds the architecture from tensor names and shapes.
    pub fn from_checkpoint(
        checkpoint: Checkpoint,
        classifier: ClassifierSettings,
    ) -> Result<Self, ModelError> {
        let Checkpoint { params, stats } = checkpoint;
        let embedding = EmbeddingNet::locate(&params, &stats)?;
        let weight = params
            .find("classifier.weight")
            .ok_or_else(|| ModelError::Checkpoint("missing classifier.weight".into()))?;
        if params.get(weight).shape().first() != Some(&embedding.embed_dim) {
            return Err(ModelError::Checkpoint(format!(
                "classifier weight {:?} does not match embedding width {}",
                params.get(weight).shape(),
                embedding.embed_dim
            )));
        }
        let classifier = ClassifierHead {
            weight,
            mode: classifier.mode,
            scale: classifier.scale,
            margin: classifier.margin,
        };
        let head = SimSiamHead::locate(&params, &stats);
        Ok(Self { params, stats, embedding, classifier, head })
    }
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<(), ModelError> {
    std::fs::write(path, model.to_checkpoint().to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path, classifier: ClassifierSettings) -> Result<Model, ModelError> {
    let bytes = std::fs::read(path)?;
    Model::from_checkpoint(Checkpoint::from_bytes(&bytes)?, classifier)
}
