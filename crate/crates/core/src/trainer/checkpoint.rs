//! Versioned JSON checkpoints. Tensors are stored as base64 of their
//! little-endian f64 bytes, so a round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::Model;
use crate::ndtensor::Tensor;
use crate::protobank::PrototypeBank;
use crate::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

/// A trained model plus the bookkeeping needed to describe where it came
/// from.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// `chacha8:<seed hex>:<stream>:<word position>` of the training RNG.
    pub rng: String,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn capture(model: &Model, rng: &ChaCha8Rng, epoch: usize) -> Self {
        Self {
            model: model.clone(),
            rng: rng_state(rng),
            epoch,
        }
    }
}

pub fn rng_state(rng: &ChaCha8Rng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!("chacha8:{seed}:{}:{}", rng.get_stream(), rng.get_word_pos())
}

#[derive(Serialize, Deserialize)]
struct EncodedTensor {
    shape: [usize; 2],
    data_b64: String,
}

impl EncodedTensor {
    fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape: [t.rows(), t.cols()],
            data_b64: STANDARD.encode(bytes),
        }
    }

    fn decode(&self, name: &str) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data_b64)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        let [rows, cols] = self.shape;
        if bytes.len() != rows * cols * 8 {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has {} bytes for shape {rows}x{cols}",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(rows, cols, data).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredConfig {
    #[serde(flatten)]
    train: TrainConfig,
    in_dim: usize,
    num_classes: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u64,
    config: StoredConfig,
    tensors: BTreeMap<String, EncodedTensor>,
    bank: Option<EncodedTensor>,
    rng: String,
    epoch: usize,
}

pub fn to_json(ckpt: &Checkpoint) -> Result<String> {
    let m = &ckpt.model;
    let doc = Document {
        version: FORMAT_VERSION,
        config: StoredConfig {
            train: m.config.clone(),
            in_dim: m.in_dim,
            num_classes: m.num_classes,
        },
        tensors: m
            .store
            .iter()
            .map(|(name, t)| (name.to_string(), EncodedTensor::encode(t)))
            .collect(),
        bank: m.bank.as_ref().map(|b| EncodedTensor::encode(&b.stacked())),
        rng: ckpt.rng.clone(),
        epoch: ckpt.epoch,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    let probe: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
    let version = probe
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Checkpoint("missing format version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let doc: Document =
        serde_json::from_value(probe).map_err(|e| Error::Checkpoint(e.to_string()))?;

    // the layout is a function of the config; the RNG only fills values
    // that are overwritten below
    let cfg = &doc.config;
    let mut model = Model::new(&cfg.train, cfg.in_dim, cfg.num_classes, &mut ChaCha8Rng::seed_from_u64(0))?;
    if doc.tensors.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            model.store.len(),
            doc.tensors.len()
        )));
    }
    for id in model.store.ids().collect::<Vec<_>>() {
        let name = model.store.name(id).to_string();
        let enc = doc
            .tensors
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        model
            .store
            .set(id, enc.decode(&name)?)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
    }
    model.bank = match (&model.bank, &doc.bank) {
        (Some(_), Some(enc)) => Some(PrototypeBank::from_stacked(&enc.decode("bank")?, cfg.num_classes)?),
        (None, None) => None,
        (Some(_), None) => return Err(Error::Checkpoint("prototype bank missing".into())),
        (None, Some(_)) => return Err(Error::Checkpoint("unexpected prototype bank".into())),
    };
    if let Some(bank) = &model.bank {
        let expected = (cfg.train.prototypes_per_class(), cfg.train.embed_dim());
        if (bank.per_class(), bank.dim()) != expected {
            return Err(Error::Checkpoint(format!(
                "bank is {} x {} per class, config implies {:?}",
                bank.per_class(),
                bank.dim(),
                expected
            )));
        }
    }
    Ok(Checkpoint {
        model,
        rng: doc.rng,
        epoch: doc.epoch,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let text = to_json(ckpt)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
