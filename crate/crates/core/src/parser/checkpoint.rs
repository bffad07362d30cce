//! Checkpoint file: a magic line, one line of JSON header, then every
//! tensor's values as little-endian `f64` in header order.

use serde::{Deserialize, Serialize};

use super::config::ParserConfig;
use super::model::ParserParameters;
use super::train::{Trainer, TrainerState, TrainingData};
use super::ParserError;
use crate::autodiff::{Adam, AdamConfig, Params, Tensor};
use crate::treebank::Inventory;
use crate::typology::WalsSchema;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "TYPOPARSE-CHECKPOINT";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TrainerHeader {
    state: TrainerState,
    adam: AdamConfig,
    adam_step: u64,
    has_best: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ParserConfig,
    pos_hash: String,
    rel_hash: String,
    upos: Vec<String>,
    deprel: Vec<String>,
    typology_dim: usize,
    wals_schema: Option<Vec<(String, Vec<String>)>>,
    tensors: Vec<TensorEntry>,
    trainer: Option<TrainerHeader>,
}

/// Optimizer and loop state carried by a resumable checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedTrainer {
    pub state: TrainerState,
    pub adam: Adam,
    pub best: Option<Params>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub parameters: ParserParameters,
    pub trainer: Option<SavedTrainer>,
}

impl Checkpoint {
    pub fn new(parameters: ParserParameters) -> Self {
        Checkpoint {
            parameters,
            trainer: None,
        }
    }
}

impl Trainer {
    /// Current parameters plus everything needed to resume.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            parameters: self.params.clone(),
            trainer: Some(SavedTrainer {
                state: self.state.clone(),
                adam: self.adam.clone(),
                best: self.best.clone(),
            }),
        }
    }

    pub fn from_checkpoint(checkpoint: Checkpoint, data: TrainingData) -> Result<Self, ParserError> {
        let saved = checkpoint
            .trainer
            .ok_or_else(|| ParserError::Checkpoint("no trainer state to resume from".into()))?;
        Trainer::resume(checkpoint.parameters, saved.adam, saved.state, saved.best, data)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint) -> Vec<u8> {
    let p = &checkpoint.parameters;
    let mut tensors: Vec<(&str, &str, &Tensor)> = p.params.iter().map(|(n, t)| ("params", n, t)).collect();
    let trainer = checkpoint.trainer.as_ref().map(|t| {
        for ((name, _), (m, v)) in p.params.iter().zip(t.adam.m.iter().zip(&t.adam.v)) {
            tensors.push(("adam.m", name, m));
            tensors.push(("adam.v", name, v));
        }
        if let Some(best) = &t.best {
            tensors.extend(best.iter().map(|(n, t)| ("best", n, t)));
        }
        TrainerHeader {
            state: t.state.clone(),
            adam: t.adam.config,
            adam_step: t.adam.step,
            has_best: t.best.is_some(),
        }
    });
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: p.config.clone(),
        pos_hash: p.inventory.pos_hash(),
        rel_hash: p.inventory.rel_hash(),
        upos: p.inventory.upos.clone(),
        deprel: p.inventory.deprel.clone(),
        typology_dim: p.typology_dim,
        wals_schema: p.wals_schema.as_ref().map(|s| s.features.clone()),
        tensors: tensors
            .iter()
            .map(|(g, n, t)| TensorEntry {
                group: g.to_string(),
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        trainer,
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for (_, _, t) in &tensors {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> ParserError {
    ParserError::Checkpoint(msg.into())
}

/// Reads a checkpoint. With `expected` given, refuses one whose POS or
/// relation inventory hashes differ.
pub fn load_checkpoint(bytes: &[u8], expected: Option<&Inventory>) -> Result<Checkpoint, ParserError> {
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    if lines.next() != Some(MAGIC.as_bytes()) {
        return Err(bad("not a checkpoint file"));
    }
    let header = lines.next().ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(header).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "format version {} (this build reads {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let inventory = Inventory {
        upos: header.upos,
        deprel: header.deprel,
    };
    if inventory.pos_hash() != header.pos_hash || inventory.rel_hash() != header.rel_hash {
        return Err(bad("stored label inventories do not match their hashes"));
    }
    if let Some(exp) = expected {
        if exp.pos_hash() != header.pos_hash {
            return Err(bad("POS schema hash differs from the supplied schema"));
        }
        if exp.rel_hash() != header.rel_hash {
            return Err(bad("relation schema hash differs from the supplied schema"));
        }
    }
    let mut data = lines.next().unwrap_or(&[]);
    let mut groups: std::collections::BTreeMap<&str, Vec<(String, Tensor)>> = Default::default();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        if data.len() < 8 * n {
            return Err(bad(format!("data truncated in tensor {}", entry.name)));
        }
        let (chunk, rest) = data.split_at(8 * n);
        data = rest;
        let values = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let group = match entry.group.as_str() {
            g @ ("params" | "best" | "adam.m" | "adam.v") => g,
            other => return Err(bad(format!("unknown tensor group {other}"))),
        };
        groups
            .entry(group)
            .or_default()
            .push((entry.name.clone(), Tensor::new(entry.shape.clone(), values)));
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    let to_params = |items: Vec<(String, Tensor)>| {
        let mut p = Params::new();
        for (name, t) in items {
            p.insert(name, t);
        }
        p
    };
    let params = to_params(groups.remove("params").unwrap_or_default());
    let schema = header
        .wals_schema
        .map(WalsSchema::new)
        .transpose()
        .map_err(|e| bad(e.to_string()))?;
    let parameters =
        ParserParameters::from_params(header.config, inventory, header.typology_dim, schema, params)?;
    let trainer = match header.trainer {
        None => None,
        Some(t) => {
            let tensors = |g: &str| -> Vec<Tensor> {
                groups.get(g).map_or_else(Vec::new, |v| v.iter().map(|(_, t)| t.clone()).collect())
            };
            let (m, v) = (tensors("adam.m"), tensors("adam.v"));
            if m.len() != parameters.params.len() || v.len() != parameters.params.len() {
                return Err(bad("optimizer state does not match parameters"));
            }
            let best = if t.has_best {
                Some(to_params(groups.remove("best").unwrap_or_default()))
            } else {
                None
            };
            Some(SavedTrainer {
                state: t.state,
                adam: Adam {
                    config: t.adam,
                    step: t.adam_step,
                    m,
                    v,
                },
                best,
            })
        }
    };
    Ok(Checkpoint {
        parameters,
        trainer,
    })
}
