use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::model::{AsdModel, ModelSpec};
use super::TrainConfig;
use crate::dataio::IdMap;
use crate::error::{Error, Result};
use crate::nn::TensorData;
use crate::util::write_atomic;

const MAGIC: &[u8; 4] = b"STGB";
pub const BUNDLE_VERSION: u32 = 1;

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub lr: f64,
    pub wall_time: f64,
}

/// A self-describing trained model: architecture, training settings, class
/// map, progress and weights. Scoring needs nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub id_map: IdMap,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub params: BTreeMap<String, TensorData>,
    pub optimizer: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: Group,
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Param,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: ModelSpec,
    train: TrainConfig,
    id_map: IdMap,
    epoch: usize,
    history: Vec<EpochRecord>,
    adam_step: Option<u64>,
    tensors: Vec<TensorEntry>,
    payload_bytes: u64,
}

impl ModelBundle {
    /// Snapshot of a live model.
    pub fn capture(
        model: &AsdModel,
        train: TrainConfig,
        id_map: IdMap,
        epoch: usize,
        history: Vec<EpochRecord>,
        optimizer: Option<AdamState>,
    ) -> Result<Self> {
        if id_map.len() != model.spec().classes {
            return Err(Error::Checkpoint(format!(
                "class map has {} entries but the head has {} classes",
                id_map.len(),
                model.spec().classes
            )));
        }
        Ok(Self {
            spec: model.spec().clone(),
            train,
            id_map,
            epoch,
            history,
            params: model.store().export()?,
            optimizer,
        })
    }

    /// Rebuilds the model and loads the stored weights.
    pub fn instantiate(&self) -> Result<AsdModel> {
        if self.id_map.len() != self.spec.classes {
            return Err(Error::Checkpoint(format!(
                "class map has {} entries but the head has {} classes",
                self.id_map.len(),
                self.spec.classes
            )));
        }
        let model = AsdModel::new(self.spec.clone(), self.train.seed)?;
        model.store().import(&self.params)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload: Vec<&TensorData> = Vec::new();
        let mut push = |group, map: &BTreeMap<String, TensorData>| {
            for (name, d) in map {
                tensors.push(TensorEntry {
                    group,
                    name: name.clone(),
                    shape: d.shape.clone(),
                });
            }
        };
        push(Group::Param, &self.params);
        if let Some(opt) = &self.optimizer {
            push(Group::AdamM, &opt.m);
            push(Group::AdamV, &opt.v);
        }
        payload.extend(self.params.values());
        if let Some(opt) = &self.optimizer {
            payload.extend(opt.m.values());
            payload.extend(opt.v.values());
        }
        let payload_bytes: u64 = payload.iter().map(|d| 8 * d.values.len() as u64).sum();
        let header = Header {
            format_version: BUNDLE_VERSION,
            spec: self.spec.clone(),
            train: self.train.clone(),
            id_map: self.id_map.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            adam_step: self.optimizer.as_ref().map(|o| o.step),
            tensors,
            payload_bytes,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload_bytes as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for d in payload {
            for v in &d.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Checkpoint(format!(
                "file is {} bytes, expected at least 16",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a model bundle (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != BUNDLE_VERSION {
            return Err(Error::Checkpoint(format!(
                "bundle format version {version}, this build reads version {BUNDLE_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated header: expected {} bytes, found {}",
                    16u64.saturating_add(header_len as u64),
                    bytes.len()
                ))
            })?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
        if header.format_version != version {
            return Err(Error::Checkpoint("header version disagrees with file version".into()));
        }
        let expected = header_end as u64 + header.payload_bytes;
        if bytes.len() as u64 != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let declared: u64 = header
            .tensors
            .iter()
            .map(|t| 8 * t.shape.iter().product::<usize>() as u64)
            .sum();
        if declared != header.payload_bytes {
            return Err(Error::Checkpoint(format!(
                "tensor table describes {declared} bytes, header declares {}",
                header.payload_bytes
            )));
        }
        let mut params = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        let mut offset = header_end;
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let values = bytes[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += 8 * n;
            let data = TensorData {
                shape: entry.shape,
                values,
            };
            let target = match entry.group {
                Group::Param => &mut params,
                Group::AdamM => &mut m,
                Group::AdamV => &mut v,
            };
            target.insert(entry.name, data);
        }
        let optimizer = header.adam_step.map(|step| AdamState { step, m, v });
        if header.id_map.len() != header.spec.classes {
            return Err(Error::Checkpoint(format!(
                "class map has {} entries but the head has {} classes",
                header.id_map.len(),
                header.spec.classes
            )));
        }
        Ok(Self {
            spec: header.spec,
            train: header.train,
            id_map: header.id_map,
            epoch: header.epoch,
            history: header.history,
            params,
            optimizer,
        })
    }
}

/// Writes the bundle atomically.
pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &bundle.to_bytes()?)
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
