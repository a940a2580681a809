use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::dataio::{load_clip, Condition, DatasetManifest, LoadOptions};
use crate::error::{Error, Result};
use crate::trainer::{AsdModel, ModelBundle};

/// What gets exported per clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// The classifier embedding of the trained model.
    Model,
    /// Frame-averaged log-Mel spectrogram.
    LogMel,
    /// Frame-averaged output of the trained TgramNet.
    Tgram,
}

impl std::str::FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "model" => Ok(Self::Model),
            "logmel" | "sgram" => Ok(Self::LogMel),
            "tgram" => Ok(Self::Tgram),
            _ => Err(Error::Config(format!("unknown embedding source '{s}' (model, logmel, tgram)"))),
        }
    }
}

/// Row-per-clip vectors with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub vectors: Vec<Vec<f64>>,
    pub machine_types: Vec<String>,
    pub machine_ids: Vec<String>,
    pub conditions: Vec<Condition>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// `e0..e{D-1}, machine_type, machine_id, condition`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("e{i}")).collect();
        header.extend(["machine_type", "machine_id", "condition"].map(String::from));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.vectors[i].iter().map(|v| format!("{v:?}")).collect();
            row.push(self.machine_types[i].clone());
            row.push(self.machine_ids[i].clone());
            row.push(self.conditions[i].as_str().to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let width = reader.headers()?.len();
    if width < 4 {
        return Err(Error::InvalidInput(format!("{}: too few columns for an embedding table", path.display())));
    }
    let mut t = EmbeddingTable {
        vectors: Vec::new(),
        machine_types: Vec::new(),
        machine_ids: Vec::new(),
        conditions: Vec::new(),
    };
    for row in reader.records() {
        let row = row?;
        let d = width - 3;
        let v = (0..d)
            .map(|i| {
                row[i]
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("{}: bad value '{}': {e}", path.display(), &row[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        t.vectors.push(v);
        t.machine_types.push(row[d].to_string());
        t.machine_ids.push(row[d + 1].to_string());
        t.conditions.push(match &row[d + 2] {
            "normal" => Condition::Normal,
            "anomaly" => Condition::Anomaly,
            _ => Condition::Unknown,
        });
    }
    Ok(t)
}

fn tgram_mean(model: &AsdModel, wave: &[f32]) -> Result<Vec<f64>> {
    let net = model
        .tgram()
        .ok_or_else(|| Error::Config("the bundle's model has no TgramNet branch".into()))?;
    let x = Tensor::from_slice(wave, (1, wave.len()), &Device::Cpu)?.to_dtype(model.dtype())?;
    let out = net.forward(&x)?.mean(2)?.squeeze(0)?.to_dtype(DType::F64)?;
    Ok(out.to_vec1()?)
}

/// Computes one vector per manifest clip, `batch_size` clips at a time for
/// model embeddings.
pub fn export_embeddings(
    bundle: &ModelBundle,
    manifest: &DatasetManifest,
    load: &LoadOptions,
    source: EmbeddingSource,
    batch_size: usize,
) -> Result<EmbeddingTable> {
    if manifest.is_empty() {
        return Err(Error::InvalidInput("no clips to embed".into()));
    }
    let model = bundle.instantiate()?;
    let mut vectors = Vec::with_capacity(manifest.len());
    for chunk in manifest.entries.chunks(batch_size.max(1)) {
        let waves = chunk
            .iter()
            .map(|e| Ok(load_clip(&e.path, load)?.samples))
            .collect::<Result<Vec<_>>>()?;
        match source {
            EmbeddingSource::Model => {
                let prepared = waves.into_iter().map(|w| model.prepare(w)).collect::<Result<Vec<_>>>()?;
                let refs: Vec<_> = prepared.iter().collect();
                let emb: Vec<Vec<f64>> = model.embed(&refs, false)?.to_dtype(DType::F64)?.to_vec2()?;
                vectors.extend(emb);
            }
            EmbeddingSource::LogMel => {
                let front = crate::features::SpectralFrontEnd::new(bundle.spec.spectral.clone())?;
                for w in &waves {
                    let f = front.log_mel(w)?;
                    let mean = f.data.index_axis(Axis(0), 0).mean_axis(Axis(1)).expect("frames are non-empty");
                    vectors.push(mean.iter().map(|&v| v as f64).collect());
                }
            }
            EmbeddingSource::Tgram => {
                for w in &waves {
                    vectors.push(tgram_mean(&model, w)?);
                }
            }
        }
    }
    Ok(EmbeddingTable {
        vectors,
        machine_types: manifest.entries.iter().map(|e| e.label.machine_type.clone()).collect(),
        machine_ids: manifest.entries.iter().map(|e| e.label.machine_id.clone()).collect(),
        conditions: manifest.entries.iter().map(|e| e.label.condition).collect(),
    })
}
