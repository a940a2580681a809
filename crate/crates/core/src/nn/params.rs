use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Uniform(f64),
}

/// Host-side copy of a tensor, used for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorData {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Ok(Self {
            shape: t.dims().to_vec(),
            values: t.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?,
        })
    }
}

/// Named, ordered storage for trainable parameters and non-trainable buffers.
///
/// Initial values come from a seeded ChaCha stream, so two stores built with
/// the same seed and the same sequence of declarations are identical.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            device: Device::Cpu,
            dtype,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn make(&mut self, shape: &[usize], init: Init) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Const(v) => vec![v; n],
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect()
            }
            Init::Uniform(bound) => (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect(),
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    /// Declares a trainable parameter and returns its tensor handle.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::Config(format!("parameter '{name}' declared twice")));
        }
        let var = self.make(shape, init)?;
        let t = var.as_tensor().clone();
        self.params.insert(name.to_string(), var);
        Ok(t)
    }

    /// Declares a non-trainable buffer (e.g. running statistics).
    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        if self.params.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::Config(format!("buffer '{name}' declared twice")));
        }
        let var = self.make(shape, Init::Const(value))?;
        self.buffers.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    pub fn num_trainable(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Every parameter and buffer, by name.
    pub fn export(&self) -> Result<BTreeMap<String, TensorData>> {
        self.params
            .iter()
            .chain(self.buffers.iter())
            .map(|(k, v)| Ok((k.clone(), TensorData::from_tensor(v.as_tensor())?)))
            .collect()
    }

    /// Overwrites values from an export. Every declared tensor must be present
    /// with a matching shape; nothing is modified if any check fails.
    pub fn import(&self, data: &BTreeMap<String, TensorData>) -> Result<()> {
        let all: Vec<(&String, &Var)> = self.params.iter().chain(self.buffers.iter()).collect();
        for (name, var) in &all {
            let d = data
                .get(*name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
            if d.shape != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}': expected shape {:?}, found {:?}",
                    var.dims(),
                    d.shape
                )));
            }
            if d.values.len() != var.elem_count() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}': expected {} values, found {}",
                    var.elem_count(),
                    d.values.len()
                )));
            }
        }
        if let Some(extra) = data.keys().find(|k| self.get(k).is_none()) {
            return Err(Error::Checkpoint(format!("unexpected tensor '{extra}'")));
        }
        for (name, var) in all {
            let d = &data[name];
            let t = Tensor::from_vec(d.values.clone(), d.shape.as_slice(), &self.device)?
                .to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// SHA-256 over names and values of every tensor.
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, data) in self.export()? {
            h.update(name.as_bytes());
            for v in data.values {
                h.update(v.to_le_bytes());
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}
