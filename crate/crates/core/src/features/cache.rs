use std::path::{Path, PathBuf};

use ndarray::Array3;
use sha2::{Digest, Sha256};

use super::{FeatureKind, FeatureTensor, SpectralConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"STFC";
const VERSION: u32 = 1;

/// One file per (clip, feature kind). A file whose stored config hash differs
/// from the current configuration is treated as a miss and rewritten.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

fn kind_code(kind: FeatureKind) -> u8 {
    match kind {
        FeatureKind::Sgram => 0,
        FeatureKind::Tgram => 1,
        FeatureKind::Spec => 2,
        FeatureKind::STgram => 3,
    }
}

fn kind_from_code(code: u8) -> Option<FeatureKind> {
    Some(match code {
        0 => FeatureKind::Sgram,
        1 => FeatureKind::Tgram,
        2 => FeatureKind::Spec,
        3 => FeatureKind::STgram,
        _ => return None,
    })
}

pub fn config_hash(cfg: &SpectralConfig, kind: FeatureKind, clip_len: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update([kind_code(kind)]);
    h.update((clip_len as u64).to_le_bytes());
    h.finalize().into()
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, source: &str, kind: FeatureKind) -> PathBuf {
        let digest = Sha256::digest(source.as_bytes());
        let name: String = digest[..10].iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{name}_{}.feat", kind_code(kind)))
    }

    /// Returns the cached tensor, computing and storing it on a miss.
    pub fn get_or_compute<F>(
        &self,
        source: &str,
        cfg: &SpectralConfig,
        kind: FeatureKind,
        clip_len: usize,
        compute: F,
    ) -> Result<FeatureTensor>
    where
        F: FnOnce() -> Result<FeatureTensor>,
    {
        let path = self.entry_path(source, kind);
        let hash = config_hash(cfg, kind, clip_len);
        if let Some(t) = self.read(&path, &hash)? {
            return Ok(t);
        }
        let tensor = compute()?;
        self.write(&path, &hash, &tensor)?;
        Ok(tensor)
    }

    fn read(&self, path: &Path, hash: &[u8; 32]) -> Result<Option<FeatureTensor>> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let header = 4 + 4 + 32 + 1 + 24;
        if bytes.len() < header || &bytes[..4] != MAGIC {
            return Ok(None);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION || &bytes[8..40] != hash {
            return Ok(None);
        }
        let Some(kind) = kind_from_code(bytes[40]) else {
            return Ok(None);
        };
        let dim = |i: usize| u64::from_le_bytes(bytes[41 + 8 * i..49 + 8 * i].try_into().unwrap()) as usize;
        let shape = (dim(0), dim(1), dim(2));
        let n = shape.0 * shape.1 * shape.2;
        if bytes.len() != header + 4 * n {
            return Ok(None);
        }
        let data: Vec<f32> = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = Array3::from_shape_vec(shape, data).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Some(FeatureTensor { kind, data }))
    }

    fn write(&self, path: &Path, hash: &[u8; 32], t: &FeatureTensor) -> Result<()> {
        let (c, r, f) = t.shape();
        let mut out = Vec::with_capacity(65 + 4 * c * r * f);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(hash);
        out.push(kind_code(t.kind));
        for d in [c, r, f] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        crate::util::write_atomic(path, &out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn hit_after_miss_and_invalidated_on_config_change() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path()).unwrap();
        let cfg = SpectralConfig::default();
        let calls = Cell::new(0);
        let make = || {
            calls.set(calls.get() + 1);
            FeatureTensor::new(FeatureKind::Sgram, Array3::from_elem((1, 2, 3), 1.5))
        };
        let a = cache.get_or_compute("clip.wav", &cfg, FeatureKind::Sgram, 100, make).unwrap();
        let b = cache.get_or_compute("clip.wav", &cfg, FeatureKind::Sgram, 100, make).unwrap();
        assert_eq!(a, b);
        assert_eq!(calls.get(), 1);
        let other = SpectralConfig {
            mel_bins: 64,
            ..cfg
        };
        cache.get_or_compute("clip.wav", &other, FeatureKind::Sgram, 100, make).unwrap();
        assert_eq!(calls.get(), 2);
    }
}
