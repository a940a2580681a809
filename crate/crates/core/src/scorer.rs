//! Anomaly scores: the negative log probability a trained model assigns to a
//! clip's own machine ID.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Condition;
use crate::error::{Error, Result};

/// Largest score, reached when the own-class probability falls to the floor.
pub const MAX_SCORE: f64 = 69.077_552_789_821_37; // -ln(1e-30)
pub const PROBABILITY_FLOOR: f32 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub path: String,
    pub machine_type: String,
    pub machine_id: String,
    pub condition: Condition,
    /// Higher means more anomalous.
    pub score: f64,
}

/// `-ln softmax(logits)[class]` in 32-bit, with the probability floored at
/// [`PROBABILITY_FLOOR`].
///
/// Evaluated as `ln sum_j exp(l_j - l_class)` so that confident
/// predictions keep distinct small scores instead of rounding to zero.
pub fn score_from_logits(logits: &[f32], class: usize) -> Result<f64> {
    if class >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "class {class} out of range for {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidInput("non-finite logits".into()));
    }
    let own = logits[class];
    let top = logits.iter().map(|l| l - own).fold(0.0f32, f32::max);
    let score = if top > 0.0 {
        top + logits.iter().map(|l| (l - own - top).exp()).sum::<f32>().ln()
    } else {
        let rest: f32 = logits
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != class)
            .map(|(_, l)| (l - own).exp())
            .sum();
        rest.ln_1p()
    };
    Ok((score as f64).clamp(0.0, MAX_SCORE))
}

pub fn write_scores(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "machine_type", "machine_id", "condition", "score"])?;
    for r in records {
        w.write_record([
            r.path.as_str(),
            &r.machine_type,
            &r.machine_id,
            r.condition.as_str(),
            &format!("{:?}", r.score),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let headers = reader.headers()?.clone();
    let want = ["path", "machine_type", "machine_id", "condition", "score"];
    if headers.iter().ne(want) {
        return Err(Error::InvalidInput(format!(
            "{}: expected columns {want:?}, found {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<ScoreRecord>().enumerate() {
        let r = row?;
        if !r.score.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{}: non-finite score on data row {}",
                path.display(),
                line + 1
            )));
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(feature = "nn")]
pub use model::*;

#[cfg(feature = "nn")]
mod model {
    use candle_core::DType;

    use super::{score_from_logits, ScoreRecord};
    use crate::dataio::{load_clip, AudioClip, ClipLabel, Condition, DatasetManifest, LoadOptions, Reject, Split};
    use crate::error::{Error, Result};
    use crate::trainer::{AsdModel, ModelBundle, PreparedClip};

    /// A model rebuilt from a bundle, ready for read-only scoring.
    pub struct Scorer {
        model: AsdModel,
        id_map: crate::dataio::IdMap,
    }

    impl Scorer {
        pub fn new(bundle: &ModelBundle) -> Result<Self> {
            Ok(Self {
                model: bundle.instantiate()?,
                id_map: bundle.id_map.clone(),
            })
        }

        pub fn model(&self) -> &AsdModel {
            &self.model
        }

        /// The bundle's class index for a label; labels are matched by
        /// machine, never by the index they carry.
        pub fn class_of(&self, label: &ClipLabel) -> Result<usize> {
            self.id_map.get(&label.key()).ok_or_else(|| Error::UnknownMachine {
                machine_type: label.machine_type.clone(),
                machine_id: label.machine_id.clone(),
            })
        }

        /// Inference logits as 32-bit rows.
        pub fn logits(&self, clips: &[&PreparedClip]) -> Result<Vec<Vec<f32>>> {
            Ok(self
                .model
                .logits(clips, None, false)?
                .to_dtype(DType::F32)?
                .to_vec2()?)
        }

        pub fn score_prepared(&self, clips: &[&PreparedClip], classes: &[usize]) -> Result<Vec<f64>> {
            if clips.len() != classes.len() {
                return Err(Error::InvalidInput(format!(
                    "{} clips with {} classes",
                    clips.len(),
                    classes.len()
                )));
            }
            if clips.is_empty() {
                return Ok(Vec::new());
            }
            self.logits(clips)?
                .iter()
                .zip(classes)
                .map(|(row, &c)| score_from_logits(row, c))
                .collect()
        }

        pub fn score_clip(&self, clip: &AudioClip, label: &ClipLabel) -> Result<f64> {
            let class = self.class_of(label)?;
            let prepared = self.model.prepare(clip.samples.clone())?;
            Ok(self.score_prepared(&[&prepared], &[class])?[0])
        }
    }

    /// `-ln p(own class | clip)` under the bundle's model.
    pub fn anomaly_score(bundle: &ModelBundle, clip: &AudioClip, label: &ClipLabel) -> Result<f64> {
        Scorer::new(bundle)?.score_clip(clip, label)
    }

    #[derive(Debug, Clone, Default, PartialEq)]
    pub struct ScoreOutput {
        /// One record per successfully scored clip, in manifest order.
        pub records: Vec<ScoreRecord>,
        pub rejects: Vec<Reject>,
        /// Set when any clip of the manifest is missing from `records`.
        pub incomplete: bool,
    }

    /// Scores every clip of a test manifest, `batch_size` clips per forward pass.
    pub fn score_split(
        bundle: &ModelBundle,
        manifest: &DatasetManifest,
        load: &LoadOptions,
        batch_size: usize,
    ) -> Result<ScoreOutput> {
        if manifest.split != Split::Test {
            return Err(Error::InvalidInput("scoring needs a test-split manifest".into()));
        }
        let scorer = Scorer::new(bundle)?;
        score_entries(&scorer, manifest, batch_size, |path| Ok(load_clip(path, load)?.samples))
    }

    /// As [`score_split`] with a caller-supplied loader and a prebuilt scorer.
    pub fn score_entries<F>(
        scorer: &Scorer,
        manifest: &DatasetManifest,
        batch_size: usize,
        mut load: F,
    ) -> Result<ScoreOutput>
    where
        F: FnMut(&std::path::Path) -> Result<Vec<f32>>,
    {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut out = ScoreOutput {
            rejects: manifest.rejects.clone(),
            incomplete: !manifest.rejects.is_empty(),
            ..Default::default()
        };
        let mut pending: Vec<(usize, PreparedClip, usize)> = Vec::new();
        let flush = |pending: &mut Vec<(usize, PreparedClip, usize)>, out: &mut ScoreOutput| -> Result<()> {
            if pending.is_empty() {
                return Ok(());
            }
            let clips: Vec<&PreparedClip> = pending.iter().map(|(_, c, _)| c).collect();
            let classes: Vec<usize> = pending.iter().map(|(_, _, k)| *k).collect();
            let scores = scorer.score_prepared(&clips, &classes)?;
            for ((i, _, _), score) in pending.iter().zip(scores) {
                let e = &manifest.entries[*i];
                out.records.push(ScoreRecord {
                    path: e.path.display().to_string(),
                    machine_type: e.label.machine_type.clone(),
                    machine_id: e.label.machine_id.clone(),
                    condition: e.label.condition,
                    score,
                });
            }
            pending.clear();
            Ok(())
        };
        for (i, e) in manifest.entries.iter().enumerate() {
            let prepared = (|| {
                if e.label.condition == Condition::Unknown {
                    return Err(Error::InvalidInput("clip has no ground-truth condition".into()));
                }
                let class = scorer.class_of(&e.label)?;
                Ok((scorer.model().prepare(load(&e.path)?)?, class))
            })();
            match prepared {
                Ok((clip, class)) => {
                    pending.push((i, clip, class));
                    if pending.len() == batch_size {
                        flush(&mut pending, &mut out)?;
                    }
                }
                Err(err) => {
                    log::warn!("skipping {}: {err}", e.path.display());
                    out.rejects.push(Reject {
                        path: e.path.clone(),
                        reason: err.to_string(),
                    });
                    out.incomplete = true;
                }
            }
        }
        flush(&mut pending, &mut out)?;
        Ok(out)
    }
}
