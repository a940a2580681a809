//! Dataset discovery and WAV loading for DCASE-2020-Task-2-style trees.
//!
//! A dataset root holds one directory per machine type, each with `train/`
//! and `test/` folders of WAV files named like `normal_id_01_00000042.wav`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Normal,
    Anomaly,
    Unknown,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Normal => "normal",
            Condition::Anomaly => "anomaly",
            Condition::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Condition::Normal),
            "anomaly" => Ok(Condition::Anomaly),
            "unknown" => Ok(Condition::Unknown),
            other => Err(Error::InvalidInput(format!("unknown condition '{other}'"))),
        }
    }
}

/// An individual machine: the self-supervised class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MachineKey {
    pub machine_type: String,
    pub machine_id: String,
}

impl MachineKey {
    pub fn new(machine_type: impl Into<String>, machine_id: impl Into<String>) -> Self {
        Self {
            machine_type: machine_type.into(),
            machine_id: machine_id.into(),
        }
    }
}

impl fmt::Display for MachineKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/id_{}", self.machine_type, self.machine_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipLabel {
    pub machine_type: String,
    pub machine_id: String,
    pub condition: Condition,
    pub class_index: usize,
}

impl ClipLabel {
    pub fn key(&self) -> MachineKey {
        MachineKey::new(&self.machine_type, &self.machine_id)
    }
}

/// Dense bijection between machines and class indices `0..len`.
///
/// Indices follow the lexicographic order of (machine type, machine id).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<IdMapEntry>", try_from = "Vec<IdMapEntry>")]
pub struct IdMap {
    keys: Vec<MachineKey>,
    index: BTreeMap<MachineKey, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdMapEntry {
    pub machine_type: String,
    pub machine_id: String,
    pub class_index: usize,
}

impl IdMap {
    pub fn from_keys<I: IntoIterator<Item = MachineKey>>(keys: I) -> Self {
        let set: BTreeSet<MachineKey> = keys.into_iter().collect();
        let keys: Vec<MachineKey> = set.into_iter().collect();
        let index = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        Self { keys, index }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, key: &MachineKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, class_index: usize) -> Option<&MachineKey> {
        self.keys.get(class_index)
    }

    pub fn keys(&self) -> &[MachineKey] {
        &self.keys
    }
}

impl From<IdMap> for Vec<IdMapEntry> {
    fn from(map: IdMap) -> Self {
        map.keys
            .into_iter()
            .enumerate()
            .map(|(class_index, k)| IdMapEntry {
                machine_type: k.machine_type,
                machine_id: k.machine_id,
                class_index,
            })
            .collect()
    }
}

impl TryFrom<Vec<IdMapEntry>> for IdMap {
    type Error = String;

    fn try_from(entries: Vec<IdMapEntry>) -> std::result::Result<Self, String> {
        let n = entries.len();
        let map = IdMap::from_keys(
            entries
                .iter()
                .map(|e| MachineKey::new(&e.machine_type, &e.machine_id)),
        );
        if map.len() != n {
            return Err("duplicate machine in id map".into());
        }
        for e in &entries {
            let key = MachineKey::new(&e.machine_type, &e.machine_id);
            if map.get(&key) != Some(e.class_index) {
                return Err(format!(
                    "id map entry {key} has class index {} but lexicographic order gives {:?}",
                    e.class_index,
                    map.get(&key)
                ));
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: ClipLabel,
}

/// A file that could not be turned into a manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    pub id_map: IdMap,
    #[serde(default)]
    pub rejects: Vec<Reject>,
}

/// Parsed pieces of a DCASE file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedName {
    pub condition: Condition,
    pub machine_id: String,
}

/// Parses `normal_id_01_00000042.wav`-style names.
///
/// The condition is the token before the first underscore; the machine id is
/// the token after `id_`. Names that start directly with `id_` (evaluation
/// sets) carry an unknown condition.
pub fn parse_file_name(name: &str) -> Option<ParsedName> {
    let stem = name.strip_suffix(".wav").or_else(|| name.strip_suffix(".WAV"))?;
    let (head, _) = stem.split_once('_')?;
    let condition = match head {
        "normal" => Condition::Normal,
        "anomaly" => Condition::Anomaly,
        "id" => Condition::Unknown,
        _ => return None,
    };
    let pos = if condition == Condition::Unknown {
        0
    } else {
        stem.find("_id_")? + 1
    };
    let rest = &stem[pos + 3..];
    let machine_id = rest.split('_').next().filter(|s| !s.is_empty())?;
    Some(ParsedName {
        condition,
        machine_id: machine_id.to_string(),
    })
}

/// Scans one dataset root for the given split.
pub fn scan_dataset(root: impl AsRef<Path>, split: Split) -> Result<DatasetManifest> {
    scan_datasets(&[root.as_ref().to_path_buf()], split)
}

/// Scans several roots (e.g. development + additional sets) into one manifest.
pub fn scan_datasets(roots: &[PathBuf], split: Split) -> Result<DatasetManifest> {
    if roots.is_empty() {
        return Err(Error::Config("no dataset root given".into()));
    }
    let mut found: Vec<(PathBuf, MachineKey, Condition)> = Vec::new();
    let mut rejects = Vec::new();
    for root in roots {
        if !root.is_dir() {
            return Err(Error::Config(format!(
                "dataset root {} does not exist or is not a directory",
                root.display()
            )));
        }
        for type_dir in sorted_dir(root)? {
            if !type_dir.is_dir() {
                continue;
            }
            let split_dir = type_dir.join(split.dir_name());
            if !split_dir.is_dir() {
                continue;
            }
            let machine_type = file_name(&type_dir);
            for file in sorted_dir(&split_dir)? {
                if !file.is_file() {
                    continue;
                }
                let name = file_name(&file);
                if !name.to_ascii_lowercase().ends_with(".wav") {
                    continue;
                }
                match parse_file_name(&name) {
                    Some(parsed) if split == Split::Train && parsed.condition != Condition::Normal => {
                        rejects.push(Reject {
                            path: file.clone(),
                            reason: format!(
                                "training clips must be normal, found condition '{}'",
                                parsed.condition
                            ),
                        });
                    }
                    Some(parsed) => found.push((
                        file.clone(),
                        MachineKey::new(&machine_type, parsed.machine_id),
                        parsed.condition,
                    )),
                    None => rejects.push(Reject {
                        path: file.clone(),
                        reason: "file name does not follow <condition>_id_<id>_<n>.wav".into(),
                    }),
                }
            }
        }
    }
    let id_map = IdMap::from_keys(found.iter().map(|(_, k, _)| k.clone()));
    let mut entries: Vec<ManifestEntry> = found
        .into_iter()
        .map(|(path, key, condition)| {
            let class_index = id_map.get(&key).expect("key inserted above");
            ManifestEntry {
                path,
                label: ClipLabel {
                    machine_type: key.machine_type,
                    machine_id: key.machine_id,
                    condition,
                    class_index,
                },
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        (a.label.class_index, file_name(&a.path), &a.path).cmp(&(
            b.label.class_index,
            file_name(&b.path),
            &b.path,
        ))
    });
    rejects.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetManifest {
        split,
        entries,
        id_map,
        rejects,
    })
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    path: String,
    machine_type: String,
    machine_id: String,
    condition: Condition,
    class_index: usize,
}

impl DatasetManifest {
    pub fn class_count(&self) -> usize {
        self.id_map.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Re-labels every entry against another class map (usually the
    /// training map). Entries whose machine is absent move to `rejects`.
    pub fn reindex(mut self, id_map: &IdMap) -> Self {
        let mut kept = Vec::with_capacity(self.entries.len());
        for mut entry in self.entries.drain(..) {
            match id_map.get(&entry.label.key()) {
                Some(idx) => {
                    entry.label.class_index = idx;
                    kept.push(entry);
                }
                None => self.rejects.push(Reject {
                    reason: format!("machine {} is not in the training class map", entry.label.key()),
                    path: entry.path,
                }),
            }
        }
        kept.sort_by(|a, b| {
            (a.label.class_index, file_name(&a.path), &a.path).cmp(&(
                b.label.class_index,
                file_name(&b.path),
                &b.path,
            ))
        });
        self.entries = kept;
        self.id_map = id_map.clone();
        self
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(ManifestRow {
                path: e.path.to_string_lossy().into_owned(),
                machine_type: e.label.machine_type.clone(),
                machine_id: e.label.machine_id.clone(),
                condition: e.label.condition,
                class_index: e.label.class_index,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let mut entries = Vec::new();
        for row in r.deserialize() {
            let row: ManifestRow = row?;
            entries.push(ManifestEntry {
                path: PathBuf::from(row.path),
                label: ClipLabel {
                    machine_type: row.machine_type,
                    machine_id: row.machine_id,
                    condition: row.condition,
                    class_index: row.class_index,
                },
            });
        }
        let id_map = IdMap::from_keys(entries.iter().map(|e| e.label.key()));
        for e in &entries {
            if id_map.get(&e.label.key()) != Some(e.label.class_index) {
                return Err(Error::InvalidInput(format!(
                    "{}: class index {} is inconsistent with the machine ordering",
                    e.path.display(),
                    e.label.class_index
                )));
            }
        }
        Ok(Self {
            split,
            entries,
            id_map,
            rejects: Vec::new(),
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A mono waveform with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_path: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source_path: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("audio clip has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_path: source_path.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// How clips shorter than the target length are extended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    /// Append zeros at the end.
    #[default]
    Zeros,
    /// Tile the clip from its start.
    Repeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadOptions {
    pub sample_rate: u32,
    pub target_length: usize,
    pub pad_mode: PadMode,
    /// Linearly resample files recorded at another rate instead of failing.
    pub allow_resample: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            target_length: 160_000,
            pad_mode: PadMode::Zeros,
            allow_resample: false,
        }
    }
}

/// Reads a PCM or float WAV into a mono clip of exactly `target_length` samples.
pub fn load_clip(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<AudioClip> {
    let path = path.as_ref();
    if opts.target_length == 0 {
        return Err(Error::Config("target_length must be positive".into()));
    }
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let divisor = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / divisor))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
    };
    let mut samples = if channels > 1 {
        log::warn!(
            "{}: {} channels, downmixing by averaging",
            path.display(),
            channels
        );
        interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    } else {
        interleaved
    };
    if spec.sample_rate != opts.sample_rate {
        if !opts.allow_resample {
            return Err(Error::InvalidInput(format!(
                "{}: sample rate {} Hz differs from the expected {} Hz",
                path.display(),
                spec.sample_rate,
                opts.sample_rate
            )));
        }
        samples = resample_linear(&samples, spec.sample_rate, opts.sample_rate);
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("{}: empty audio", path.display())));
    }
    fit_length(&mut samples, opts.target_length, opts.pad_mode);
    AudioClip::new(samples, opts.sample_rate, path.to_string_lossy())
}

/// Truncates to the first `target` samples or pads at the end.
pub fn fit_length(samples: &mut Vec<f32>, target: usize, pad: PadMode) {
    if samples.len() >= target {
        samples.truncate(target);
        return;
    }
    match pad {
        PadMode::Zeros => samples.resize(target, 0.0),
        PadMode::Repeat => {
            let n = samples.len();
            if n == 0 {
                samples.resize(target, 0.0);
                return;
            }
            samples.reserve(target - n);
            for i in n..target {
                let v = samples[i % n];
                samples.push(v);
            }
        }
    }
}

fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if samples.is_empty() || from == to {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u64 * to as u64) / from as u64).max(1) as usize;
    let ratio = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = pos.floor() as usize;
            let frac = (pos - i0 as f64) as f32;
            let a = samples[i0.min(samples.len() - 1)];
            let b = samples[(i0 + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

/// Writes a 16-bit PCM mono WAV. Samples are clipped to `[-1, 1]`.
pub fn write_wav_i16(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch_wav(path: &Path, n: usize) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_wav_i16(path, &vec![0.0; n], 16_000).unwrap();
    }

    #[test]
    fn parses_dcase_names() {
        assert_eq!(
            parse_file_name("normal_id_01_00000042.wav"),
            Some(ParsedName {
                condition: Condition::Normal,
                machine_id: "01".into()
            })
        );
        assert_eq!(
            parse_file_name("anomaly_id_02_00000005.wav").unwrap().condition,
            Condition::Anomaly
        );
        assert_eq!(
            parse_file_name("id_05_00000001.wav").unwrap(),
            ParsedName {
                condition: Condition::Unknown,
                machine_id: "05".into()
            }
        );
        assert_eq!(parse_file_name("broken.wav"), None);
        assert_eq!(parse_file_name("normal_00000001.wav"), None);
        assert_eq!(parse_file_name("normal_id_01_0.txt"), None);
    }

    #[test]
    fn single_class_tree() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            touch_wav(
                &dir.path().join(format!("fan/train/normal_id_00_{i:08}.wav")),
                16,
            );
        }
        let m = scan_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.class_count(), 1);
        assert!(m.rejects.is_empty());
    }

    #[test]
    fn anomaly_shares_class_with_normal_of_same_id() {
        let dir = tempfile::tempdir().unwrap();
        touch_wav(&dir.path().join("pump/test/normal_id_02_00000001.wav"), 16);
        touch_wav(&dir.path().join("pump/test/anomaly_id_02_00000005.wav"), 16);
        touch_wav(&dir.path().join("pump/test/normal_id_04_00000001.wav"), 16);
        let m = scan_dataset(dir.path(), Split::Test).unwrap();
        let anomaly = m
            .entries
            .iter()
            .find(|e| e.label.condition == Condition::Anomaly)
            .unwrap();
        let normal = m
            .entries
            .iter()
            .find(|e| e.label.condition == Condition::Normal && e.label.machine_id == "02")
            .unwrap();
        assert_eq!(anomaly.label.class_index, normal.label.class_index);
        assert_eq!(m.class_count(), 2);
    }

    #[test]
    fn unparsable_and_misplaced_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch_wav(&dir.path().join("fan/train/normal_id_00_00000001.wav"), 16);
        touch_wav(&dir.path().join("fan/train/weird_name.wav"), 16);
        touch_wav(&dir.path().join("fan/train/anomaly_id_00_00000001.wav"), 16);
        let m = scan_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.rejects.len(), 2);
    }

    #[test]
    fn missing_root_is_a_config_error() {
        let err = scan_dataset("/definitely/not/here", Split::Train).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn full_dcase_layout_has_41_classes() {
        let dir = tempfile::tempdir().unwrap();
        let layout: [(&str, &[&str]); 6] = [
            ("fan", &["00", "01", "02", "03", "04", "05", "06"]),
            ("pump", &["00", "01", "02", "03", "04", "05", "06"]),
            ("slider", &["00", "01", "02", "03", "04", "05", "06"]),
            ("valve", &["00", "01", "02", "03", "04", "05", "06"]),
            ("ToyCar", &["01", "02", "03", "04", "05", "06", "07"]),
            ("ToyConveyor", &["01", "02", "03", "04", "05", "06"]),
        ];
        for (ty, ids) in layout {
            for id in ids {
                touch_wav(
                    &dir.path().join(format!("{ty}/train/normal_id_{id}_00000000.wav")),
                    4,
                );
            }
        }
        let m = scan_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(m.class_count(), 41);
        let indices: Vec<usize> = (0..41).collect();
        let mut seen: Vec<usize> = m.entries.iter().map(|e| e.label.class_index).collect();
        seen.dedup();
        assert_eq!(seen, indices);
    }

    #[test]
    fn reindex_reports_unknown_machines() {
        let dir = tempfile::tempdir().unwrap();
        touch_wav(&dir.path().join("fan/train/normal_id_00_00000001.wav"), 4);
        touch_wav(&dir.path().join("fan/test/normal_id_00_00000001.wav"), 4);
        touch_wav(&dir.path().join("fan/test/anomaly_id_09_00000001.wav"), 4);
        let train = scan_dataset(dir.path(), Split::Train).unwrap();
        let test = scan_dataset(dir.path(), Split::Test)
            .unwrap()
            .reindex(&train.id_map);
        assert_eq!(test.len(), 1);
        assert_eq!(test.rejects.len(), 1);
        assert!(test.rejects[0].reason.contains("id_09"));
    }

    #[test]
    fn manifest_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        touch_wav(&dir.path().join("fan/test/normal_id_00_00000001.wav"), 4);
        touch_wav(&dir.path().join("fan/test/anomaly_id_01_00000001.wav"), 4);
        let m = scan_dataset(dir.path(), Split::Test).unwrap();
        let csv_path = dir.path().join("m.csv");
        m.write_csv(&csv_path).unwrap();
        let back = DatasetManifest::read_csv(&csv_path, Split::Test).unwrap();
        assert_eq!(back.entries, m.entries);
        let header = std::fs::read_to_string(&csv_path).unwrap();
        assert!(header.starts_with("path,machine_type,machine_id,condition,class_index"));
        let json_path = dir.path().join("m.json");
        m.write_json(&json_path).unwrap();
        assert_eq!(DatasetManifest::read_json(&json_path).unwrap(), m);
    }

    #[test]
    fn load_identity_pad_and_truncate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..1000).map(|i| ((i % 64) as f32 - 32.0) / 64.0).collect();
        write_wav_i16(&p, &samples, 16_000).unwrap();
        let opts = LoadOptions {
            target_length: 1000,
            ..Default::default()
        };
        let clip = load_clip(&p, &opts).unwrap();
        assert_eq!(clip.len(), 1000);
        for (a, b) in clip.samples.iter().zip(&samples) {
            assert!((a - b).abs() < 1.0 / 32768.0 + 1e-6);
        }
        let padded = load_clip(
            &p,
            &LoadOptions {
                target_length: 1200,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(padded.len(), 1200);
        assert!(padded.samples[1000..].iter().all(|&s| s == 0.0));
        let cut = load_clip(
            &p,
            &LoadOptions {
                target_length: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cut.samples[..], clip.samples[..10]);
    }

    #[test]
    fn sample_rate_mismatch_errors_unless_resampling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav_i16(&p, &vec![0.25; 800], 8_000).unwrap();
        let strict = LoadOptions {
            target_length: 1600,
            ..Default::default()
        };
        assert!(load_clip(&p, &strict).is_err());
        let lenient = LoadOptions {
            allow_resample: true,
            ..strict
        };
        let clip = load_clip(&p, &lenient).unwrap();
        assert_eq!(clip.len(), 1600);
        assert!((clip.samples[100] - 0.25).abs() < 1e-3);
    }

    #[test]
    fn stereo_is_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(16384i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_clip(
            &p,
            &LoadOptions {
                target_length: 100,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(clip.samples.iter().all(|&s| (s - 0.25).abs() < 1e-6));
    }

    #[test]
    fn repeat_padding_tiles() {
        let mut v = vec![1.0, 2.0, 3.0];
        fit_length(&mut v, 7, PadMode::Repeat);
        assert_eq!(v, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
    }

    #[test]
    fn ten_seconds_at_16k_is_160000_samples() {
        assert_eq!(LoadOptions::default().target_length, 10 * 16_000);
    }
}
