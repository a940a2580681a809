use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RUN_RECORD: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// `run.json`: what a run was asked to do and what it left behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    pub status: RunStatus,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// An open run directory. Artifacts are registered as they are written and
/// the record is flushed on every change.
#[derive(Debug)]
pub struct Run {
    dir: PathBuf,
    record: RunRecord,
}

impl Run {
    /// Opens `dir` for `command`. A directory whose record already lists a
    /// trained model is refused unless `resume` is set.
    pub fn open(dir: impl Into<PathBuf>, run_id: &str, command: &str, resume: bool) -> Result<Self> {
        let dir = dir.into();
        let record_path = dir.join(RUN_RECORD);
        let previous = if record_path.exists() {
            Some(read_run_record(&dir)?)
        } else {
            None
        };
        if let Some(prev) = &previous {
            if !resume && prev.artifacts.iter().any(|a| a == super::MODEL_FILE) {
                return Err(Error::Config(format!(
                    "run directory {} already holds a {:?} '{}' run; pass --resume or choose another run id",
                    dir.display(),
                    prev.status,
                    prev.command
                )));
            }
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let record = RunRecord {
            run_id: run_id.to_string(),
            command: command.to_string(),
            status: RunStatus::Running,
            started_unix: now(),
            finished_unix: None,
            artifacts: previous.map(|p| p.artifacts).unwrap_or_default(),
            error: None,
        };
        let run = Self { dir, record };
        run.flush()?;
        Ok(run)
    }

    /// Opens an existing run to add artifacts without touching its status.
    pub fn attach(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let record = read_run_record(&dir)?;
        Ok(Self { dir, record })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn add_artifact(&mut self, name: &str) -> Result<()> {
        if !self.record.artifacts.iter().any(|a| a == name) {
            self.record.artifacts.push(name.to_string());
            self.flush()?;
        }
        Ok(())
    }

    /// Closes the run as complete, or failed with `error`.
    pub fn finish(mut self, error: Option<String>) -> Result<()> {
        self.record.finished_unix = Some(now());
        self.record.status = if error.is_some() { RunStatus::Failed } else { RunStatus::Complete };
        self.record.error = error;
        self.flush()
    }

    fn flush(&self) -> Result<()> {
        let path = self.dir.join(RUN_RECORD);
        let text = serde_json::to_string_pretty(&self.record)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

pub fn read_run_record(dir: impl AsRef<Path>) -> Result<RunRecord> {
    let path = dir.as_ref().join(RUN_RECORD);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
