use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{run_pipeline, scan_split};
use crate::classifier::HeadKind;
use crate::dataio::Split;
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::metrics::{ComparisonTable, MetricsReport};
use crate::trainer::TrainConfig;

/// One row of the ablation matrix: an input representation and a head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCell {
    pub name: String,
    pub feature_kind: FeatureKind,
    pub head: HeadKind,
    /// Overrides `train.epochs` for this cell.
    #[serde(default)]
    pub epochs: Option<usize>,
}

impl AblationCell {
    pub fn new(name: &str, feature_kind: FeatureKind, head: HeadKind) -> Self {
        Self {
            name: name.into(),
            feature_kind,
            head,
            epochs: None,
        }
    }

    pub fn default_matrix() -> Vec<Self> {
        vec![
            Self::new("LogMel-MFN", FeatureKind::Sgram, HeadKind::Cee),
            Self::new("Tgram-MFN", FeatureKind::Tgram, HeadKind::Cee),
            Self::new("Spec-MFN", FeatureKind::Spec, HeadKind::Cee),
            Self::new("STgram-MFN(CEE)", FeatureKind::STgram, HeadKind::Cee),
            Self::new("STgram-MFN(ArcFace)", FeatureKind::STgram, HeadKind::ArcFace),
        ]
    }

    /// Directory-safe form of the name.
    pub fn slug(&self) -> String {
        self.name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { '_' })
            .collect::<String>()
            .trim_matches('_')
            .to_string()
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.feature_kind = self.feature_kind;
        cfg.head.kind = self.head;
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: AblationCell,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub cells: Vec<CellResult>,
    pub table: ComparisonTable,
}

/// Runs every configured cell in its own subdirectory of `dir`, then writes
/// the comparison table. A failing cell is recorded and the rest continue.
pub fn run_ablation(cfg: &ExperimentConfig, dir: &Path, resume: bool) -> Result<AblationOutcome> {
    if cfg.ablation.is_empty() {
        return Err(Error::Config("ablation matrix is empty".into()));
    }
    let mut slugs: Vec<String> = cfg.ablation.iter().map(AblationCell::slug).collect();
    slugs.sort();
    if slugs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("ablation cell names must be distinct".into()));
    }
    scan_split(cfg, Split::Train)?;
    scan_split(cfg, Split::Test)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cells = Vec::new();
    for cell in &cfg.ablation {
        let train_cfg = cell.train_config(&cfg.train);
        log::info!("ablation cell {}", cell.name);
        let outcome = run_pipeline(cfg, &train_cfg, &dir.join(cell.slug()), resume);
        cells.push(match outcome {
            Ok(o) => CellResult {
                cell: cell.clone(),
                report: Some(o.report),
                error: None,
            },
            Err(e) => {
                log::error!("cell {} failed: {e}", cell.name);
                CellResult {
                    cell: cell.clone(),
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    let rows: Vec<(String, Option<&MetricsReport>)> =
        cells.iter().map(|c| (c.cell.name.clone(), c.report.as_ref())).collect();
    let table = ComparisonTable::new(&rows);
    let text_path = dir.join("comparison.txt");
    let mut text = table.render();
    for c in cells.iter().filter(|c| c.error.is_some()) {
        text.push_str(&format!("\n{} failed: {}", c.cell.name, c.error.as_deref().unwrap_or_default()));
    }
    std::fs::write(&text_path, text).map_err(|e| Error::io(&text_path, e))?;
    let csv_path = dir.join("comparison.csv");
    std::fs::write(&csv_path, table.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
    Ok(AblationOutcome { cells, table })
}
