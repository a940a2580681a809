//! End-to-end runs: synthetic data, train/score/evaluate pipelines, the
//! ablation matrix, embedding export and plots.

mod ablation;
mod config;
mod embed;
mod plot;
mod runs;
mod synth;

pub use ablation::{run_ablation, AblationCell, AblationOutcome, CellResult};
pub use config::{apply_override, ExperimentConfig, DATASET_ROOT_ENV};
pub use embed::{export_embeddings, read_embeddings, EmbeddingSource, EmbeddingTable};
pub use plot::{pca_2d, scatter_svg, write_scatter};
pub use runs::{read_run_record, Run, RunRecord, RunStatus, RUN_RECORD};
pub use synth::{generate_dataset, synthesize, MachineVoice, SynthClip, SynthConfig};

use std::path::Path;

use crate::dataio::{scan_datasets, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{build_report, MetricsReport};
use crate::scorer::{score_split, write_scores, ScoreOutput, ScoreRecord};
use crate::trainer::{load_bundle, train, ModelBundle, TrainConfig, TrainOptions};

pub const MODEL_FILE: &str = "model.stgb";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

/// Scans one split over every configured root. A training scan without any
/// usable clip is an error.
pub fn scan_split(cfg: &ExperimentConfig, split: Split) -> Result<DatasetManifest> {
    let manifest = scan_datasets(&cfg.dataset_roots(), split)?;
    if manifest.is_empty() {
        return Err(Error::Config(format!(
            "no {} clips found under {}",
            split.dir_name(),
            cfg.dataset_root.display()
        )));
    }
    Ok(manifest)
}

/// Trains into `run`, writing the checkpoint, log and manifest there.
pub fn train_in(cfg: &ExperimentConfig, train_cfg: &TrainConfig, run: &mut Run, resume: bool) -> Result<ModelBundle> {
    let manifest = scan_split(cfg, Split::Train)?;
    manifest.write_csv(run.path("train_manifest.csv"))?;
    run.add_artifact("train_manifest.csv")?;
    let opts = TrainOptions {
        checkpoint: Some(run.path(MODEL_FILE)),
        log: Some(run.path(TRAIN_LOG_FILE)),
        resume,
        cache: cfg.cache_features.then(|| run.path("features")),
    };
    let bundle = train(&manifest, &cfg.spectral, &cfg.load, train_cfg, &opts)?;
    run.add_artifact(MODEL_FILE)?;
    run.add_artifact(TRAIN_LOG_FILE)?;
    Ok(bundle)
}

/// Scores the test split with `bundle` and writes the score file.
pub fn score_in(cfg: &ExperimentConfig, bundle: &ModelBundle, run: &mut Run) -> Result<ScoreOutput> {
    let manifest = scan_split(cfg, Split::Test)?;
    let out = score_split(bundle, &manifest, &cfg.load, cfg.score_batch_size)?;
    write_scores(run.path(SCORES_FILE), &out.records)?;
    run.add_artifact(SCORES_FILE)?;
    if !out.rejects.is_empty() {
        let text = serde_json::to_string_pretty(&out.rejects)?;
        let path = run.path("score_rejects.json");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        run.add_artifact("score_rejects.json")?;
    }
    Ok(out)
}

/// Builds the metrics report of `records` and writes it as JSON and CSV.
pub fn evaluate_in(records: &[ScoreRecord], p: f64, run: &mut Run) -> Result<MetricsReport> {
    let report = build_report(records, p)?;
    report.write_json(run.path(METRICS_JSON))?;
    report.write_csv(run.path(METRICS_CSV))?;
    run.add_artifact(METRICS_JSON)?;
    run.add_artifact(METRICS_CSV)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub bundle: ModelBundle,
    pub scores: ScoreOutput,
    pub report: MetricsReport,
}

/// Train, score and evaluate in one run directory.
pub fn run_pipeline(cfg: &ExperimentConfig, train_cfg: &TrainConfig, dir: &Path, resume: bool) -> Result<PipelineOutcome> {
    let mut run = Run::open(dir, &cfg.run_id, "pipeline", resume)?;
    let config_path = run.path("config.yaml");
    let mut effective = cfg.clone();
    effective.train = train_cfg.clone();
    std::fs::write(&config_path, effective.to_yaml()?).map_err(|e| Error::io(&config_path, e))?;
    run.add_artifact("config.yaml")?;
    let result: Result<PipelineOutcome> = (|| {
        let bundle = train_in(cfg, train_cfg, &mut run, resume)?;
        let scores = score_in(cfg, &bundle, &mut run)?;
        let report = evaluate_in(&scores.records, cfg.pauc_p, &mut run)?;
        Ok(PipelineOutcome { bundle, scores, report })
    })();
    run.finish(result.as_ref().err().map(|e| e.to_string()))?;
    result
}

/// Loads the bundle a previous run left in `dir`.
pub fn load_run_bundle(dir: &Path) -> Result<ModelBundle> {
    load_bundle(dir.join(MODEL_FILE))
}
