use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use stgram_asd::dataio::{scan_datasets, Split};
use stgram_asd::experiments::{
    evaluate_in, export_embeddings, generate_dataset, load_run_bundle, read_embeddings, run_ablation, scan_split,
    score_in, train_in, write_scatter, EmbeddingSource, ExperimentConfig, Run,
};
use stgram_asd::metrics::MetricsReport;
use stgram_asd::scorer::read_scores;
use stgram_asd::trainer::load_bundle;

#[derive(Parser)]
#[command(name = "stgram", version, about = "Anomalous machine sound detection with STgram features")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// YAML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `key.path=value`, applied after the file; repeatable.
    #[arg(long = "override", short = 'o', global = true)]
    overrides: Vec<String>,
    /// Name of the run directory under `output_dir`.
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Continue an existing run instead of refusing it.
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset to `--out` (default: `dataset_root`).
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan the dataset and write train/test manifests into the run directory.
    Prepare,
    /// Train a model into the run directory.
    Train,
    /// Score the test split with the run's model.
    Score {
        /// Model bundle to use instead of the run's own.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compute AUC/pAUC/mAUC from the run's scores.
    Evaluate {
        /// Score file to use instead of the run's own.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Train, score and evaluate every ablation cell.
    Ablate,
    /// Export per-clip vectors of the test split as CSV.
    Embed {
        /// model, logmel or tgram.
        #[arg(long, default_value = "model")]
        source: EmbeddingSource,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Plot an embedding CSV in two dimensions.
    Plot {
        /// Embedding CSV; defaults to the run's model embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(id) = &common.run_id {
        overrides.push(format!("run_id={id}"));
    }
    Ok(ExperimentConfig::load(common.config.as_deref(), &overrides)?)
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => bail!("split must be 'train' or 'test', got '{s}'"),
    }
}

fn attach_or_open(dir: &Path, cfg: &ExperimentConfig, command: &str) -> anyhow::Result<Run> {
    if dir.join(stgram_asd::experiments::RUN_RECORD).exists() {
        Ok(Run::attach(dir)?)
    } else {
        Run::open(dir, &cfg.run_id, command, false)?.finish(None)?;
        Ok(Run::attach(dir)?)
    }
}

fn print_report(report: &MetricsReport) {
    println!("{}", report.render_table());
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.common)?;
    let dir = cfg.run_dir();
    match cli.command {
        Command::Synth { out } => {
            let root = out.unwrap_or_else(|| cfg.dataset_root.clone());
            let n = generate_dataset(&root, &cfg.synth)?;
            println!("wrote {n} clips to {}", root.display());
        }
        Command::Prepare => {
            let mut run = attach_or_open(&dir, &cfg, "prepare")?;
            for split in [Split::Train, Split::Test] {
                let m = scan_datasets(&cfg.dataset_roots(), split)?;
                let name = format!("{}_manifest", split.dir_name());
                m.write_csv(run.path(&format!("{name}.csv")))?;
                m.write_json(run.path(&format!("{name}.json")))?;
                run.add_artifact(&format!("{name}.csv"))?;
                run.add_artifact(&format!("{name}.json"))?;
                println!(
                    "{}: {} clips, {} machines, {} rejected",
                    split.dir_name(),
                    m.len(),
                    m.class_count(),
                    m.rejects.len()
                );
            }
        }
        Command::Train => {
            scan_split(&cfg, Split::Train)?;
            let mut run = Run::open(&dir, &cfg.run_id, "train", cli.common.resume)?;
            let config_path = run.path("config.yaml");
            std::fs::write(&config_path, cfg.to_yaml()?).with_context(|| config_path.display().to_string())?;
            run.add_artifact("config.yaml")?;
            let result = train_in(&cfg, &cfg.train, &mut run, cli.common.resume);
            run.finish(result.as_ref().err().map(|e| e.to_string()))?;
            let bundle = result?;
            if let Some(last) = bundle.history.last() {
                println!(
                    "trained {} epochs: loss {:.5}, accuracy {:.4}",
                    bundle.epoch, last.mean_loss, last.train_accuracy
                );
            }
        }
        Command::Score { model } => {
            let bundle = match model {
                Some(p) => load_bundle(p)?,
                None => load_run_bundle(&dir)?,
            };
            let mut run = attach_or_open(&dir, &cfg, "score")?;
            let out = score_in(&cfg, &bundle, &mut run)?;
            println!("scored {} clips, {} rejected", out.records.len(), out.rejects.len());
            if out.incomplete {
                eprintln!("warning: some clips could not be scored; see score_rejects.json");
            }
        }
        Command::Evaluate { scores } => {
            let path = scores.unwrap_or_else(|| dir.join(stgram_asd::experiments::SCORES_FILE));
            let records = read_scores(&path)?;
            let mut run = attach_or_open(&dir, &cfg, "evaluate")?;
            let report = evaluate_in(&records, cfg.pauc_p, &mut run)?;
            print_report(&report);
        }
        Command::Ablate => {
            let outcome = run_ablation(&cfg, &dir, cli.common.resume)?;
            println!("{}", outcome.table.render());
            let failed: Vec<&str> = outcome
                .cells
                .iter()
                .filter(|c| c.error.is_some())
                .map(|c| c.cell.name.as_str())
                .collect();
            if !failed.is_empty() {
                bail!("ablation cells failed: {}", failed.join(", "));
            }
        }
        Command::Embed { source, split } => {
            let split = parse_split(&split)?;
            let bundle = load_run_bundle(&dir)?;
            let manifest = scan_split(&cfg, split)?;
            let table = export_embeddings(&bundle, &manifest, &cfg.load, source, cfg.score_batch_size)?;
            let name = format!("embeddings_{}.csv", source_name(source));
            let mut run = attach_or_open(&dir, &cfg, "embed")?;
            table.write_csv(run.path(&name))?;
            run.add_artifact(&name)?;
            println!("wrote {} vectors of width {} to {}", table.len(), table.dim(), run.path(&name).display());
        }
        Command::Plot { embeddings } => {
            let path = embeddings.unwrap_or_else(|| dir.join("embeddings_model.csv"));
            let table = read_embeddings(&path)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "embeddings".into());
            let mut run = attach_or_open(&dir, &cfg, "plot")?;
            let svg = format!("{stem}_pca.svg");
            let coords = format!("{stem}_pca.csv");
            write_scatter(&table, &run.path(&svg), &run.path(&coords), &format!("{stem} (PCA)"))?;
            run.add_artifact(&svg)?;
            run.add_artifact(&coords)?;
            println!("wrote {}", run.path(&svg).display());
        }
    }
    Ok(())
}

fn source_name(s: EmbeddingSource) -> &'static str {
    match s {
        EmbeddingSource::Model => "model",
        EmbeddingSource::LogMel => "logmel",
        EmbeddingSource::Tgram => "tgram",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
