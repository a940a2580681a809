//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so every line is printed; exits non-zero on any FAIL.
//!
//! Criterion 7 (full-scale reproduction on the real DCASE data with
//! accelerator training) is optional and reported as SKIP.

use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stgram_asd::classifier::{ClassifierHead, HeadConfig, HeadKind};
use stgram_asd::dataio::AudioClip;
use stgram_asd::experiments::{generate_dataset, run_ablation, run_pipeline, AblationCell, ExperimentConfig, PipelineOutcome};
use stgram_asd::features::{fuse_stgram, log_mel, SpectralConfig};
use stgram_asd::metrics::{auc, pauc};
use stgram_asd::nn::{cross_entropy, ParamStore};
use stgram_asd::tgramnet::{tgramnet_forward, tgramnet_init, TgramConfig};
use stgram_asd::trainer::{lr_at, AsdModel, ModelSpec, Precision, TrainConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn shape_contract() -> Outcome {
    let start = Instant::now();
    let cfg = SpectralConfig {
        window_size: 1024,
        hop_length: 512,
        mel_bins: 128,
        ..Default::default()
    };
    let wave: Vec<f32> = (0..160_000)
        .map(|i| 0.3 * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 16_000.0).sin())
        .collect();
    let clip = AudioClip::new(wave.clone(), 16_000, "tone").map_err(|e| e.to_string())?;
    let s = log_mel(&clip, &cfg).map_err(|e| e.to_string())?;
    let (_, net) = tgramnet_init(&cfg, TgramConfig::default(), DType::F32, 0).map_err(|e| e.to_string())?;
    let t = tgramnet_forward(&net, &wave, DType::F32).map_err(|e| e.to_string())?;
    let st = fuse_stgram(&s, &t).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    check(s.shape() == (1, 128, 313), format!("F_S shape {:?}", s.shape()))?;
    check(t.shape() == (1, 128, 313), format!("F_T shape {:?}", t.shape()))?;
    check(st.shape() == (2, 128, 313), format!("STgram shape {:?}", st.shape()))?;
    check(elapsed < 1.0, format!("took {elapsed:.2}s"))?;
    Ok(format!("F_S, F_T (1,128,313), STgram (2,128,313) in {elapsed:.2}s"))
}

/// Mann-Whitney by counting every pair.
fn oracle_auc(n: &[f64], a: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &x in a {
        for &y in n {
            wins += if x > y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (n.len() * a.len()) as f64
}

/// Thresholds every distinct score, then integrates the ROC with the
/// trapezoid rule up to `p`, interpolating the last segment.
fn oracle_pauc(n: &[f64], a: &[f64], p: f64) -> f64 {
    let mut th: Vec<f64> = n.iter().chain(a).copied().collect();
    th.sort_by(|x, y| y.partial_cmp(x).unwrap());
    th.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in th {
        let fpr = n.iter().filter(|&&s| s >= t).count() as f64 / n.len() as f64;
        let tpr = a.iter().filter(|&&s| s >= t).count() as f64 / a.len() as f64;
        pts.push((fpr, tpr));
    }
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= p {
            break;
        }
        if x1 <= p {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (p - x0) / (x1 - x0);
            area += (p - x0) * (y0 + y) / 2.0;
        }
    }
    area / p
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for set in 0..1000 {
        let nn = rng.gen_range(1..=200);
        let na = rng.gen_range(1..=200);
        let levels = if set % 3 == 0 { 10.0 } else { 1000.0 };
        let shift = rng.gen_range(0.0..2.0);
        let mut draw = |mu: f64| ((rng.gen::<f64>() * 3.0 + mu) * levels).round() / levels;
        let n: Vec<f64> = (0..nn).map(|_| draw(0.0)).collect();
        let a: Vec<f64> = (0..na).map(|_| draw(shift)).collect();
        let lib_auc = auc(&n, &a).map_err(|e| e.to_string())?;
        worst = worst.max((lib_auc - oracle_auc(&n, &a)).abs());
        for p in [0.1, 0.37] {
            let lib = pauc(&n, &a, p).map_err(|e| e.to_string())?;
            worst = worst.max((lib - oracle_pauc(&n, &a, p)).abs());
        }
        let full = pauc(&n, &a, 1.0).map_err(|e| e.to_string())?;
        worst = worst.max((full - lib_auc).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(worst < 1e-9, format!("max |diff| = {worst:e}"))?;
    check(elapsed < 30.0, format!("took {elapsed:.1}s"))?;
    Ok(format!("1000 sets, max |diff| = {worst:.1e}, {elapsed:.1}s"))
}

fn gradient_spec() -> ModelSpec {
    ModelSpec {
        spectral: SpectralConfig {
            window_size: 64,
            hop_length: 32,
            mel_bins: 8,
            ..Default::default()
        },
        feature_kind: stgram_asd::features::FeatureKind::STgram,
        head: HeadConfig::default(),
        mfn: stgram_asd::classifier::MfnConfig::tiny(),
        tgram: TgramConfig::default(),
        clip_length: 320,
        classes: 3,
        precision: Precision::F64,
    }
}

fn set_entry(t: &candle_core::Var, i: usize, value: f64) -> Result<(), String> {
    let mut v: Vec<f64> = t.flatten_all().and_then(|x| x.to_vec1()).map_err(|e| e.to_string())?;
    v[i] = value;
    let new = Tensor::from_vec(v, t.dims(), &Device::Cpu).map_err(|e| e.to_string())?;
    t.set(&new).map_err(|e| e.to_string())
}

fn loss_head() -> Outcome {
    let mut store = ParamStore::new(DType::F64, 3);
    let cfg = HeadConfig {
        kind: HeadKind::ArcFace,
        margin: 0.0,
        scale: 1.0,
    };
    let head = ClassifierHead::new(&mut store, "head", cfg, 5, 8).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let emb: Vec<f64> = (0..6 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets = [0u32, 1, 2, 3, 4, 2];
    let e = Tensor::from_vec(emb.clone(), (6, 8), &Device::Cpu).map_err(|e| e.to_string())?;
    let y = Tensor::new(&targets, &Device::Cpu).map_err(|e| e.to_string())?;
    let logits = head.logits(&e, Some(&y)).map_err(|e| e.to_string())?;
    let got: f64 = cross_entropy(&logits, &y)
        .and_then(|l| Ok(l.to_dtype(DType::F64)?.to_scalar()?))
        .map_err(|e| e.to_string())?;
    let w: Vec<f64> = store.get("head.weight").unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut want = 0.0;
    for (b, &t) in targets.iter().enumerate() {
        let x = &emb[b * 8..b * 8 + 8];
        let cos: Vec<f64> = (0..5)
            .map(|c| {
                let wc = &w[c * 8..c * 8 + 8];
                x.iter().zip(wc).map(|(p, q)| p * q).sum::<f64>() / (norm(x) * norm(wc))
            })
            .collect();
        let lse = cos.iter().map(|c| c.exp()).sum::<f64>().ln();
        want += lse - cos[t as usize];
    }
    want /= targets.len() as f64;
    check((got - want).abs() < 1e-6, format!("ArcFace(m=0,s=1) {got} vs normalized softmax {want}"))?;

    let start = Instant::now();
    let model = AsdModel::new(gradient_spec(), 5).map_err(|e| e.to_string())?;
    let clips: Vec<_> = (0..4)
        .map(|k| {
            let wave: Vec<f32> = (0..320)
                .map(|i| 0.4 * (2.0 * std::f32::consts::PI * (600.0 + 900.0 * k as f32) * i as f32 / 16_000.0).sin())
                .collect();
            model.prepare(wave).unwrap()
        })
        .collect();
    let refs: Vec<_> = clips.iter().collect();
    let targets = Tensor::new(&[0u32, 1, 2, 1], &Device::Cpu).map_err(|e| e.to_string())?;
    let loss = |m: &AsdModel| -> Result<Tensor, String> {
        let logits = m.logits(&refs, Some(&targets), true).map_err(|e| e.to_string())?;
        cross_entropy(&logits, &targets).map_err(|e| e.to_string())
    };
    let grads = loss(&model)?.backward().map_err(|e| e.to_string())?;
    let names: Vec<String> = model
        .store()
        .trainable()
        .map(|(n, _)| n.to_string())
        .filter(|n| n.starts_with("tgram.") || n.starts_with("mfn."))
        .collect();
    check(names.iter().any(|n| n.starts_with("tgram.")), "no TgramNet parameters")?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for name in names.iter().step_by(2) {
        let var = model.store().get(name).ok_or_else(|| format!("no parameter named {name}"))?;
        let g: Vec<f64> = grads
            .get(var.as_tensor())
            .ok_or_else(|| format!("no gradient for {name}"))?
            .flatten_all()
            .and_then(|t| t.to_vec1())
            .map_err(|e| e.to_string())?;
        let base: Vec<f64> = var.flatten_all().and_then(|t| t.to_vec1()).map_err(|e| e.to_string())?;
        let step = (base.len() / 4).max(1);
        for i in (0..base.len()).step_by(step).take(2) {
            let h = 1e-6;
            set_entry(var, i, base[i] + h)?;
            let up: f64 = loss(&model)?.to_scalar().map_err(|e| e.to_string())?;
            set_entry(var, i, base[i] - h)?;
            let dn: f64 = loss(&model)?.to_scalar().map_err(|e| e.to_string())?;
            set_entry(var, i, base[i])?;
            let fd = (up - dn) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-5);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(worst < 1e-3, format!("max relative gradient error {worst:e}"))?;
    check(elapsed < 120.0, format!("took {elapsed:.1}s"))?;
    Ok(format!(
        "|Δloss| = {:.1e}; {checked} TgramNet/MFN entries, max rel err {worst:.1e}",
        (got - want).abs()
    ))
}

fn schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let lrs: Vec<f64> = (0..cfg.epochs).map(|e| lr_at(e, &cfg).unwrap()).collect();
    check(lrs[0] == 1e-4, format!("lr_at(0) = {}", lrs[0]))?;
    check(lrs[199] == cfg.eta_min, format!("lr_at(199) = {}", lrs[199]))?;
    check(lrs.windows(2).all(|w| w[1] <= w[0]), "schedule increases somewhere")?;
    Ok("lr_at(0) = 1e-4, lr_at(199) = 0, non-increasing over 200 epochs".into())
}

fn synthetic_run(cfg: &ExperimentConfig, dir: &Path) -> Result<(PipelineOutcome, f64), String> {
    let start = Instant::now();
    let out = run_pipeline(cfg, &cfg.train, dir, false).map_err(|e| e.to_string())?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn overfit_and_detect(out: &PipelineOutcome, elapsed: f64, epochs: usize) -> Outcome {
    let acc = out.bundle.history.last().map_or(0.0, |r| r.train_accuracy);
    let r = &out.report;
    check(epochs <= 30, format!("{epochs} epochs"))?;
    check(acc >= 0.99, format!("training accuracy {acc:.4}"))?;
    check(r.ids.len() == 4, format!("{} IDs evaluated", r.ids.len()))?;
    let worst = r.ids.iter().map(|i| i.auc).fold(f64::INFINITY, f64::min);
    check(worst >= 0.90, format!("lowest per-ID AUC {worst:.4}"))?;
    for t in &r.types {
        check(t.mauc <= t.mean_auc, format!("{}: mAUC {} > mean AUC {}", t.machine_type, t.mauc, t.mean_auc))?;
    }
    check(elapsed <= 600.0, format!("took {elapsed:.0}s"))?;
    Ok(format!(
        "accuracy {acc:.4}, lowest per-ID AUC {worst:.4}, mean AUC {:.4}, {epochs} epochs in {elapsed:.0}s",
        r.average.auc
    ))
}

fn ablation(cfg: &ExperimentConfig, dir: &Path) -> Outcome {
    let mut cfg = cfg.clone();
    for cell in &mut cfg.ablation {
        cell.epochs = Some(3);
    }
    let out = run_ablation(&cfg, dir, false).map_err(|e| e.to_string())?;
    check(out.table.methods.len() == 5, format!("{} method columns", out.table.methods.len()))?;
    let expect: Vec<String> = AblationCell::default_matrix().into_iter().map(|c| c.name).collect();
    check(out.table.methods == expect, format!("columns {:?}", out.table.methods))?;
    if let Some(c) = out.cells.iter().find(|c| c.error.is_some()) {
        return Err(format!("{} failed: {}", c.cell.name, c.error.as_deref().unwrap_or_default()));
    }
    check(out.table.is_complete(), "table has empty cells")?;
    for c in &out.cells[..3] {
        let bundle = stgram_asd::experiments::load_run_bundle(&dir.join(c.cell.slug())).map_err(|e| e.to_string())?;
        check(bundle.spec.head.kind == HeadKind::Cee, format!("{} trained with {:?}", c.cell.name, bundle.spec.head.kind))?;
    }
    check(dir.join("comparison.txt").exists() && dir.join("comparison.csv").exists(), "comparison files missing")?;
    Ok("5 columns, all cells populated, single-feature baselines trained with CEE".into())
}

fn determinism(a: &PipelineOutcome, b: &PipelineOutcome) -> Outcome {
    let la = a.bundle.history.last().map(|r| r.mean_loss).unwrap_or(f64::NAN);
    let lb = b.bundle.history.last().map(|r| r.mean_loss).unwrap_or(f64::NAN);
    check((la - lb).abs() <= 1e-6, format!("final losses {la} vs {lb}"))?;
    check(a.scores.records.len() == b.scores.records.len(), "different score counts")?;
    let worst = a
        .scores
        .records
        .iter()
        .zip(&b.scores.records)
        .map(|(x, y)| if x.path == y.path { (x.score - y.score).abs() } else { f64::INFINITY })
        .fold(0.0, f64::max);
    check(worst <= 1e-6, format!("max score difference {worst:e}"))?;
    let ra = &a.report;
    let rb = &b.report;
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-6;
    let same = ra.ids.len() == rb.ids.len()
        && ra.ids.iter().zip(&rb.ids).all(|(x, y)| {
            x.machine_type == y.machine_type && x.machine_id == y.machine_id && close(x.auc, y.auc) && close(x.pauc, y.pauc)
        })
        && close(ra.average.auc, rb.average.auc)
        && close(ra.average.pauc, rb.average.pauc)
        && close(ra.average.mauc, rb.average.mauc);
    check(same, "metric reports differ")?;
    Ok(format!("|Δ final loss| = {:.1e}, max |Δ score| = {worst:.1e}, reports identical", (la - lb).abs()))
}

fn report(id: &str, name: &str, outcome: &Outcome) -> bool {
    match outcome {
        Ok(detail) => {
            println!("PASS {id} {name}: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL {id} {name}: {why}");
            false
        }
    }
}

/// Positional arguments that are criterion numbers select a subset; any
/// other argument (libtest flags, name filters) is ignored.
fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let picked: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| matches!(a.as_str(), "1" | "2" | "3" | "4" | "5" | "6" | "8"))
        .collect();
    let want = |id: &str| picked.is_empty() || picked.iter().any(|p| p == id);
    let work = tempfile::tempdir().expect("temp dir");
    let data = work.path().join("data");
    let cfg = ExperimentConfig::desk(&data, work.path().join("runs"));
    let mut ok = true;
    if want("1") {
        ok &= report("1", "shape contract", &shape_contract());
    }
    if want("2") {
        ok &= report("2", "metric oracle equivalence", &metric_oracle());
    }
    if want("3") {
        ok &= report("3", "loss and gradient correctness", &loss_head());
    }
    if want("4") {
        ok &= report("4", "schedule endpoints", &schedule());
    }
    if want("5") || want("6") || want("8") {
        let generated = generate_dataset(&data, &cfg.synth).map_err(|e| e.to_string());
        let first = if want("5") || want("8") {
            Some(generated.clone().and_then(|_| synthetic_run(&cfg, &work.path().join("run_a"))))
        } else {
            None
        };
        if let (true, Some(first)) = (want("5"), &first) {
            let c5 = match first {
                Ok((out, t)) => overfit_and_detect(out, *t, cfg.train.epochs),
                Err(e) => Err(e.clone()),
            };
            ok &= report("5", "synthetic overfit and detection", &c5);
        }
        if want("6") {
            let c6 = generated.clone().and_then(|_| ablation(&cfg, &work.path().join("ablation")));
            ok &= report("6", "ablation harness", &c6);
        }
        if picked.is_empty() {
            println!("SKIP 7 full-scale reproduction: optional; needs the DCASE 2020 Task 2 data and accelerator training");
        }
        if let (true, Some(first)) = (want("8"), &first) {
            let second = generated.and_then(|_| synthetic_run(&cfg, &work.path().join("run_b")));
            let c8 = match (first, &second) {
                (Ok((a, _)), Ok((b, _))) => determinism(a, b),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            ok &= report("8", "determinism", &c8);
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
