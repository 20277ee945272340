use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thcm_core::conformal::{
    calibrate, conformal_metrics, nonconformity, predict_set, predict_set_at, ConformalCalibrator, ConformalMetrics,
    PredictionSetRecord,
};
use thcm_core::encoding::{FileEncoder, HashingEncoder, TextEncoder};
use thcm_core::evaluation::{evaluate_predictions, MetricReport, DEFAULT_KS};
use thcm_core::ingestion::{load_cohort, IcdMap, KeywordLexicon, Stage1, Trajectory};
use thcm_core::synthetic::generate_cohort;
use thcm_core::training::{
    continue_training, export_trajectory, predict_final, prepare_cohort, prepare_with_vocab, read_checkpoint,
    write_checkpoint, Predictions, PreparedCohort, TrainState,
};
use thcm_core::{Error, Result};

use crate::config::{EncoderKind, ExtractorKind, GenerateConfig, RunConfig};
use crate::{Cli, Command, EvalArgs, GenerateArgs, RunOverrides, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

/// Directory the command writes into, resolved without side effects.
pub fn output_dir(cli: &Cli) -> Result<PathBuf> {
    match &cli.command {
        Command::Generate(args) => Ok(generate_config(args)?.output_dir.unwrap_or_else(|| PathBuf::from("."))),
        Command::Train(a) => Ok(run_config(&a.run)?.output_dir()),
        Command::Calibrate(a) | Command::Evaluate(a) => Ok(run_config(&a.run)?.output_dir()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn generate_config(args: &GenerateArgs) -> Result<GenerateConfig> {
    let mut cfg = GenerateConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(seed) = args.seed {
        cfg.generator.seed = Some(seed);
    }
    if let Some(n) = args.patients {
        cfg.generator.n_patients = n;
    }
    Ok(cfg)
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let cfg = generate_config(args)?;
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let cohort = generate_cohort(&cfg.generator)?;
    mkdir(&out)?;
    let files = [("cohort.jsonl", 0), ("icd_map.csv", 1), ("ground_truth.json", 2)];
    for (name, which) in files {
        let path = out.join(name);
        let mut w = create(&path)?;
        match which {
            0 => cohort.write_cohort(&mut w)?,
            1 => cohort.write_icd_map(&mut w)?,
            _ => cohort.write_truth(&mut w)?,
        }
        finish(w, &path)?;
    }
    println!(
        "generated {} patients, {} admissions, {} codes, {} planted triggers in {}",
        cfg.generator.n_patients,
        cohort.admissions.len(),
        cohort.icd_map.len(),
        cohort.truth.triggers.len(),
        out.display()
    );
    Ok(())
}

fn run_config(o: &RunOverrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let p = &mut cfg.paths;
    for (flag, field) in [
        (&o.cohort, &mut p.cohort),
        (&o.icd_map, &mut p.icd_map),
        (&o.keywords, &mut p.keywords),
        (&o.out, &mut p.output_dir),
    ] {
        if flag.is_some() {
            field.clone_from(flag);
        }
    }
    if let Some(seed) = o.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn stage1(cfg: &RunConfig) -> Result<Stage1> {
    let lexicon = match &cfg.paths.keywords {
        Some(k) => KeywordLexicon::load(k, cfg.paths.headings.as_deref())?,
        None => KeywordLexicon::default(),
    };
    let icd = IcdMap::load(cfg.require(&cfg.paths.icd_map, "icd_map")?)?;
    let stage1 = Stage1::new(lexicon, icd, cfg.stage1);
    match cfg.extractor.kind {
        ExtractorKind::Rule => Ok(stage1),
        ExtractorKind::Remote => with_remote(stage1, cfg),
    }
}

#[cfg(feature = "remote-extractor")]
fn with_remote(stage1: Stage1, cfg: &RunConfig) -> Result<Stage1> {
    use thcm_core::ingestion::{FallbackExtractor, RemoteExtractor, RuleExtractor};
    let endpoint = cfg.extractor.endpoint.clone().unwrap_or_default();
    let remote = RemoteExtractor::new(endpoint)?;
    let fallback = RuleExtractor::new(stage1.lexicon.clone());
    Ok(stage1.with_extractor(Box::new(FallbackExtractor::new(remote, fallback))))
}

#[cfg(not(feature = "remote-extractor"))]
fn with_remote(_: Stage1, _: &RunConfig) -> Result<Stage1> {
    Err(Error::Config(
        "the remote extractor needs a build with the remote-extractor feature".into(),
    ))
}

fn load_trajectories(cfg: &RunConfig) -> Result<Vec<Trajectory>> {
    let stage1 = stage1(cfg)?;
    load_cohort(cfg.require(&cfg.paths.cohort, "cohort")?, &stage1)
}

fn encoder(cfg: &RunConfig, text_dim: usize) -> Result<Box<dyn TextEncoder>> {
    Ok(match cfg.encoder.kind {
        EncoderKind::Hash => Box::new(HashingEncoder::new(text_dim)?),
        EncoderKind::File => Box::new(FileEncoder::load(cfg.require(&cfg.encoder.path, "encoder.path")?)?),
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = run_config(&args.run)?;
    if let Some(n) = args.max_epochs {
        cfg.train.max_epochs = n;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    cfg.validate()?;
    let out = cfg.output_dir();
    let ckpt = out.join(CHECKPOINT_FILE);
    let cohort = load_trajectories(&cfg)?;

    let (mut state, data) = if args.resume {
        let mut state = read_checkpoint(&ckpt)?;
        state.config.max_epochs = cfg.train.max_epochs;
        state.config.patience = cfg.train.patience;
        state.stopping.patience = cfg.train.patience;
        state.config.validate()?;
        let enc = encoder(&cfg, state.config.text_dim)?;
        let data = prepare_with_vocab(&cohort, enc.as_ref(), &state.config, state.vocab.clone())?;
        log::info!("resuming at epoch {}", state.next_epoch);
        (state, data)
    } else {
        let enc = encoder(&cfg, cfg.train.text_dim)?;
        let data = prepare_cohort(&cohort, enc.as_ref(), &cfg.train)?;
        (TrainState::new(cfg.train.clone(), data.vocab.clone())?, data)
    };
    log::info!(
        "{} patients ({} train, {} valid, {} test), {} labels",
        data.trajectories.len(),
        data.split.train.len(),
        data.split.valid.len(),
        data.split.test.len(),
        data.vocab.len()
    );
    continue_training(&mut state, &data, |_| {})?;

    mkdir(&out)?;
    write_history(&out, &state)?;
    write_checkpoint(&ckpt, &state)?;
    let best = state.stopping.best_epoch;
    println!(
        "trained {} epochs, best epoch {}, valid R@{} {:.4}; checkpoint {}",
        state.history.len(),
        best.map_or("none".to_string(), |b| b.to_string()),
        state.config.early_stopping_k,
        best.and_then(|b| state.history.iter().find(|r| r.epoch == b))
            .map_or(0.0, |r| r.valid_recall),
        ckpt.display()
    );
    Ok(())
}

fn write_history(out: &Path, state: &TrainState) -> Result<()> {
    let path = out.join("history.jsonl");
    let mut w = create(&path)?;
    for r in &state.history {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    finish(w, &path)?;

    let path = out.join("training_curve.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "epoch",
        "temperature",
        "loss",
        "focal",
        "acyclicity",
        "sparsity",
        "valid_acyclicity",
        "valid_precision",
        "valid_recall",
    ])?;
    for r in &state.history {
        w.write_record(
            [
                r.epoch as f64,
                r.temperature,
                r.loss,
                r.focal,
                r.acyclicity,
                r.sparsity,
                r.valid_acyclicity,
                r.valid_precision,
                r.valid_recall,
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Checkpoint, data and calibration shared by `calibrate` and `evaluate`.
struct Loaded {
    cfg: RunConfig,
    out: PathBuf,
    state: TrainState,
    data: PreparedCohort,
    calib_scores: Vec<f64>,
}

fn load_for_eval(args: &EvalArgs) -> Result<Loaded> {
    let mut cfg = run_config(&args.run)?;
    if let Some(e) = args.epsilon {
        cfg.train.epsilon = e;
    }
    if let Some(es) = &args.epsilons {
        cfg.calibration.epsilons.clone_from(es);
    }
    cfg.validate()?;
    let out = cfg.output_dir();
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let state = read_checkpoint(&ckpt)?;
    let cohort = load_trajectories(&cfg)?;
    let enc = encoder(&cfg, state.config.text_dim)?;
    let data = prepare_with_vocab(&cohort, enc.as_ref(), &state.config, state.vocab.clone())?;
    if data.split.valid.is_empty() {
        return Err(Error::Calibration("validation split is empty".into()));
    }
    let valid = predictions(&state, &data, &data.split.valid, None)?;
    let calib_scores: Vec<f64> = (0..valid.probs.rows())
        .flat_map(|r| nonconformity(valid.probs.row(r), &valid.truth[r]))
        .collect();
    log::info!(
        "{} calibration scores from {} admissions",
        calib_scores.len(),
        valid.truth.len()
    );
    Ok(Loaded {
        cfg,
        out,
        state,
        data,
        calib_scores,
    })
}

fn predictions(state: &TrainState, data: &PreparedCohort, idx: &[usize], cap: Option<usize>) -> Result<Predictions> {
    predict_final(
        &state.best,
        &data.trajectories,
        idx,
        state.best_temperature,
        state.config.variant,
        cap,
    )
}

fn set_metrics(preds: &Predictions, tau: f64) -> Result<ConformalMetrics> {
    let sets: Vec<_> = (0..preds.probs.rows())
        .map(|r| predict_set_at(preds.probs.row(r), tau))
        .collect();
    conformal_metrics(&sets, &preds.truth, preds.probs.cols())
}

fn test_split(l: &Loaded) -> Result<&[usize]> {
    if l.data.split.test.is_empty() {
        return Err(Error::Evaluation("test split is empty".into()));
    }
    Ok(&l.data.split.test)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn cmd_calibrate(args: &EvalArgs) -> Result<()> {
    let l = load_for_eval(args)?;
    let test = predictions(&l.state, &l.data, test_split(&l)?, None)?;
    mkdir(&l.out)?;
    let path = l.out.join("epsilon_sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["epsilon", "tau", "coverage", "miw", "ie"])?;
    for &eps in &l.cfg.calibration.epsilons {
        let cal = calibrate(l.calib_scores.clone(), eps)?;
        let m = set_metrics(&test, cal.tau())?;
        w.write_record([
            eps.to_string(),
            opt(finite(cal.tau())),
            m.coverage.to_string(),
            m.miw.to_string(),
            opt(m.ie),
        ])?;
        println!("epsilon {eps}: coverage {:.4} miw {:.4}", m.coverage, m.miw);
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let cal = calibrate(l.calib_scores.clone(), l.cfg.train.epsilon)?;
    let path = l.out.join("calibration.json");
    let w = create(&path)?;
    serde_json::to_writer_pretty(
        w,
        &serde_json::json!({
            "epsilon": cal.epsilon(),
            "tau": finite(cal.tau()),
            "n_scores": cal.scores().len(),
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsJson {
    auroc: f64,
    #[serde(rename = "p@10")]
    p10: f64,
    #[serde(rename = "r@10")]
    r10: f64,
    #[serde(rename = "p@20")]
    p20: f64,
    #[serde(rename = "r@20")]
    r20: f64,
    coverage: f64,
    miw: f64,
    ie: Option<f64>,
    epsilon: f64,
    tau: Option<f64>,
    n: usize,
    seed: u64,
    config_hash: String,
}

fn cmd_evaluate(args: &EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(Error::Config(format!(
            "threshold must lie in [0, 1], got {}",
            args.threshold
        )));
    }
    let l = load_for_eval(args)?;
    let test_idx = test_split(&l)?;
    let test = predictions(&l.state, &l.data, test_idx, None)?;
    let report = evaluate_predictions(&test.probs, &test.truth, &DEFAULT_KS)?;
    let cal = calibrate(l.calib_scores.clone(), l.cfg.train.epsilon)?;
    let conformal = set_metrics(&test, cal.tau())?;
    mkdir(&l.out)?;

    let mut hashed = l.cfg.clone();
    hashed.train = l.state.config.clone();
    hashed.train.epsilon = l.cfg.train.epsilon;
    let metrics = MetricsJson {
        auroc: report.auroc,
        p10: report.precision_at[&10],
        r10: report.recall_at[&10],
        p20: report.precision_at[&20],
        r20: report.recall_at[&20],
        coverage: conformal.coverage,
        miw: conformal.miw,
        ie: conformal.ie,
        epsilon: cal.epsilon(),
        tau: finite(cal.tau()),
        n: report.n_admissions,
        seed: l.state.config.seed,
        config_hash: hashed.hash(),
    };
    let path = l.out.join("metrics.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &metrics)?;
    w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    finish(w, &path)?;

    write_prediction_sets(&l.out, &test, &cal, l.state.vocab.labels())?;
    write_calibration_effect(&l.out, &test, &cal)?;
    if let Some(caps) = &args.prop_cap {
        write_prop_cap_sweep(&l, test_idx, caps)?;
    }
    if args.export_graph {
        write_graphs(&l, test_idx, args.threshold)?;
    }
    println!(
        "auroc {:.4}  p@10 {:.4}  r@10 {:.4}  p@20 {:.4}  r@20 {:.4}  coverage {:.4}  miw {:.4}  (n = {})",
        metrics.auroc, metrics.p10, metrics.r10, metrics.p20, metrics.r20, metrics.coverage, metrics.miw, metrics.n
    );
    Ok(())
}

fn write_prediction_sets(out: &Path, test: &Predictions, cal: &ConformalCalibrator, vocab: &[String]) -> Result<()> {
    let path = out.join("prediction_sets.jsonl");
    let mut w = create(&path)?;
    for (r, pid) in test.patient_ids.iter().enumerate() {
        let set = predict_set(test.probs.row(r), cal);
        serde_json::to_writer(&mut w, &PredictionSetRecord::new(pid, &set, vocab, cal.epsilon()))?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    finish(w, &path)
}

/// Set metrics with and without calibration; the uncalibrated sets keep
/// labels with `p̂ ≥ 0.5`.
fn write_calibration_effect(out: &Path, test: &Predictions, cal: &ConformalCalibrator) -> Result<()> {
    let path = out.join("calibration_effect.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["setting", "epsilon", "tau", "coverage", "miw", "ie"])?;
    for (setting, eps, tau) in [
        ("uncalibrated", None, 0.5),
        ("calibrated", Some(cal.epsilon()), cal.tau()),
    ] {
        let m = set_metrics(test, tau)?;
        w.write_record([
            setting.to_string(),
            opt(eps),
            opt(finite(tau)),
            m.coverage.to_string(),
            m.miw.to_string(),
            opt(m.ie),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn write_prop_cap_sweep(l: &Loaded, test_idx: &[usize], caps: &[usize]) -> Result<()> {
    let path = l.out.join("prop_cap_sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["cap", "p@10", "r@10", "p@20", "r@20"])?;
    for &cap in caps {
        let preds = predictions(&l.state, &l.data, test_idx, Some(cap))?;
        let m: MetricReport = evaluate_predictions(&preds.probs, &preds.truth, &DEFAULT_KS)?;
        w.write_record([
            cap.to_string(),
            m.precision_at[&10].to_string(),
            m.recall_at[&10].to_string(),
            m.precision_at[&20].to_string(),
            m.recall_at[&20].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn write_graphs(l: &Loaded, test_idx: &[usize], threshold: f64) -> Result<()> {
    let dir = l.out.join("graphs");
    mkdir(&dir)?;
    let mut files = Vec::new();
    for &i in test_idx {
        let t = &l.data.trajectories[i];
        let edges = export_trajectory(
            &l.state.best,
            &t.admissions,
            l.state.best_temperature,
            l.state.config.variant,
            threshold,
        )?;
        let name = format!("{}.csv", sanitize(&t.patient_id));
        let path = dir.join(&name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["slice", "edge_type", "src_label", "dst_label", "weight"])?;
        for e in &edges {
            w.write_record([
                e.slice.to_string(),
                e.edge_type.as_str().to_string(),
                e.src_label.clone(),
                e.dst_label.clone(),
                e.weight.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push(serde_json::json!({"patient_id": t.patient_id, "file": name, "edges": edges.len()}));
    }
    let path = dir.join("manifest.json");
    let w = create(&path)?;
    serde_json::to_writer_pretty(
        w,
        &serde_json::json!({
            "threshold": threshold,
            "temperature": l.state.best_temperature,
            "seed": l.state.config.seed,
            "variant": l.state.config.variant,
            "patients": files,
        }),
    )?;
    Ok(())
}

/// Patient ids as file names: anything outside `[A-Za-z0-9._-]` becomes `_`.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}
