//! Command-line front end: dataset synthesis, training, embedding,
//! evaluation, gradient checking, and the ablation matrix.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::classify::{
    evaluate, svm_margin, svm_predict, svm_train, EvaluationReport, VideoDecision, VideoTruth,
};
use crate::dataio::{generate_synthetic, Manifest, Split, SynthSpec, SynthTask};
use crate::error::{Result, StagError};
use crate::fsutil;
use crate::optim::{gradcheck_suite, train_aggregator, write_train_records, TrainOptions};
use crate::pipeline::{
    build_interval_set, encode_video, interval_reps_from_set, load_model, load_svm, save_model,
    save_svm, subject_normalize, Emotion, LocalFeatureSequence, PipelineConfig, PipelineParams,
    Preset, VideoPooler,
};
use crate::pooling::{pca_fit, NetVladParams};
use crate::seeds;
use crate::temporal::CellKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

fn exit_code(e: &StagError) -> i32 {
    match e {
        StagError::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn parse_task(s: &str) -> std::result::Result<SynthTask, String> {
    SynthTask::from_str(s).map_err(|e| e.to_string())
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    Preset::from_str(s).ok_or_else(|| format!("unknown preset {s:?}"))
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::from_str(s).map_err(|e| e.to_string())
}

fn parse_cell(s: &str) -> std::result::Result<CellKind, String> {
    CellKind::from_str(s).ok_or_else(|| format!("unknown cell {s:?}"))
}

#[derive(Parser)]
#[command(
    name = "stag",
    version,
    about = "Spatio-temporal aggregation pipeline for real-vs-posed expression classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (feature files plus manifest).
    Synth(SynthArgs),
    /// Train per-emotion aggregators and SVMs from a manifest.
    Train(TrainArgs),
    /// Write video embeddings for one split as CSV.
    Embed(EmbedArgs),
    /// Score one split and print the per-emotion accuracy table.
    Evaluate(EvaluateArgs),
    /// Finite-difference validation of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Run the pooling ablation matrix and tabulate accuracies.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_task, default_value = "order")]
    task: SynthTask,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "STAG_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Videos per (emotion, label) cell.
    #[arg(long, default_value_t = 50)]
    videos_per_cell: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long, default_value_t = 8)]
    positions: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    states: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 100.0)]
    fps: f64,
}

/// Pipeline shape overrides on top of the chosen preset.
#[derive(Args, Clone)]
struct ConfigFlags {
    #[arg(long)]
    pca_rank: Option<usize>,
    /// Grid sketch dimension (power of two).
    #[arg(long)]
    d_g: Option<usize>,
    /// Video sketch / projection dimension (power of two for CBP).
    #[arg(long)]
    d_v: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_parser = parse_cell)]
    cell: Option<CellKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct BudgetFlags {
    #[arg(long, default_value_t = 50_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 500)]
    eval_every: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 1.0)]
    svm_c: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, env = "STAG_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, value_parser = parse_preset, default_value = "cbp-rnn-cbp")]
    pipeline: Preset,
    #[arg(long)]
    use_pca: bool,
    #[command(flatten)]
    config: ConfigFlags,
    #[command(flatten)]
    budget: BudgetFlags,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding aggregator_<emotion>.stag files.
    #[arg(long, env = "STAG_OUT_DIR", default_value = "out")]
    models: PathBuf,
    #[arg(long, value_parser = parse_split, default_value = "val")]
    split: Split,
    #[arg(long, env = "STAG_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding aggregator and SVM files.
    #[arg(long, env = "STAG_OUT_DIR", default_value = "out")]
    models: PathBuf,
    #[arg(long, value_parser = parse_split, default_value = "val")]
    split: Split,
    #[arg(long, env = "STAG_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Also write the per-component report as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, env = "STAG_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Comma-separated preset subset; default is the full matrix.
    #[arg(long)]
    presets: Option<String>,
    #[arg(long, value_parser = parse_split, default_value = "val")]
    split: Split,
    #[command(flatten)]
    config: ConfigFlags,
    #[command(flatten)]
    budget: BudgetFlags,
}

/// Parse argv and execute; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_snapshot(dir: &Path, cmd: &str, config: serde_json::Value) -> Result<()> {
    let body = serde_json::to_string_pretty(&config).expect("json snapshot");
    fsutil::atomic_write(&dir.join(format!("stag.{cmd}.config.json")), body.as_bytes())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        task: args.task,
        seed: args.seed,
        videos_per_cell: args.videos_per_cell,
        frames: args.frames,
        positions: args.positions,
        dim: args.dim,
        states: args.states,
        noise: args.noise,
        fps: args.fps,
    };
    let summary = generate_synthetic(&spec, &args.out)?;
    write_snapshot(
        &args.out,
        "synth",
        json!({
            "command": "synth",
            "task": spec.task.as_str(),
            "seed": spec.seed,
            "videos_per_cell": spec.videos_per_cell,
            "frames": spec.frames,
            "positions": spec.positions,
            "dim": spec.dim,
            "states": spec.states,
            "noise": spec.noise,
            "fps": spec.fps,
        }),
    )?;
    println!(
        "wrote {} videos: {} train, {} val, {} test",
        summary.videos, summary.train, summary.val, summary.test
    );
    println!("manifest: {}", summary.manifest_path.display());
    Ok(())
}

fn apply_overrides(preset: Preset, use_pca: bool, flags: &ConfigFlags) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::preset(preset);
    config.use_pca = use_pca;
    if let Some(v) = flags.pca_rank {
        config.pca_rank = v;
    }
    if let Some(v) = flags.d_g {
        config.d_g = v;
    }
    if let Some(v) = flags.d_v {
        config.d_v = v;
    }
    if let Some(v) = flags.clusters {
        config.clusters = v;
    }
    if let Some(v) = flags.hidden {
        config.hidden = v;
    }
    if let Some(v) = flags.cell {
        config.cell = v;
    }
    config.seed = flags.seed;
    config.validate()?;
    Ok(config)
}

fn load_split_emotion(
    manifest: &Manifest,
    split: Split,
    emotion: Emotion,
) -> Result<Vec<LocalFeatureSequence>> {
    manifest
        .entries
        .iter()
        .filter(|e| e.split == split && e.emotion == emotion)
        .map(|e| manifest.load_sequence(e))
        .collect()
}

const PCA_FIT_MAX_SAMPLES: usize = 20_000;

/// Fit the PCA reduction on subject-normalized local features from the
/// training sequences, deterministically subsampled.
fn fit_pca(
    seqs: &[LocalFeatureSequence],
    config: &PipelineConfig,
) -> Result<crate::pooling::PcaModel> {
    let total: usize = seqs.iter().map(|s| s.frames * s.positions).sum();
    let stride = (total / PCA_FIT_MAX_SAMPLES).max(1);
    let mut samples: Vec<Vec<f64>> = Vec::new();
    let mut i = 0usize;
    for seq in seqs {
        let norm = subject_normalize(seq, config.subject_norm_global);
        for t in 0..norm.frames {
            for m in 0..norm.positions {
                if i % stride == 0 {
                    samples.push(norm.feature(t, m).to_vec());
                }
                i += 1;
            }
        }
    }
    let views: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
    pca_fit(&views, config.pca_rank)
}

struct EmotionSummary {
    emotion: Emotion,
    best_val_loss: Option<f64>,
    iterations: usize,
    train_videos: usize,
}

/// Train one emotion end to end: PCA, aggregator, NetVLAD vocabulary,
/// SVM; writes aggregator_<e>.stag, svm_<e>.stag and train_<e>.csv.
fn train_emotion(
    manifest: &Manifest,
    config: &PipelineConfig,
    budget: &BudgetFlags,
    out: &Path,
    emotion: Emotion,
) -> Result<EmotionSummary> {
    let train_seqs = load_split_emotion(manifest, Split::Train, emotion)?;
    let val_seqs = load_split_emotion(manifest, Split::Val, emotion)?;
    if train_seqs.is_empty() || val_seqs.is_empty() {
        return Err(StagError::Manifest(format!(
            "emotion {emotion} has no train or val videos"
        )));
    }
    let mut params = PipelineParams::init(config, train_seqs[0].dim)?;
    if config.use_pca {
        params.pca = Some(fit_pca(&train_seqs, config)?);
    }
    let train_set = build_interval_set(&train_seqs, config, &params)?;

    let mut best_val_loss = None;
    let mut iterations = 0;
    let records_path = out.join(format!("train_{}.csv", emotion.as_str()));
    if config.use_rnn {
        let val_set = build_interval_set(&val_seqs, config, &params)?;
        let opts = TrainOptions {
            cell: config.cell,
            hidden_dim: config.hidden,
            max_iters: budget.max_iters,
            batch_size: budget.batch_size,
            eval_every: budget.eval_every,
            patience: budget.patience,
            seed: seeds::derive(config.seed, emotion.as_str()),
            ..TrainOptions::default()
        };
        let outcome = train_aggregator(&train_set, &val_set, emotion, &opts)?;
        write_train_records(&records_path, &outcome.records)?;
        params.rnn = Some(outcome.rnn);
        best_val_loss = Some(outcome.best_val_loss);
        iterations = outcome.iterations;
    } else {
        // Pooling-only configurations have nothing to optimize.
        write_train_records(&records_path, &[])?;
    }

    if config.video_pooler == VideoPooler::NetVlad {
        let mut samples: Vec<Vec<f64>> = Vec::new();
        for v in 0..train_set.num_videos() {
            samples.extend(interval_reps_from_set(&train_set, v, config, &params)?);
        }
        let views: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
        params.netvlad = Some(NetVladParams::init_from_kmeans(
            &views,
            config.clusters,
            seeds::derive(config.seed, "netvlad-init"),
        )?);
    }

    save_model(
        &out.join(format!("aggregator_{}.stag", emotion.as_str())),
        emotion,
        config,
        &params,
    )?;

    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(train_seqs.len());
    let mut ys = Vec::with_capacity(train_seqs.len());
    for seq in &train_seqs {
        xs.push(encode_video(seq, config, &params)?.values);
        ys.push(seq.label);
    }
    let views: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let svm = svm_train(&views, &ys, budget.svm_c).map_err(|e| match e {
        StagError::DegenerateLabels(msg) => {
            StagError::DegenerateLabels(format!("{emotion}: {msg}"))
        }
        other => other,
    })?;
    save_svm(&out.join(format!("svm_{}.stag", emotion.as_str())), emotion, &svm)?;

    Ok(EmotionSummary {
        emotion,
        best_val_loss,
        iterations,
        train_videos: train_seqs.len(),
    })
}

fn train_all(
    manifest: &Manifest,
    config: &PipelineConfig,
    budget: &BudgetFlags,
    out: &Path,
) -> Result<Vec<EmotionSummary>> {
    if manifest.split(Split::Train).is_empty() || manifest.split(Split::Val).is_empty() {
        return Err(StagError::Manifest(
            "manifest needs both train and val entries".into(),
        ));
    }
    Emotion::ALL
        .par_iter()
        .map(|&e| train_emotion(manifest, config, budget, out, e))
        .collect()
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let config = apply_overrides(args.pipeline, args.use_pca, &args.config)?;
    let summaries = train_all(&manifest, &config, &args.budget, &args.out)?;
    write_snapshot(
        &args.out,
        "train",
        json!({
            "command": "train",
            "manifest": args.manifest.display().to_string(),
            "pipeline": args.pipeline.as_str(),
            "use_pca": config.use_pca,
            "pca_rank": config.pca_rank,
            "d_g": config.d_g,
            "d_v": config.d_v,
            "clusters": config.clusters,
            "hidden": config.hidden,
            "cell": config.cell.as_str(),
            "seed": config.seed,
            "max_iters": args.budget.max_iters,
            "batch_size": args.budget.batch_size,
            "eval_every": args.budget.eval_every,
            "patience": args.budget.patience,
            "svm_c": args.budget.svm_c,
        }),
    )?;
    for s in &summaries {
        match s.best_val_loss {
            Some(loss) => println!(
                "{}: {} train videos, {} iterations, best val loss {loss:.6}",
                s.emotion, s.train_videos, s.iterations
            ),
            None => println!(
                "{}: {} train videos, pooling-only (no aggregator training)",
                s.emotion, s.train_videos
            ),
        }
    }
    println!("models written to {}", args.out.display());
    Ok(())
}

fn load_models(
    dir: &Path,
) -> Result<Vec<(crate::pipeline::ModelFile, crate::pipeline::SvmFile)>> {
    Emotion::ALL
        .iter()
        .map(|e| {
            let model = load_model(&dir.join(format!("aggregator_{}.stag", e.as_str())))?;
            let svm = load_svm(&dir.join(format!("svm_{}.stag", e.as_str())))?;
            Ok((model, svm))
        })
        .collect()
}

fn cmd_embed(args: &EmbedArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let models: Vec<crate::pipeline::ModelFile> = Emotion::ALL
        .iter()
        .map(|e| load_model(&args.models.join(format!("aggregator_{}.stag", e.as_str()))))
        .collect::<Result<_>>()?;
    let entries = manifest.split(args.split);
    if entries.is_empty() {
        return Err(StagError::Manifest(format!(
            "manifest has no {} entries",
            args.split
        )));
    }
    let mut rows = Vec::with_capacity(entries.len());
    let mut dim = 0;
    for entry in entries {
        let seq = manifest.load_sequence(entry)?;
        let m = &models[entry.emotion.index()];
        let rep = encode_video(&seq, &m.config, &m.params)?;
        dim = rep.values.len();
        rows.push(rep);
    }
    let mut csv = String::from("video_id,emotion,label");
    for i in 0..dim {
        csv.push_str(&format!(",v{i}"));
    }
    csv.push('\n');
    for rep in &rows {
        csv.push_str(&format!("{},{},{}", rep.video_id, rep.emotion, rep.label));
        for v in &rep.values {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    let path = args.out.join(format!("embeddings_{}.csv", args.split));
    fsutil::atomic_write(&path, csv.as_bytes())?;
    write_snapshot(
        &args.out,
        "embed",
        json!({
            "command": "embed",
            "manifest": args.manifest.display().to_string(),
            "models": args.models.display().to_string(),
            "split": args.split.as_str(),
        }),
    )?;
    println!("wrote {} embeddings to {}", rows.len(), path.display());
    Ok(())
}

fn evaluate_split(manifest: &Manifest, models_dir: &Path, split: Split) -> Result<EvaluationReport> {
    let models = load_models(models_dir)?;
    let entries = manifest.split(split);
    if entries.is_empty() {
        return Err(StagError::Manifest(format!(
            "manifest has no {split} entries"
        )));
    }
    let mut decisions = Vec::with_capacity(entries.len());
    let mut truth = Vec::with_capacity(entries.len());
    for entry in entries {
        let seq = manifest.load_sequence(entry)?;
        let (model, svm) = &models[entry.emotion.index()];
        let rep = encode_video(&seq, &model.config, &model.params)?;
        decisions.push(VideoDecision {
            video_id: entry.video_id.clone(),
            emotion: entry.emotion,
            predicted: svm_predict(&svm.model, &rep.values)?,
            margin: svm_margin(&svm.model, &rep.values)?,
        });
        truth.push(VideoTruth {
            video_id: entry.video_id.clone(),
            emotion: entry.emotion,
            label: entry.label,
        });
    }
    evaluate(&decisions, &truth)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let report = evaluate_split(&manifest, &args.models, args.split)?;
    let path = args.out.join(format!("evaluation_{}.csv", args.split));
    fsutil::atomic_write(&path, report.to_csv().as_bytes())?;
    write_snapshot(
        &args.out,
        "evaluate",
        json!({
            "command": "evaluate",
            "manifest": args.manifest.display().to_string(),
            "models": args.models.display().to_string(),
            "split": args.split.as_str(),
        }),
    )?;
    print!("{}", report.format_table());
    println!("csv: {}", path.display());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    // Test hook: corrupt one component's gradient to prove the checker
    // actually fails.
    let corrupt = std::env::var("STAG_GRADCHECK_CORRUPT").ok();
    let reports = gradcheck_suite(corrupt.as_deref())?;
    let mut failed: Vec<&str> = Vec::new();
    println!("{:<18} {:>9} {:>12} {:>6}", "component", "instances", "max_rel_err", "state");
    for r in &reports {
        println!(
            "{:<18} {:>9} {:>12.3e} {:>6}",
            r.component,
            r.instances,
            r.max_rel_err,
            if r.pass { "pass" } else { "FAIL" }
        );
        if !r.pass {
            failed.push(r.component);
        }
    }
    if let Some(out) = &args.out {
        let mut csv = String::from("component,instances,max_rel_err,pass\n");
        for r in &reports {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                r.component, r.instances, r.max_rel_err, r.pass
            ));
        }
        fsutil::atomic_write(out, csv.as_bytes())?;
    }
    if !failed.is_empty() {
        return Err(StagError::Numerical(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )));
    }
    println!("all gradient checks passed");
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let presets: Vec<Preset> = match &args.presets {
        Some(list) => list
            .split(',')
            .map(|s| {
                Preset::from_str(s.trim())
                    .ok_or_else(|| StagError::InvalidSpec(format!("unknown preset {s:?}")))
            })
            .collect::<Result<_>>()?,
        None => Preset::ABLATION.to_vec(),
    };
    let mut rows: Vec<(Preset, bool, f64)> = Vec::new();
    for &preset in &presets {
        for use_pca in [false, true] {
            let config = apply_overrides(preset, use_pca, &args.config)?;
            let tag = format!("{}_{}", preset.as_str(), if use_pca { "pca" } else { "raw" });
            let dir = args.out.join(format!("ablate_{tag}"));
            train_all(&manifest, &config, &args.budget, &dir)?;
            let report = evaluate_split(&manifest, &dir, args.split)?;
            println!(
                "{:<16} pca={:<5} overall {:.4}",
                preset.as_str(),
                use_pca,
                report.overall
            );
            rows.push((preset, use_pca, report.overall));
        }
    }
    let mut csv = String::from("preset,use_pca,overall\n");
    for (preset, use_pca, overall) in &rows {
        csv.push_str(&format!("{},{},{}\n", preset.as_str(), use_pca, overall));
    }
    let path = args.out.join("ablation.csv");
    fsutil::atomic_write(&path, csv.as_bytes())?;
    write_snapshot(
        &args.out,
        "ablate",
        json!({
            "command": "ablate",
            "manifest": args.manifest.display().to_string(),
            "presets": presets.iter().map(|p| p.as_str()).collect::<Vec<_>>(),
            "split": args.split.as_str(),
            "seed": args.config.seed,
            "max_iters": args.budget.max_iters,
        }),
    )?;
    println!("csv: {}", path.display());
    Ok(())
}
