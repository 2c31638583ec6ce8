//! Command-line entry point: dataset conversion and synthesis, training,
//! evaluation, inference, and benchmarking.
//!
//! Exit codes: 0 success, 2 usage/config error, 1 runtime failure.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use ssvepkit::baselines::{cca_classify, fbcca_classify, FilterBankSpec, ReferenceBank};
use ssvepkit::eval::{latency_bench, significance_table, MetricsReport};
use ssvepkit::model::{load_checkpoint, predict, save_checkpoint, ModelConfig};
use ssvepkit::signal::{read_epoch_file, write_epoch_file, DatasetManifest, EpochSet};
use ssvepkit::synth::{generate_dataset, SynthSpec};
use ssvepkit::train::{evaluate, fit, loso_splits, TrainConfig};
use ssvepkit::Error;

#[derive(Parser)]
#[command(name = "ssvepkit", version, about = "SSVEP decoding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a CSV trial table into an epoch (.eegt) file.
    Convert(ConvertArgs),
    /// Generate a synthetic labeled corpus on disk.
    Synth(SynthArgs),
    /// Train one network per leave-one-subject-out split.
    Train(TrainArgs),
    /// Score trained checkpoints and/or training-free baselines.
    Eval(EvalArgs),
    /// Predict labels for one epoch file with one checkpoint.
    Infer(InferArgs),
    /// Report model size and CPU inference latency.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// CSV with one trial per row: label, then channel-major samples.
    #[arg(long)]
    input: PathBuf,
    /// Output .eegt path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    channels: usize,
    #[arg(long)]
    sample_rate: f64,
    #[arg(long, default_value = "s01")]
    subject_id: String,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (created if missing); receives .eegt files + manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    subjects: usize,
    #[arg(long, default_value_t = 12)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    /// Signal-to-noise ratio in dB; "-inf" gives pure noise.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    snr: f64,
    #[arg(long, default_value_t = 250.0)]
    sample_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    trial_length: f64,
    #[arg(long, default_value_t = 3)]
    harmonics: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML run config; every flag below overrides its key.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    onset: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the spectral denoising stage (ablation arm).
    #[arg(long)]
    no_asdm: bool,
    /// Disable training-time statistics remixing (ablation arm).
    #[arg(long)]
    no_augment: bool,
    /// Train only the first N splits (smoke mode).
    #[arg(long)]
    subjects_limit: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// model | cca | fbcca
    #[arg(long, default_value = "model")]
    method: String,
    /// Directory holding ckpt_<subject>.ssvd files (for method=model).
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    #[arg(long, default_value_t = 0.0)]
    onset: f64,
    /// Reference harmonics for the correlation baselines.
    #[arg(long, default_value_t = 5)]
    harmonics: usize,
    /// Comma-separated method list to score side by side.
    #[arg(long)]
    compare: Option<String>,
    /// Emit a signed-rank significance table for --compare.
    #[arg(long)]
    wilcoxon: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Epoch (.eegt) file to label.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    onset: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of timed inference samples.
    #[arg(long, default_value_t = 240)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// File-backed run configuration; CLI flags override these keys.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    data: Option<PathBuf>,
    output: Option<PathBuf>,
    train: TrainConfig,
    model: ModelOverrides,
}

/// Optional architecture overrides; unset keys keep model defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelOverrides {
    temporal_kernel: Option<usize>,
    temporal_filters: Option<usize>,
    spatial_filters: Option<usize>,
    pool_width: Option<usize>,
    fc_hidden: Option<Vec<usize>>,
}

impl ModelOverrides {
    fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.temporal_kernel {
            cfg.temporal_kernel = v;
        }
        if let Some(v) = self.temporal_filters {
            cfg.temporal_filters = v;
        }
        if let Some(v) = self.spatial_filters {
            cfg.spatial_filters = v;
        }
        if let Some(v) = self.pool_width {
            cfg.pool_width = v;
        }
        if let Some(v) = &self.fc_hidden {
            cfg.fc_hidden = v.clone();
        }
    }
}

fn usage_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// 2 for configuration/usage problems, 1 for runtime failures.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert(a) => cmd_convert(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Bench(a) => cmd_bench(&a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(Error::Io)
}

/// Persists the effective configuration next to the outputs so a run
/// can be reproduced from its artifacts alone.
fn echo_config(out: &PathBuf, rc: &RunConfig) -> Result<(), Error> {
    let toml = toml::to_string_pretty(rc).map_err(|e| usage_err(e.to_string()))?;
    write_text(&out.join("config.toml"), &toml)
}

fn cmd_convert(a: &ConvertArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&a.input)?;
    if a.channels == 0 || !(a.sample_rate > 0.0) {
        return Err(usage_err("convert needs --channels >= 1 and --sample-rate > 0"));
    }
    let mut data: Vec<f32> = Vec::new();
    let mut labels: Vec<u16> = Vec::new();
    let mut n_samples = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let label: u16 = fields
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| usage_err(format!("line {}: bad label", lineno + 1)))?;
        let row: Vec<f32> = fields
            .map(|f| f.trim().parse::<f32>())
            .collect::<Result<_, _>>()
            .map_err(|_| usage_err(format!("line {}: bad sample value", lineno + 1)))?;
        if row.len() % a.channels != 0 {
            return Err(usage_err(format!(
                "line {}: {} samples not divisible by {} channels",
                lineno + 1,
                row.len(),
                a.channels
            )));
        }
        let t = row.len() / a.channels;
        if n_samples == 0 {
            n_samples = t;
        } else if t != n_samples {
            return Err(usage_err(format!(
                "line {}: trial length {t} differs from {n_samples}",
                lineno + 1
            )));
        }
        labels.push(label);
        data.extend_from_slice(&row);
    }
    if labels.is_empty() {
        return Err(usage_err("no trials in input CSV"));
    }
    let n_trials = labels.len();
    let mut set = EpochSet::new(data, n_trials, a.channels, n_samples, labels, a.sample_rate)?;
    set.subject_id = a.subject_id.clone();
    write_epoch_file(&set, &a.out)?;
    println!(
        "wrote {} trials x {} channels x {} samples to {}",
        n_trials,
        a.channels,
        n_samples,
        a.out.display()
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Error> {
    if a.classes == 0 {
        return Err(usage_err("--classes must be >= 1"));
    }
    let spec = SynthSpec {
        frequencies_hz: (0..a.classes).map(|i| 9.25 + 0.5 * i as f64).collect(),
        n_channels: a.channels,
        sample_rate_hz: a.sample_rate,
        trial_length_s: a.trial_length,
        trials_per_class: a.trials,
        n_subjects: a.subjects,
        n_harmonics: a.harmonics,
        snr_db: a.snr,
        seed: a.seed,
    };
    let manifest = generate_dataset(&spec, &a.out)?;
    println!(
        "wrote {} subjects x {} trials ({} classes, {} dB SNR) under {}",
        a.subjects,
        a.classes * a.trials,
        a.classes,
        a.snr,
        manifest.display()
    );
    Ok(())
}

/// Loads every subject in a manifest.
fn load_all(manifest_path: &Path, manifest: &DatasetManifest) -> Result<Vec<EpochSet>, Error> {
    manifest
        .subjects
        .iter()
        .map(|s| manifest.load_subject(manifest_path, s))
        .collect()
}

fn cmd_train(a: &TrainArgs) -> Result<(), Error> {
    let mut rc: RunConfig = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| usage_err(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &a.data {
        rc.data = Some(v.clone());
    }
    if let Some(v) = &a.out {
        rc.output = Some(v.clone());
    }
    if let Some(v) = a.window {
        rc.train.window_length_s = v;
    }
    if let Some(v) = a.onset {
        rc.train.onset_s = v;
    }
    if let Some(v) = a.lr {
        rc.train.lr = v;
    }
    if let Some(v) = a.batch {
        rc.train.batch_size = v;
    }
    if let Some(v) = a.epochs {
        rc.train.max_epochs = v;
    }
    if let Some(v) = a.weight_decay {
        rc.train.weight_decay = v;
    }
    if let Some(v) = a.patience {
        rc.train.patience = v;
    }
    if let Some(v) = a.seed {
        rc.train.seed = v;
    }
    if a.no_asdm {
        rc.train.use_asdm = false;
    }
    if a.no_augment {
        rc.train.use_augment = false;
    }
    rc.train.validate()?;
    let data = rc
        .data
        .clone()
        .ok_or_else(|| usage_err("no dataset: pass --data or set `data` in the config"))?;
    let out = rc.output.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    echo_config(&out, &rc)?;

    let manifest = DatasetManifest::load(&data)?;
    let sets = load_all(&data, &manifest)?;
    let fs = manifest.sample_rate_hz;
    let n_samples = (rc.train.window_length_s * fs).round() as usize;
    let mut cfg = ModelConfig::new(manifest.channel_names.len(), n_samples, manifest.n_classes());
    rc.model.apply(&mut cfg);

    let mut splits = loso_splits(&manifest)?;
    if let Some(limit) = a.subjects_limit {
        splits.truncate(limit.max(1));
    }
    let mut accs: Vec<(String, f64)> = Vec::new();
    for split in &splits {
        let outcome = fit(split, &sets, &cfg, &rc.train)?;
        let mut log_csv = String::from("epoch,train_loss,val_loss,val_acc,theta\n");
        for e in &outcome.log {
            log_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_acc, e.theta
            ));
        }
        write_text(&out.join(format!("log_{}.csv", split.test_subject)), &log_csv)?;
        let mut ckpt_cfg = cfg.clone();
        ckpt_cfg.use_asdm = rc.train.use_asdm;
        ckpt_cfg.use_augment = rc.train.use_augment;
        save_checkpoint(
            &out.join(format!("ckpt_{}.ssvd", split.test_subject)),
            &ckpt_cfg,
            &outcome.params,
        )?;
        let test = sets
            .iter()
            .find(|s| s.subject_id == split.test_subject)
            .ok_or_else(|| usage_err(format!("subject {} missing", split.test_subject)))?;
        let report = evaluate(&outcome.params, &ckpt_cfg, test, &rc.train)?;
        let acc = report.mean_accuracy;
        println!(
            "split {}: best epoch {}, test accuracy {:.4}",
            split.test_subject, outcome.best_epoch, acc
        );
        accs.push((split.test_subject.clone(), acc));
    }
    let n = accs.len() as f64;
    let mean = accs.iter().map(|(_, a)| a).sum::<f64>() / n;
    let var = accs.iter().map(|(_, a)| (a - mean) * (a - mean)).sum::<f64>() / n;
    let mut summary = String::from("subject,accuracy\n");
    for (id, acc) in &accs {
        summary.push_str(&format!("{id},{acc}\n"));
    }
    summary.push_str(&format!("mean,{mean}\nstd,{}\n", var.sqrt()));
    write_text(&out.join("summary.csv"), &summary)?;
    println!("mean accuracy {:.4} +/- {:.4} over {} splits", mean, var.sqrt(), accs.len());
    Ok(())
}

/// Per-subject accuracies for one method, plus pooled labels/predictions.
fn score_method(
    method: &str,
    manifest_path: &Path,
    manifest: &DatasetManifest,
    sets: &[EpochSet],
    a: &EvalArgs,
) -> Result<(Vec<(String, f64)>, MetricsReport), Error> {
    let n_classes = manifest.n_classes();
    match method {
        "model" => {
            let dir = a
                .checkpoints
                .as_ref()
                .ok_or_else(|| usage_err("method=model needs --checkpoints"))?;
            let mut accs = Vec::new();
            let mut pooled: Option<MetricsReport> = None;
            for set in sets {
                let (cfg, params) = load_checkpoint(&dir.join(format!("ckpt_{}.ssvd", set.subject_id)))?;
                let tc = TrainConfig {
                    window_length_s: cfg.n_samples as f64 / manifest.sample_rate_hz,
                    onset_s: a.onset,
                    ..TrainConfig::default()
                };
                let report = evaluate(&params, &cfg, set, &tc)?;
                accs.push((set.subject_id.clone(), report.mean_accuracy));
                pooled = Some(report);
            }
            let last = pooled.ok_or_else(|| usage_err("manifest lists no subjects"))?;
            Ok((accs, last))
        }
        "cca" | "fbcca" => {
            let _ = manifest_path;
            let mut accs = Vec::new();
            let mut labels = Vec::new();
            let mut preds = Vec::new();
            let fb = FilterBankSpec::default();
            for set in sets {
                let cropped = set.extract_window(a.onset, a.window)?;
                let bank = ReferenceBank::new(
                    &manifest.stimulus_frequencies_hz,
                    cropped.n_samples,
                    manifest.sample_rate_hz,
                    a.harmonics,
                )?;
                let mut correct = 0usize;
                for t in 0..cropped.n_trials {
                    let x = cropped.trial_f64(t);
                    let pred = if method == "cca" {
                        cca_classify(&x, cropped.n_channels, &bank)?
                    } else {
                        fbcca_classify(&x, cropped.n_channels, &bank, &fb)?
                    };
                    labels.push(cropped.labels[t] as usize);
                    preds.push(pred);
                    if pred == cropped.labels[t] as usize {
                        correct += 1;
                    }
                }
                accs.push((set.subject_id.clone(), correct as f64 / cropped.n_trials as f64));
            }
            let cm = ssvepkit::eval::confusion(&labels, &preds, n_classes)?;
            let report = MetricsReport::from_subject_accuracies(accs.clone(), cm, None, 0);
            Ok((accs, report))
        }
        other => Err(usage_err(format!("unknown method `{other}`"))),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Error> {
    let manifest = DatasetManifest::load(&a.data)?;
    let sets = load_all(&a.data, &manifest)?;
    std::fs::create_dir_all(&a.out)?;
    let methods: Vec<String> = match &a.compare {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => vec![a.method.clone()],
    };
    if methods.is_empty() {
        return Err(usage_err("--compare list is empty"));
    }
    let mut table: Vec<(String, Vec<f64>)> = Vec::new();
    for method in &methods {
        let (accs, report) = score_method(method, &a.data, &manifest, &sets, a)?;
        write_text(&a.out.join(format!("accuracy_{method}.csv")), &report.accuracy_csv())?;
        write_text(
            &a.out.join(format!("confusion_{method}.csv")),
            &report.confusion.to_csv(),
        )?;
        if let Some(roc) = &report.roc {
            write_text(&a.out.join(format!("roc_{method}.csv")), &roc.to_csv())?;
        }
        let n = accs.len() as f64;
        let mean = accs.iter().map(|(_, v)| v).sum::<f64>() / n;
        println!("{method}: mean accuracy {mean:.4} over {} subjects", accs.len());
        table.push((method.clone(), accs.into_iter().map(|(_, v)| v).collect()));
    }
    if a.wilcoxon {
        if table.len() < 2 {
            return Err(usage_err("--wilcoxon needs --compare with >= 2 methods"));
        }
        let stars = significance_table(&table, 0)?;
        write_text(&a.out.join("significance.txt"), &stars)?;
        println!("{stars}");
    }
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<(), Error> {
    let (cfg, params) = load_checkpoint(&a.checkpoint)?;
    let set = read_epoch_file(&a.input)?;
    let window_s = cfg.n_samples as f64 / set.sample_rate_hz;
    let cropped = set.extract_window(a.onset, window_s)?;
    if cropped.n_channels != cfg.n_channels {
        return Err(usage_err(format!(
            "checkpoint expects {} channels, file has {}",
            cfg.n_channels, cropped.n_channels
        )));
    }
    let mut csv = String::from("trial,predicted,label\n");
    let mut correct = 0usize;
    for t in 0..cropped.n_trials {
        let x = cropped.trial_f64(t);
        let pred = predict(&x, 1, &params, &cfg)?[0];
        if pred == cropped.labels[t] as usize {
            correct += 1;
        }
        csv.push_str(&format!("{t},{pred},{}\n", cropped.labels[t]));
    }
    std::fs::create_dir_all(&a.out)?;
    write_text(&a.out.join("predictions.csv"), &csv)?;
    println!(
        "labeled {} trials; agreement with stored labels {:.4}",
        cropped.n_trials,
        correct as f64 / cropped.n_trials.max(1) as f64
    );
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<(), Error> {
    use rand::{Rng, SeedableRng};
    if a.samples == 0 {
        return Err(usage_err("--samples must be >= 1"));
    }
    let (cfg, params) = load_checkpoint(&a.checkpoint)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let trials: Vec<Vec<f64>> = (0..a.samples)
        .map(|_| {
            (0..cfg.n_channels * cfg.n_samples)
                .map(|_| rng.gen::<f64>() - 0.5)
                .collect()
        })
        .collect();
    let stats = latency_bench(&params, &cfg, &trials, 10)?;
    let count = ssvepkit::model::param_count(&cfg);
    let report = format!(
        "parameters: {count}\nbytes: {}\nsamples: {}\nmean_ms: {:.3}\np95_ms: {:.3}\n",
        count * 4,
        a.samples,
        stats.mean_ms,
        stats.p95_ms
    );
    std::fs::create_dir_all(&a.out)?;
    write_text(&a.out.join("bench.txt"), &report)?;
    print!("{report}");
    Ok(())
}
