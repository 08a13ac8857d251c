use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use heatseq_core::evaluation::{evaluate_checkpoint, format_metrics_table, predict_all};
use heatseq_core::io::{format_timestamp, read_instances, read_raw_csv, write_instances, write_raw_csv, InstanceSet};
use heatseq_core::model::{Checkpoint, ModelConfig, SequenceInstance, Variant};
use heatseq_core::preprocessing::{preprocess, LabelMode, Partition, PreprocessConfig, WindowConfig};
use heatseq_core::synthgen::{generate, GeneratorConfig, Separability};
use heatseq_core::training::{make_sequences, train_with_progress, validation_split, StopReason, TrainConfig};
use heatseq_core::RiskLevel;

use crate::manifest::ManifestBuilder;
use crate::{EvaluateArgs, GenerateArgs, Global, PartitionArg, PredictArgs, PreprocessArgs, TrainArgs};

/// Failure that should exit with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn load_instances(path: &Path) -> Result<InstanceSet> {
    read_instances(open(path)?).with_context(|| format!("reading {}", path.display()))
}

/// Sequences of `len` windows whose final window is in a selected partition.
/// Earlier windows serve as context whatever their partition.
pub fn sequences_for(set: &InstanceSet, len: usize, keep: impl Fn(Partition) -> bool) -> Result<Vec<SequenceInstance>> {
    if set.windows.is_empty() {
        return Ok(Vec::new());
    }
    let build = make_sequences(&set.windows, set.window_len, len)?;
    Ok(build
        .sequences
        .into_iter()
        .zip(build.last_window)
        .filter(|(_, i)| keep(set.partition[*i]))
        .map(|(s, _)| s)
        .collect())
}

pub fn generate_cmd(g: &Global, a: &GenerateArgs, argv: &[String]) -> Result<()> {
    let separability: Separability = a.separability.parse().map_err(|e| usage(format!("{e}")))?;
    let mut cfg = GeneratorConfig::new(separability, g.seed);
    cfg.workers = a.workers as usize;
    cfg.days = a.days as usize;
    cfg.sample_interval = a.interval;
    cfg.event_rate = a.event_rate;
    cfg.ramp_minutes = a.ramp_minutes;
    if let Some(r) = a.missing_rate {
        cfg.missing_rate = r;
    }
    if let Some(r) = a.outlier_rate {
        cfg.outlier_rate = r;
    }
    if a.zero_noise {
        cfg = cfg.zero_noise();
    }
    if let Some(b) = &a.class_balance {
        cfg.class_balance = Some(parse_balance(b)?);
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let out = generate(&cfg)?;
    let dir = &g.out_dir;
    let raw = dir.join("raw.csv");
    let events = dir.join("events.csv");
    let reference = dir.join("reference.csv");
    let mut w = create(&raw)?;
    write_raw_csv(&mut w, &out.samples)?;
    w.flush()?;
    let mut w = create(&events)?;
    out.script.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&reference)?;
    writeln!(w, "worker_id,window_start,label")?;
    for r in &out.reference {
        writeln!(w, "{},{},{}", r.worker_id, format_timestamp(r.window_start as f64), r.label)?;
    }
    w.flush()?;

    let mut m = ManifestBuilder::new("generate", argv, g.seed);
    m.config(&cfg)?;
    for p in [&raw, &events, &reference] {
        m.output(p)?;
    }
    let manifest = m.write(dir.join("generate.manifest.json"))?;
    println!(
        "generated {} samples for {} workers × {} days, {} events, {} missing, {} outliers",
        out.samples.len(),
        cfg.workers,
        cfg.days,
        out.script.events.len(),
        out.injected_missing,
        out.injected_outliers
    );
    println!("wrote {}, {}, {}, {}", raw.display(), events.display(), reference.display(), manifest.display());
    Ok(())
}

fn parse_balance(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("class balance '{text}' must be three comma-separated numbers")))?;
    match parts.as_slice() {
        [l, m, h] if parts.iter().all(|x| *x > 0.0) => Ok([*l, *m, *h]),
        _ => Err(usage(format!("class balance '{text}' must be three positive numbers"))),
    }
}

#[derive(Serialize)]
struct PreprocessRecord<'a> {
    config: &'a PreprocessConfig,
    features: Vec<String>,
    diagnostics: &'a heatseq_core::preprocessing::pipeline::Diagnostics,
    train_windows: usize,
    test_windows: usize,
}

pub fn preprocess_cmd(g: &Global, a: &PreprocessArgs, argv: &[String]) -> Result<()> {
    let label_mode: LabelMode = a.label_mode.parse().map_err(|e| usage(format!("{e}")))?;
    let cfg = PreprocessConfig {
        label_mode,
        window: WindowConfig {
            window_len: a.window as i64,
            min_coverage: a.min_coverage,
        },
        max_gap: a.max_gap,
        z_threshold: a.z_threshold,
        smoother_half_width: a.smoother_half_width,
        smoother_degree: a.smoother_degree,
        include_stress: a.include_stress,
        include_environment: a.include_environment,
        train_ratio: a.train_ratio,
        seed: g.seed,
    };
    let samples = read_raw_csv(open(&a.input)?).with_context(|| format!("reading {}", a.input.display()))?;
    let out = preprocess(&samples, &cfg)?;
    let set = InstanceSet::from_output(&out, label_mode, cfg.window.window_len);

    let path = a.out.clone().unwrap_or_else(|| g.out_dir.join("instances.csv"));
    let mut w = create(&path)?;
    write_instances(&mut w, &set)?;
    w.flush()?;
    let norm_path = path.with_file_name("normalizer.json");
    fs::write(&norm_path, serde_json::to_string_pretty(&out.normalizer)? + "\n")
        .with_context(|| format!("cannot write {}", norm_path.display()))?;

    let d = &out.diagnostics;
    let train_windows = out.partition.iter().filter(|p| **p == Partition::Train).count();
    let record = PreprocessRecord {
        config: &cfg,
        features: out.feature_names(),
        diagnostics: d,
        train_windows,
        test_windows: out.windows.len() - train_windows,
    };
    let mut m = ManifestBuilder::new("preprocess", argv, g.seed);
    m.config(&record)?;
    m.input(&a.input)?;
    m.output(&path)?;
    m.output(&norm_path)?;
    let manifest = m.write(path.with_file_name("preprocess.manifest.json"))?;

    let mut counts = [0usize; RiskLevel::COUNT];
    for w in &out.windows {
        counts[w.label.unwrap().index()] += 1;
    }
    println!(
        "{} windows kept ({} train, {} test); {} excluded, {} unlabeled; {} of {} series skipped",
        d.windows_kept,
        train_windows,
        record.test_windows,
        d.windows_excluded,
        d.windows_unlabeled,
        d.series_skipped,
        d.series
    );
    println!(
        "labels ({label_mode}): low {}, moderate {}, high {}",
        counts[0], counts[1], counts[2]
    );
    println!("wrote {}, {}, {}", path.display(), norm_path.display(), manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    seq_len: usize,
    validation_fraction: f64,
    train_sequences: usize,
    validation_sequences: usize,
    stop_reason: String,
    best_epoch: usize,
}

pub fn train_cmd(g: &Global, a: &TrainArgs, argv: &[String]) -> Result<bool> {
    let variant: Variant = a.variant.parse().map_err(|e| usage(format!("{e}")))?;
    let mut tc = TrainConfig::for_variant(variant);
    tc.seed = g.seed;
    if let Some(e) = a.epochs {
        tc.max_epochs = e;
    }
    tc.learning_rate = a.learning_rate;
    tc.batch_size = a.batch_size;
    tc.patience = a.patience;
    tc.dropout = a.dropout;
    tc.validate().map_err(|e| usage(e.to_string()))?;
    if !(a.validation_fraction > 0.0 && a.validation_fraction < 1.0) {
        return Err(usage("validation fraction must lie in (0, 1)"));
    }

    let set = load_instances(&a.instances)?;
    let pool = sequences_for(&set, a.seq_len, |p| p == Partition::Train)?;
    if pool.is_empty() {
        bail!(
            "no training sequences of length {} in {}",
            a.seq_len,
            a.instances.display()
        );
    }
    let (train_set, val_set) = validation_split(&pool, a.validation_fraction, g.seed)?;
    let mut model = ModelConfig::new(variant, set.feature_dim()).with_hidden(a.hidden);
    model.layers = a.layers;
    if let Some(d) = a.attention_dim {
        model.attention_dim = d;
    }
    model.validate().map_err(|e| usage(e.to_string()))?;
    eprintln!(
        "training {variant}: {} train / {} validation sequences, T={}, D={}, H={}, up to {} epochs",
        train_set.len(),
        val_set.len(),
        a.seq_len,
        model.input_dim,
        model.hidden,
        tc.max_epochs
    );

    let outcome = train_with_progress(model, &train_set, &val_set, &tc, |r| {
        eprintln!(
            "epoch {:>3}  train {:.5}  val {:.5}  val_acc {:.4}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.seconds
        );
    })?;

    let dir = &g.out_dir;
    let ck_path = a.checkpoint.clone().unwrap_or_else(|| dir.join(format!("{variant}.ckpt")));
    let log_path = ck_path.with_extension("trainlog.csv");
    let ck = Checkpoint::new(outcome.params, g.seed, a.seq_len);
    if let Some(parent) = ck_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    ck.save(&ck_path)?;
    let mut w = create(&log_path)?;
    outcome.log.write_csv(&mut w)?;
    w.flush()?;

    let record = TrainRecord {
        model: &ck.params.config,
        train: &tc,
        seq_len: a.seq_len,
        validation_fraction: a.validation_fraction,
        train_sequences: train_set.len(),
        validation_sequences: val_set.len(),
        stop_reason: outcome.log.stop_reason.to_string(),
        best_epoch: outcome.log.best_epoch,
    };
    let mut m = ManifestBuilder::new("train", argv, g.seed);
    m.config(&record)?;
    m.input(&a.instances)?;
    m.output(&ck_path)?;
    m.timed_output(&log_path)?;
    let manifest = m.write(ck_path.with_extension("manifest.json"))?;

    println!(
        "{variant}: {} epochs, stop {}, best epoch {}, checkpoint {}",
        outcome.log.epochs.len(),
        outcome.log.stop_reason,
        outcome.log.best_epoch,
        ck.id()
    );
    println!("wrote {}, {}, {}", ck_path.display(), log_path.display(), manifest.display());
    if let StopReason::Diverged(msg) = &outcome.log.stop_reason {
        eprintln!("error: training diverged ({msg}); kept the best checkpoint");
        return Ok(false);
    }
    Ok(true)
}

fn partition_filter(p: PartitionArg) -> impl Fn(Partition) -> bool {
    move |x| match p {
        PartitionArg::All => true,
        PartitionArg::Train => x == Partition::Train,
        PartitionArg::Test => x == Partition::Test,
    }
}

pub fn evaluate_cmd(g: &Global, a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let set = load_instances(&a.test)?;
    if set.feature_dim() != ck.params.config.input_dim {
        bail!(
            "checkpoint expects {} features per window but {} has {}",
            ck.params.config.input_dim,
            a.test.display(),
            set.feature_dim()
        );
    }
    let seqs = sequences_for(&set, ck.seq_len, partition_filter(a.partition))?;
    let report = evaluate_checkpoint(&ck, &seqs)?;

    let dir = a.out.clone().unwrap_or_else(|| g.out_dir.clone());
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let report_path = dir.join("report.json");
    let roc_path = dir.join("roc_points.csv");
    fs::write(&report_path, report.to_json()? + "\n").with_context(|| format!("cannot write {}", report_path.display()))?;
    let mut w = create(&roc_path)?;
    report.write_roc_csv(&mut w)?;
    w.flush()?;

    let mut m = ManifestBuilder::new("evaluate", argv, g.seed);
    m.config(serde_json::json!({
        "checkpoint_id": report.checkpoint_id,
        "variant": report.variant,
        "seq_len": ck.seq_len,
        "partition": format!("{:?}", a.partition).to_lowercase(),
        "instances": report.instances,
    }))?;
    m.input(&a.checkpoint)?;
    m.input(&a.test)?;
    m.output(&report_path)?;
    m.output(&roc_path)?;
    let manifest = m.write(dir.join("evaluate.manifest.json"))?;

    println!(
        "{} on {} sequences (checkpoint {})",
        report.variant, report.instances, report.checkpoint_id
    );
    println!("confusion matrix (rows actual, columns predicted: low moderate high)");
    for (c, row) in RiskLevel::ALL.iter().zip(report.confusion_matrix.counts) {
        println!("{:<10} {:>8} {:>8} {:>8}", c.name(), row[0], row[1], row[2]);
    }
    print!("{}", format_metrics_table(&report.metrics));
    for c in &report.roc.curves {
        match c.auc {
            Some(v) => println!("auc {:<9} {v:.4}", c.class.name()),
            None => println!("auc {:<9} undefined", c.class.name()),
        }
    }
    match report.roc.macro_auc {
        Some(v) => println!("macro auc {v:.4}"),
        None => println!("macro auc undefined"),
    }
    println!("wrote {}, {}, {}", report_path.display(), roc_path.display(), manifest.display());
    Ok(())
}

pub fn predict_cmd(g: &Global, a: &PredictArgs, argv: &[String]) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let empty = fs::metadata(&a.input)
        .with_context(|| format!("cannot open {}", a.input.display()))?
        .len()
        == 0;
    let seqs = if empty {
        Vec::new()
    } else {
        let set = load_instances(&a.input)?;
        if !set.windows.is_empty() && set.feature_dim() != ck.params.config.input_dim {
            bail!(
                "checkpoint expects {} features per window but {} has {}",
                ck.params.config.input_dim,
                a.input.display(),
                set.feature_dim()
            );
        }
        sequences_for(&set, ck.seq_len, partition_filter(a.partition))?
    };
    let has_attention = ck.params.config.variant == Variant::LstmAttention;
    let explain = a.explain && has_attention;
    if a.explain && !has_attention {
        eprintln!(
            "warning: --explain needs an attention checkpoint; {} has none, attention weights omitted",
            ck.params.config.variant
        );
    }
    let preds = predict_all(&ck, &seqs)?;

    let mut sink: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    if !preds.is_empty() {
        let mut header = "worker_id,window_start,label,p_low,p_mod,p_high".to_string();
        if explain {
            for t in 1..=ck.seq_len {
                header.push_str(&format!(",a_{t}"));
            }
        }
        writeln!(sink, "{header}")?;
    }
    for (s, p) in seqs.iter().zip(&preds) {
        write!(
            sink,
            "{},{},{},{},{},{}",
            s.worker_id,
            format_timestamp(s.window_start as f64),
            p.label,
            p.probabilities[0],
            p.probabilities[1],
            p.probabilities[2]
        )?;
        if explain {
            for w in p.attention.as_deref().unwrap_or_default() {
                write!(sink, ",{w}")?;
            }
        }
        writeln!(sink)?;
    }
    sink.flush()?;
    drop(sink);

    if let Some(out) = &a.output {
        let mut m = ManifestBuilder::new("predict", argv, g.seed);
        m.config(serde_json::json!({
            "explain": explain,
            "seq_len": ck.seq_len,
            "partition": format!("{:?}", a.partition).to_lowercase(),
            "sequences": seqs.len(),
        }))?;
        m.input(&a.checkpoint)?;
        m.input(&a.input)?;
        m.output(out)?;
        m.write(manifest_path_for(out))?;
    }
    Ok(())
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
