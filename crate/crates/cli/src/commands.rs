use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use das_core::checkpoint::{create, write_text, Checkpoint};
use das_core::eval::{self, feature_ladder, seq_size_sweep, ScoredSet};
use das_core::featureizer::{windows_for, Dataset, TimeLimits};
use das_core::ingest::{read_log_file, split_users, write_log, ElapsedUnit, ParsedLog, TimestampFormat, UserPartition};
use das_core::sessionizer::{gap_histogram, session_stats, sessionize, write_gap_histogram, write_sessionized};
use das_core::synthgen::{generate, SynthConfig};
use das_core::trainer::{self, write_curves, EpochLog};
use das_core::{Error, Model, ModelSpec, Result, SessionizedSequence};

use crate::config::{EvalSplit, RunConfig, Sweep};

pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const SPLIT_FILE: &str = "split.txt";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Keys a checkpoint remembers so later commands read logs the same way.
const INHERITED: &[&str] = &["threshold_secs", "elapsed_unit"];

fn prepare_out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.require_out_dir()?;
    write_text(&dir.join(RUN_CONFIG_FILE), &cfg.to_text())?;
    Ok(dir)
}

fn load_log(cfg: &RunConfig) -> Result<ParsedLog> {
    let path = cfg.require_input()?;
    let log = read_log_file(path, &cfg.schema())?;
    if let Some(first) = log.rejections.first() {
        eprintln!(
            "warning: skipped {} row(s) of {}; first at line {}: {}",
            log.rejections.len(),
            path.display(),
            first.line,
            first.reason
        );
    }
    if log.records.is_empty() {
        return Err(Error::Data(format!("{} has no usable rows", path.display())));
    }
    Ok(log)
}

fn load_sequences(cfg: &RunConfig) -> Result<(ParsedLog, Vec<SessionizedSequence>)> {
    let log = load_log(cfg)?;
    let seqs = sessionize(&log.records, cfg.threshold_secs)?;
    Ok((log, seqs))
}

fn partition(cfg: &RunConfig, seqs: &[SessionizedSequence]) -> Result<UserPartition> {
    split_users(seqs.iter().map(|s| s.user_id.as_str()), cfg.split, cfg.split_seed)
}

fn progress(label: &str, e: &EpochLog) {
    let auc = e.val_auc.map_or_else(|| "nan".to_string(), |a| format!("{a:.4}"));
    eprintln!(
        "{label}epoch {:>3}  loss {:.5}  val_auc {auc}  lr {:.3e}  steps {}",
        e.epoch, e.train_loss, e.lr, e.steps
    );
}

fn meta(cfg: &RunConfig) -> BTreeMap<String, String> {
    ["threshold_secs", "elapsed_unit", "split", "split_seed", "seed", "preset"]
        .iter()
        .filter_map(|&k| Some((k.to_string(), cfg.value(k)?)))
        .collect()
}

pub fn sessionize_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = prepare_out_dir(cfg)?;
    let (log, seqs) = load_sequences(cfg)?;
    let rows = create(&dir.join("sessionized.csv"))?;
    write_sessionized(&seqs, rows, log.timestamp_format, cfg.elapsed_unit)?;
    let stats = session_stats(&seqs);
    stats.write_key_values(create(&dir.join("stats.txt"))?)?;
    write_gap_histogram(&gap_histogram(&seqs), create(&dir.join("gaps.tsv"))?)?;
    write!(out, "{stats}")?;
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let dir = prepare_out_dir(cfg)?;
    let (_, seqs) = load_sequences(cfg)?;
    let partition = partition(cfg, &seqs)?;
    let mut split = Vec::new();
    partition.write_manifest(&mut split)?;
    let split = String::from_utf8(split).expect("manifest is utf-8");
    write_text(&dir.join(SPLIT_FILE), &split)?;

    let ds = Dataset::build(&seqs, &partition, TimeLimits::default(), cfg.model.seq_size)?;
    ds.audit(&partition)?;
    eprintln!(
        "windows: train {}  validation {}  test {}",
        ds.train.len(),
        ds.validation.len(),
        ds.test.len()
    );
    let spec = ModelSpec::new(cfg.model.clone(), cfg.features.clone(), ds.vocab.sizes(cfg.model.seq_size))?;
    let init = trainer::init_params(&spec, cfg.train.seed);
    let mut meta = meta(cfg);
    let mut obs = |e: &EpochLog| progress("", e);
    let trained = match trainer::train(&spec, init, &ds.train, &ds.validation, &cfg.train, &mut obs) {
        Ok(t) => t,
        Err(Error::Diverged {
            epoch,
            last_good: Some(params),
        }) => {
            // keep whatever finished cleanly before reporting the failure
            meta.insert("diverged_at_epoch".into(), epoch.to_string());
            let ck = Checkpoint {
                model: Model::new(spec, *params)?,
                vocab: ds.vocab.clone(),
                limits: ds.limits.clone(),
                meta,
            };
            ck.save(&dir.join("checkpoint-last-good"))?;
            return Err(Error::Diverged { epoch, last_good: None });
        }
        Err(e) => return Err(e),
    };
    write_curves(&trained.history, create(&dir.join("curves.csv"))?)?;

    meta.insert("best_epoch".into(), trained.best_epoch.to_string());
    let ck = Checkpoint {
        model: trained.model,
        vocab: ds.vocab.clone(),
        limits: ds.limits.clone(),
        meta,
    };
    let ck_dir = dir.join(CHECKPOINT_DIR);
    ck.save(&ck_dir)?;
    write_text(&ck_dir.join(SPLIT_FILE), &split)?;

    let test = ScoredSet::score(&ck.model, &ds.test)?;
    let test_auc = test.auc()?;
    let mut metrics = create(&dir.join("metrics.tsv"))?;
    writeln!(metrics, "best_epoch\tval_auc\ttest_auc")?;
    let val = trained.history[trained.best_epoch - 1]
        .val_auc
        .map_or("nan".into(), |a| format!("{a:.6}"));
    writeln!(metrics, "{}\t{val}\t{test_auc:.6}", trained.best_epoch)?;
    metrics.flush()?;
    writeln!(out, "best_epoch={}", trained.best_epoch)?;
    writeln!(out, "val_auc={val}")?;
    writeln!(out, "test_auc={test_auc:.6}")?;
    writeln!(out, "checkpoint={}", ck_dir.display())?;
    Ok(())
}

fn load_checkpoint(cfg: &mut RunConfig) -> Result<Checkpoint> {
    let ck = Checkpoint::load(cfg.require_checkpoint()?)?;
    cfg.inherit(&ck.meta, INHERITED)?;
    Ok(ck)
}

pub fn evaluate_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let mut cfg = cfg.clone();
    let ck = load_checkpoint(&mut cfg)?;
    let (_, seqs) = load_sequences(&cfg)?;
    let manifest = cfg.require_checkpoint()?.join(SPLIT_FILE);
    let chosen: Vec<SessionizedSequence> = match cfg.eval_split {
        EvalSplit::All => seqs,
        EvalSplit::Only(split) => {
            let file = fs::File::open(&manifest).map_err(|e| Error::File {
                path: manifest.clone(),
                source: e,
            })?;
            let partition = UserPartition::read_manifest(file)?;
            seqs.into_iter()
                .filter(|s| partition.split_of(&s.user_id) == Some(split))
                .collect()
        }
    };
    let windows = windows_for(&chosen, &ck.vocab, &ck.limits, ck.model.spec.config.seq_size)?;
    let result = eval::evaluate(&ck.model, &windows, true)?;
    let (macro_auc, macro_users) = result.macro_auc.unwrap_or((f64::NAN, 0));

    let table = format!(
        "split\tusers\twindows\tpositives\tauc\tmacro_auc\tmacro_users\n{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\n",
        cfg.eval_split,
        chosen.len(),
        result.windows,
        result.positives,
        result.auc,
        macro_auc,
        macro_users
    );
    if cfg.out_dir.is_some() {
        let dir = prepare_out_dir(&cfg)?;
        write_text(&dir.join("auc.tsv"), &table)?;
    }
    out.write_all(table.as_bytes())?;
    Ok(())
}

pub fn predict_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let mut cfg = cfg.clone();
    let ck = load_checkpoint(&mut cfg)?;
    let (log, seqs) = load_sequences(&cfg)?;
    let windows = windows_for(&seqs, &ck.vocab, &ck.limits, ck.model.spec.config.seq_size)?;
    let probs = ck.model.predict(&windows)?;
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "user_id,timestamp,question_id,dropout_probability")?;
    let rows = seqs.iter().flat_map(|s| &s.interactions);
    for (it, p) in rows.zip(&probs) {
        let r = &it.record;
        let ts = das_core::ingest::format_timestamp(r.timestamp, log.timestamp_format);
        writeln!(w, "{},{},{},{p:.6}", r.user_id, ts, r.question_id)?;
    }
    w.flush()?;
    Ok(())
}

pub fn ablate_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let dir = prepare_out_dir(cfg)?;
    let (_, seqs) = load_sequences(cfg)?;
    let partition = partition(cfg, &seqs)?;
    let variants = match cfg.sweep {
        Sweep::Features => feature_ladder(cfg.model.seq_size),
        Sweep::SeqSize => {
            let mut v = seq_size_sweep(&cfg.seq_sizes);
            for x in &mut v {
                x.features = cfg.features.clone();
            }
            v
        }
    };
    let rows = eval::run_ablation(
        &seqs,
        &partition,
        &TimeLimits::default(),
        &cfg.model,
        &cfg.train,
        &variants,
        |v, e| progress(&format!("[{}] ", v.label), e),
    )?;
    eval::write_ablation_table(&rows, create(&dir.join("ablation.tsv"))?)?;
    eval::write_ablation_curves(&rows, create(&dir.join("ablation_curves.csv"))?)?;
    eval::write_ablation_table(&rows, out)?;
    Ok(())
}

pub fn synth_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = prepare_out_dir(cfg)?;
    let synth = generate(&SynthConfig {
        users: cfg.users,
        seed: cfg.train.seed,
        ..SynthConfig::default()
    })?;
    write_log(&synth.records, create(&dir.join("log.csv"))?, TimestampFormat::DateTime, cfg.elapsed_unit)?;
    synth.write_truth(create(&dir.join("truth.csv"))?)?;
    writeln!(out, "users={}", cfg.users)?;
    writeln!(out, "interactions={}", synth.records.len())?;
    writeln!(out, "dropout_rate={:.6}", synth.truth.iter().filter(|t| t.dropout).count() as f64 / synth.truth.len() as f64)?;
    writeln!(out, "bayes_auc={:.6}", synth.bayes_auc()?)?;
    if cfg.elapsed_unit == ElapsedUnit::Seconds {
        eprintln!("note: elapsed_time is written in seconds; pass elapsed_unit=s when reading it back");
    }
    Ok(())
}
