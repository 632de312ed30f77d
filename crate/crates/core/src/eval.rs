//! ROC-AUC scoring and ablation runs.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::featureizer::{Dataset, Feature, FeatureSet, TimeLimits, TrainingWindow};
use crate::ingest::UserPartition;
use crate::model::{Model, ModelConfig, ModelSpec};
use crate::sessionizer::SessionizedSequence;
use crate::trainer::{self, EpochLog, TrainConfig};

/// Area under the ROC curve by the rank-sum method; tied scores share their
/// average rank, so a tie between a positive and a negative counts one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "auc",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("AUC scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Scores with their labels and owners.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub users: Vec<String>,
}

impl ScoredSet {
    pub fn score(model: &Model<f32>, windows: &[TrainingWindow]) -> Result<Self> {
        Ok(Self {
            scores: model.predict(windows)?,
            labels: windows.iter().map(|w| w.target_label).collect(),
            users: windows.iter().map(|w| w.user_id.clone()).collect(),
        })
    }

    pub fn auc(&self) -> Result<f64> {
        auc(&self.scores, &self.labels)
    }

    /// Mean per-user AUC over users that have both classes, with the number
    /// of users it averages.
    pub fn macro_auc(&self) -> Result<(f64, usize)> {
        let mut by_user: BTreeMap<&str, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
        for ((s, &l), u) in self.scores.iter().zip(&self.labels).zip(&self.users) {
            let e = by_user.entry(u).or_default();
            e.0.push(*s);
            e.1.push(l);
        }
        let per: Vec<f64> = by_user.values().filter_map(|(s, l)| auc(s, l).ok()).collect();
        if per.is_empty() {
            return Err(Error::UndefinedMetric("no user has both classes".into()));
        }
        Ok((per.iter().sum::<f64>() / per.len() as f64, per.len()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub auc: f64,
    pub windows: usize,
    pub positives: usize,
    pub macro_auc: Option<(f64, usize)>,
}

pub fn evaluate(model: &Model<f32>, windows: &[TrainingWindow], per_user: bool) -> Result<Evaluation> {
    let set = ScoredSet::score(model, windows)?;
    Ok(Evaluation {
        auc: set.auc()?,
        windows: set.labels.len(),
        positives: set.labels.iter().filter(|&&l| l != 0).count(),
        macro_auc: if per_user { set.macro_auc().ok() } else { None },
    })
}

/// One configuration of an ablation study.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub features: FeatureSet,
    pub seq_size: usize,
}

/// Cumulative feature additions starting from the base set.
pub fn feature_ladder(seq_size: usize) -> Vec<Variant> {
    use Feature::*;
    let mut enc = vec![QuestionId, Category, Position];
    let mut dec = vec![Correctness, Position];
    let steps: [(&str, &[Feature], &[Feature]); 5] = [
        ("base", &[], &[]),
        ("+st", &[StartTime], &[StartTime]),
        ("+iot", &[], &[OnTime]),
        ("+et", &[], &[ElapsedTime]),
        ("+sp,d", &[SessionPosition], &[SessionPosition, Dropout]),
    ];
    steps
        .iter()
        .map(|(label, e, d)| {
            enc.extend_from_slice(e);
            dec.extend_from_slice(d);
            Variant {
                label: label.to_string(),
                features: FeatureSet::new(enc.clone(), dec.clone()).expect("valid feature sides"),
                seq_size,
            }
        })
        .collect()
}

/// The full feature set at each sequence size.
pub fn seq_size_sweep(sizes: &[usize]) -> Vec<Variant> {
    sizes
        .iter()
        .map(|&n| Variant {
            label: format!("seq={n}"),
            features: FeatureSet::full(),
            seq_size: n,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub best_epoch: usize,
    pub val_auc: Option<f64>,
    pub test_auc: f64,
    pub history: Vec<EpochLog>,
}

/// Trains and tests every variant on the same user split.
pub fn run_ablation(
    sequences: &[SessionizedSequence],
    partition: &UserPartition,
    limits: &TimeLimits,
    model: &ModelConfig,
    training: &TrainConfig,
    variants: &[Variant],
    mut progress: impl FnMut(&Variant, &EpochLog),
) -> Result<Vec<AblationRow>> {
    let mut datasets: BTreeMap<usize, Dataset> = BTreeMap::new();
    let mut rows = Vec::new();
    for v in variants {
        let ds = match datasets.entry(v.seq_size) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(Dataset::build(sequences, partition, limits.clone(), v.seq_size)?),
        };
        let ds = &*ds;
        let config = ModelConfig {
            seq_size: v.seq_size,
            ..model.clone()
        };
        let spec = ModelSpec::new(config, v.features.clone(), ds.vocab.sizes(v.seq_size))?;
        let init = trainer::init_params(&spec, training.seed);
        let mut obs = |log: &EpochLog| progress(v, log);
        let trained = trainer::train(&spec, init, &ds.train, &ds.validation, training, &mut obs)?;
        let test = evaluate(&trained.model, &ds.test, false)?;
        rows.push(AblationRow {
            variant: v.clone(),
            best_epoch: trained.best_epoch,
            val_auc: trained.history[trained.best_epoch - 1].val_auc,
            test_auc: test.auc,
            history: trained.history,
        });
    }
    Ok(rows)
}

pub fn write_ablation_table<W: Write>(rows: &[AblationRow], mut out: W) -> Result<()> {
    writeln!(out, "variant\tseq_size\tfeatures\tbest_epoch\tval_auc\ttest_auc")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.4}",
            r.variant.label,
            r.variant.seq_size,
            r.variant.features,
            r.best_epoch,
            r.val_auc.map_or("nan".into(), |a| format!("{a:.4}")),
            r.test_auc
        )?;
    }
    Ok(())
}

pub fn write_ablation_curves<W: Write>(rows: &[AblationRow], mut out: W) -> Result<()> {
    writeln!(out, "variant,epoch,train_loss,val_auc,lr")?;
    for r in rows {
        for e in &r.history {
            let auc = e.val_auc.map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
            writeln!(out, "{},{},{:.6},{},{:.6e}", r.variant.label, e.epoch, e.train_loss, auc, e.lr)?;
        }
    }
    Ok(())
}
