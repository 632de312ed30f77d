//! Effective run configuration.
//!
//! Values are layered: preset defaults, then the config file, then `DAS_*`
//! environment variables, then command-line flags. Every layer uses the same
//! flat `key=value` vocabulary and unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use das_core::featureizer::FeatureSet;
use das_core::ingest::{ColumnSchema, ElapsedUnit, Split, SplitRatio};
use das_core::sessionizer::DEFAULT_THRESHOLD_SECS;
use das_core::{Error, ModelConfig, Result, TrainConfig};

pub const ENV_PREFIX: &str = "DAS_";

/// Keys in the order they are echoed.
pub const KEYS: &[&str] = &[
    "preset",
    "input",
    "checkpoint",
    "out_dir",
    "elapsed_unit",
    "threshold_secs",
    "split",
    "split_seed",
    "seq_size",
    "features",
    "layers",
    "d_model",
    "heads",
    "dropout",
    "epochs",
    "batch_size",
    "warmup_steps",
    "clip_norm",
    "seed",
    "oversample",
    "loss_positions",
    "eval_split",
    "sweep",
    "seq_sizes",
    "users",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset `{s}` (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

/// Which users `evaluate` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Only(Split),
    All,
}

impl FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(EvalSplit::All)
        } else {
            s.parse().map(EvalSplit::Only)
        }
    }
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalSplit::Only(s) => s.fmt(f),
            EvalSplit::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Features,
    SeqSize,
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" => Ok(Sweep::Features),
            "seq_size" => Ok(Sweep::SeqSize),
            _ => Err(Error::Config(format!("unknown sweep `{s}` (expected features or seq_size)"))),
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sweep::Features => "features",
            Sweep::SeqSize => "seq_size",
        })
    }
}

/// One `key=value` assignment and where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub source: String,
}

impl Setting {
    pub fn new(key: impl Into<String>, value: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
            source: source.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub input: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub elapsed_unit: ElapsedUnit,
    pub threshold_secs: u64,
    pub split: SplitRatio,
    pub split_seed: u64,
    pub features: FeatureSet,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval_split: EvalSplit,
    pub sweep: Sweep,
    pub seq_sizes: Vec<usize>,
    pub users: usize,
    /// Keys set by a file, the environment or a flag rather than the preset.
    pub explicit: BTreeSet<String>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (model, train) = match preset {
            Preset::Desk => (ModelConfig::desk(), TrainConfig::desk()),
            Preset::Paper => (ModelConfig::paper(), TrainConfig::paper()),
        };
        Self {
            preset,
            input: None,
            checkpoint: None,
            out_dir: None,
            elapsed_unit: ElapsedUnit::Millis,
            threshold_secs: DEFAULT_THRESHOLD_SECS,
            split: SplitRatio::default(),
            split_seed: 7,
            features: FeatureSet::full(),
            model,
            train,
            eval_split: EvalSplit::Only(Split::Test),
            sweep: Sweep::Features,
            seq_sizes: vec![1, 5, 10, 25],
            users: 2000,
            explicit: BTreeSet::new(),
        }
    }

    /// Starts from the preset named by the highest-precedence layer and
    /// applies every setting in order.
    pub fn resolve(layers: &[Vec<Setting>]) -> Result<Self> {
        let mut preset = Preset::Desk;
        for s in layers.iter().flatten() {
            if s.key == "preset" {
                preset = s.value.parse().map_err(|e| at(s, e))?;
            }
        }
        let mut cfg = Self::preset(preset);
        for s in layers.iter().flatten() {
            cfg.set(&s.key, &s.value).map_err(|e| at(s, e))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "preset" => self.preset = value.parse()?,
            "input" => self.input = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "out_dir" => self.out_dir = path(value),
            "elapsed_unit" => {
                self.elapsed_unit = match value {
                    "ms" => ElapsedUnit::Millis,
                    "s" => ElapsedUnit::Seconds,
                    _ => return Err(Error::Config(format!("elapsed_unit `{value}` must be ms or s"))),
                }
            }
            "threshold_secs" => self.threshold_secs = number(key, value)?,
            "split" => self.split = value.parse()?,
            "split_seed" => self.split_seed = number(key, value)?,
            "seq_size" => self.model.seq_size = number(key, value)?,
            "features" => self.features = FeatureSet::parse(value)?,
            "layers" => self.model.layers = number(key, value)?,
            "d_model" => self.model.d_model = number(key, value)?,
            "heads" => self.model.heads = number(key, value)?,
            "dropout" => self.model.dropout = number(key, value)?,
            "epochs" => self.train.epochs = number(key, value)?,
            "batch_size" => self.train.batch_size = number(key, value)?,
            "warmup_steps" => self.train.warmup_steps = number(key, value)?,
            "clip_norm" => self.train.clip_norm = number(key, value)?,
            "seed" => self.train.seed = number(key, value)?,
            "oversample" => self.train.oversample = number(key, value)?,
            "loss_positions" => self.train.loss_positions = value.parse()?,
            "eval_split" => self.eval_split = value.parse()?,
            "sweep" => self.sweep = value.parse()?,
            "seq_sizes" => {
                self.seq_sizes = value
                    .split(',')
                    .map(|v| number("seq_sizes", v.trim()))
                    .collect::<Result<_>>()?
            }
            "users" => self.users = number(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Adopts values recorded with a checkpoint for keys the user left alone.
    pub fn inherit(&mut self, meta: &BTreeMap<String, String>, keys: &[&str]) -> Result<()> {
        for &key in keys {
            if let (false, Some(v)) = (self.explicit.contains(key), meta.get(key)) {
                self.set(key, v)?;
                self.explicit.remove(key);
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> ColumnSchema {
        ColumnSchema {
            elapsed_unit: self.elapsed_unit,
            ..ColumnSchema::default()
        }
    }

    pub fn require_input(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| Error::Config("missing `input` (use --input)".into()))
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("missing `checkpoint` (use --checkpoint)".into()))
    }

    pub fn require_out_dir(&self) -> Result<&Path> {
        self.out_dir.as_deref().ok_or_else(|| Error::Config("missing `out_dir` (use --out-dir)".into()))
    }

    pub fn value(&self, key: &str) -> Option<String> {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "preset" => self.preset.to_string(),
            "input" => return p(&self.input),
            "checkpoint" => return p(&self.checkpoint),
            "out_dir" => return p(&self.out_dir),
            "elapsed_unit" => match self.elapsed_unit {
                ElapsedUnit::Millis => "ms".into(),
                ElapsedUnit::Seconds => "s".into(),
            },
            "threshold_secs" => self.threshold_secs.to_string(),
            "split" => self.split.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "seq_size" => self.model.seq_size.to_string(),
            "features" => self.features.to_string(),
            "layers" => self.model.layers.to_string(),
            "d_model" => self.model.d_model.to_string(),
            "heads" => self.model.heads.to_string(),
            "dropout" => self.model.dropout.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "warmup_steps" => self.train.warmup_steps.to_string(),
            "clip_norm" => self.train.clip_norm.to_string(),
            "seed" => self.train.seed.to_string(),
            "oversample" => self.train.oversample.to_string(),
            "loss_positions" => self.train.loss_positions.to_string(),
            "eval_split" => self.eval_split.to_string(),
            "sweep" => self.sweep.to_string(),
            "seq_sizes" => self.seq_sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "users" => self.users.to_string(),
            _ => return None,
        })
    }

    /// The effective configuration as a config file.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if let Some(v) = self.value(key) {
                let _ = writeln!(out, "{key}={v}");
            }
        }
        out
    }
}

fn at(s: &Setting, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", s.source)),
        other => other,
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn number<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

/// Reads a flat `key=value` file; `#` starts a comment line.
pub fn parse_file(text: &str, source: &str) -> Result<Vec<Setting>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{source} line {}: expected key=value", n + 1)))?;
        out.push(Setting::new(k.trim(), v.trim(), format!("{source} line {}", n + 1)));
    }
    Ok(out)
}

/// `DAS_THRESHOLD_SECS=60` becomes `threshold_secs=60`.
pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> Vec<Setting> {
    let mut out: Vec<Setting> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let key = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
            Some(Setting::new(key, v, format!("environment {k}")))
        })
        .collect();
    out.sort_by(|a, b| a.key.cmp(&b.key));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(pairs: &[(&str, &str)], source: &str) -> Vec<Setting> {
        pairs.iter().map(|(k, v)| Setting::new(*k, *v, source)).collect()
    }

    #[test]
    fn later_layers_win() {
        let file = layer(&[("seed", "1"), ("epochs", "3"), ("threshold_secs", "60")], "file");
        let env = layer(&[("seed", "2"), ("epochs", "4")], "env");
        let flags = layer(&[("seed", "3")], "flag");
        let cfg = RunConfig::resolve(&[file, env, flags]).unwrap();
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.train.epochs, 4);
        assert_eq!(cfg.threshold_secs, 60);
        assert_eq!(cfg.train.batch_size, TrainConfig::desk().batch_size);
    }

    #[test]
    fn preset_applies_before_any_override() {
        let file = layer(&[("d_model", "128")], "file");
        let flags = layer(&[("preset", "paper")], "flag");
        let cfg = RunConfig::resolve(&[file, flags]).unwrap();
        assert_eq!(cfg.model.d_model, 128);
        assert_eq!(cfg.model.layers, 4);
        assert_eq!(cfg.model.heads, 8);
        assert_eq!(cfg.train.warmup_steps, 6000);
        assert_eq!(cfg.model.dropout, 0.5);
        assert_eq!(cfg.model.seq_size, 5);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::resolve(&[layer(&[("learning_rat", "1")], "cfg.txt line 2")]).unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("learning_rat"), "{err}");
        assert!(err.to_string().contains("cfg.txt line 2"), "{err}");
    }

    #[test]
    fn bad_values_are_config_errors() {
        for (k, v) in [("seed", "x"), ("split", "1:2"), ("features", "id|q"), ("elapsed_unit", "min")] {
            let err = RunConfig::resolve(&[layer(&[(k, v)], "f")]).unwrap_err();
            assert_eq!(err.category(), "config", "{k}={v}: {err}");
        }
    }

    #[test]
    fn echoed_config_reproduces_itself() {
        let cfg = RunConfig::resolve(&[layer(
            &[
                ("preset", "paper"),
                ("input", "log.csv"),
                ("features", "id,c,p|r,p"),
                ("elapsed_unit", "s"),
                ("seq_sizes", "2,3"),
                ("eval_split", "all"),
                ("dropout", "0.25"),
            ],
            "f",
        )])
        .unwrap();
        let text = cfg.to_text();
        let again = RunConfig::resolve(&[parse_file(&text, "echo").unwrap()]).unwrap();
        assert_eq!(again.to_text(), text);
        assert_eq!(
            RunConfig {
                explicit: BTreeSet::new(),
                ..again
            },
            RunConfig {
                explicit: BTreeSet::new(),
                ..cfg
            }
        );
    }

    #[test]
    fn every_key_is_settable_and_echoed() {
        let cfg = RunConfig::preset(Preset::Desk);
        for key in KEYS {
            if let Some(v) = cfg.value(key) {
                RunConfig::preset(Preset::Desk).set(key, &v).unwrap();
            }
        }
    }

    #[test]
    fn env_names_map_to_keys() {
        let vars = [
            ("DAS_SEED".to_string(), "9".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let s = from_env(vars);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].key.as_str(), s[0].value.as_str()), ("seed", "9"));
    }

    #[test]
    fn file_syntax() {
        let s = parse_file("# comment\n\n seed = 4 \nepochs=2\n", "f").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].key, "seed");
        assert_eq!(s[0].value, "4");
        assert!(parse_file("seed 4", "f").is_err());
    }

    #[test]
    fn inherit_keeps_explicit_values() {
        let mut cfg = RunConfig::resolve(&[layer(&[("threshold_secs", "60")], "flag")]).unwrap();
        let meta: BTreeMap<String, String> =
            [("threshold_secs", "120"), ("elapsed_unit", "s")].map(|(k, v)| (k.into(), v.into())).into();
        cfg.inherit(&meta, &["threshold_secs", "elapsed_unit"]).unwrap();
        assert_eq!(cfg.threshold_secs, 60);
        assert_eq!(cfg.elapsed_unit, ElapsedUnit::Seconds);
    }
}
