//! The `das` command-line tool.
//!
//! Every subcommand reads the same flat configuration (see [`config`]) and
//! echoes the effective values into its output directory.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use das_core::{Error, Result};

use config::{from_env, parse_file, RunConfig, Setting};

#[derive(Debug, Parser)]
#[command(name = "das", version, about = "Session dropout prediction with a masked encoder-decoder Transformer")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each maps onto a config key.
#[derive(Debug, Args)]
pub struct Common {
    /// Flat key=value config file
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Named defaults: desk or paper
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Training seed; also seeds `synth`
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Inactivity gap that ends a session
    #[arg(long, global = true)]
    pub threshold_secs: Option<u64>,
    /// Interactions per model window
    #[arg(long, global = true)]
    pub seq_size: Option<usize>,
    /// Where results, checkpoints and the echoed config go
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Any other config key, e.g. --set epochs=3
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a log into sessions and label dropouts
    Sessionize {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train a model and write curves plus a checkpoint
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of a log
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// train, validation, test or all
        #[arg(long)]
        split: Option<String>,
    },
    /// Print a dropout probability for every interaction of a log
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train and test a ladder of feature sets or window sizes
    Ablate {
        #[arg(long)]
        input: Option<PathBuf>,
        /// features or seq_size
        #[arg(long)]
        sweep: Option<String>,
        /// Comma-separated window sizes for the seq_size sweep
        #[arg(long)]
        seq_sizes: Option<String>,
    },
    /// Generate a synthetic log with a known dropout hazard
    Synth {
        #[arg(long)]
        users: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sessionize { .. } => "sessionize",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Predict { .. } => "predict",
            Command::Ablate { .. } => "ablate",
            Command::Synth { .. } => "synth",
        }
    }
}

/// Process exit status for an error category.
pub fn exit_code(category: &str) -> i32 {
    match category {
        "usage" => 2,
        "config" => 3,
        "schema" => 4,
        "data" => 5,
        "io" => 6,
        "compatibility" => 7,
        "diverged" => 8,
        "metric" => 9,
        "lookup" => 10,
        _ => 11,
    }
}

fn flag_settings(cli: &Cli) -> Result<Vec<Setting>> {
    let c = &cli.common;
    let mut out = Vec::new();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push(Setting::new(k, v, format!("flag --{}", k.replace('_', "-"))));
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    push("preset", c.preset.clone());
    push("seed", c.seed.map(|v| v.to_string()));
    push("threshold_secs", c.threshold_secs.map(|v| v.to_string()));
    push("seq_size", c.seq_size.map(|v| v.to_string()));
    push("out_dir", path(&c.out_dir));
    match &cli.command {
        Command::Sessionize { input } | Command::Train { input } => push("input", path(input)),
        Command::Evaluate {
            checkpoint,
            input,
            split,
        } => {
            push("checkpoint", path(checkpoint));
            push("input", path(input));
            push("eval_split", split.clone());
        }
        Command::Predict { checkpoint, input } => {
            push("checkpoint", path(checkpoint));
            push("input", path(input));
        }
        Command::Ablate {
            input,
            sweep,
            seq_sizes,
        } => {
            push("input", path(input));
            push("sweep", sweep.clone());
            push("seq_sizes", seq_sizes.clone());
        }
        Command::Synth { users } => push("users", users.map(|v| v.to_string())),
    }
    for s in &c.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set `{s}` must look like key=value")))?;
        out.push(Setting::new(k.trim(), v.trim(), format!("flag --set {s}")));
    }
    Ok(out)
}

/// Merges preset, file, environment and flags into the effective config.
pub fn resolve_config(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<RunConfig> {
    let file = match &cli.common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::File {
                path: path.clone(),
                source: e,
            })?;
            parse_file(&text, &path.display().to_string())?
        }
        None => Vec::new(),
    };
    RunConfig::resolve(&[file, from_env(env), flag_settings(cli)?])
}

pub fn run(cli: &Cli, env: impl IntoIterator<Item = (String, String)>, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli, env)?;
    match cli.command {
        Command::Sessionize { .. } => commands::sessionize_cmd(&cfg, out),
        Command::Train { .. } => commands::train_cmd(&cfg, out),
        Command::Evaluate { .. } => commands::evaluate_cmd(&cfg, out),
        Command::Predict { .. } => commands::predict_cmd(&cfg, out),
        Command::Ablate { .. } => commands::ablate_cmd(&cfg, out),
        Command::Synth { .. } => commands::synth_cmd(&cfg, out),
    }
}

/// Parses `args`, runs one subcommand and returns the process exit status.
/// Failures are reported on stderr as a single `error[category]: message` line.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if e.exit_code() == 0 => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default();
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return exit_code("usage");
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(&cli, std::env::vars(), &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {} {msg}", e.category(), cli.command.name());
            exit_code(e.category())
        }
    }
}
