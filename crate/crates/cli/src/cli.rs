use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::commands::*;
use crate::config::{apply_set, from_value, load_file, set_path};
use crate::error::{CliError, Result};
use crate::report::render_report;
use crate::results::Results;
use crate::rundir::write_results;

#[derive(Debug, Parser)]
#[command(name = "numlens", version, about = "Probing and spectral analyses of number representations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run config, JSON or TOML (by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Result directory; defaults to `results/<command>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-layer work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Override any config key, e.g. `--set probe.train.max_epochs=20`.
    /// Values are parsed as JSON when possible.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the toy transformer on arithmetic and save a checkpoint.
    TrainToy {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Capture activations and embeddings of a toy checkpoint into a dump.
    DumpToy {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Pairwise RSA between embedding tables.
    Rsa,
    /// Top-k Fourier frequency overlap between embedding tables.
    FftIou {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        pca_dims: Option<usize>,
    },
    /// Recovery of earlier number chunks from the last numeric token.
    Multitok,
    #[command(subcommand)]
    Trace(TraceCommand),
    /// Skip layers of a toy checkpoint and score answer accuracy.
    Ablate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Re-render CSV and SVG figures from a result directory.
    Report { results_dir: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Repeat for several layers.
    #[arg(long)]
    pub layer: Vec<usize>,
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub site: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ProbeCommand {
    /// Fit one probe on one layer with held-out values.
    Train(ProbeArgs),
    /// Score a saved probe on a dump.
    Eval {
        #[command(flatten)]
        args: ProbeArgs,
        #[arg(long)]
        probe_dir: Option<PathBuf>,
    },
    /// Probe every layer and score each probe on every other layer.
    CrossLayer(ProbeArgs),
    /// Train on all layers but one, test on the one left out.
    Loo(ProbeArgs),
}

#[derive(Debug, Subcommand)]
pub enum TraceCommand {
    /// Per-layer result probing against the model's own answers.
    Errors {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    /// Name used for the results kind and the default output directory.
    pub fn kind(&self) -> &'static str {
        match self {
            Command::TrainToy { .. } => "train-toy",
            Command::DumpToy { .. } => "dump-toy",
            Command::Probe(ProbeCommand::Train(_)) => "probe-train",
            Command::Probe(ProbeCommand::Eval { .. }) => "probe-eval",
            Command::Probe(ProbeCommand::CrossLayer(_)) => "probe-cross-layer",
            Command::Probe(ProbeCommand::Loo(_)) => "probe-loo",
            Command::Rsa => "rsa",
            Command::FftIou { .. } => "fft-iou",
            Command::Multitok => "multitok",
            Command::Trace(TraceCommand::Errors { .. }) => "trace-errors",
            Command::Ablate { .. } => "ablate",
            Command::Report { .. } => "report",
        }
    }
}

fn set_opt<T: Serialize>(root: &mut Value, key: &str, v: &Option<T>) -> Result<()> {
    match v {
        Some(v) => set_path(root, key, serde_json::to_value(v).expect("flag values serialize")),
        None => Ok(()),
    }
}

fn probe_flags(root: &mut Value, a: &ProbeArgs, single_layer: bool) -> Result<()> {
    set_opt(root, "dump", &a.dump)?;
    set_opt(root, "kind", &a.kind)?;
    set_opt(root, "site", &a.site)?;
    if !a.layer.is_empty() {
        if single_layer {
            if a.layer.len() > 1 {
                return Err(CliError::config("/layer", "probe eval takes one --layer"));
            }
            set_path(root, "layer", json!(a.layer[0]))?;
        } else {
            set_path(root, "layers", json!(a.layer))?;
        }
    }
    Ok(())
}

/// Command flags layered over the config file and `--set`.
fn apply_flags(root: &mut Value, cmd: &Command) -> Result<()> {
    match cmd {
        Command::TrainToy { steps } => set_opt(root, "train.steps", steps),
        Command::DumpToy { checkpoint } | Command::Ablate { checkpoint } => set_opt(root, "checkpoint", checkpoint),
        Command::Trace(TraceCommand::Errors { checkpoint }) => set_opt(root, "checkpoint", checkpoint),
        Command::Probe(ProbeCommand::Eval { args, probe_dir }) => {
            probe_flags(root, args, true)?;
            set_opt(root, "probe_dir", probe_dir)
        }
        Command::Probe(ProbeCommand::Train(a) | ProbeCommand::CrossLayer(a) | ProbeCommand::Loo(a)) => {
            probe_flags(root, a, false)
        }
        Command::FftIou { k, pca_dims } => {
            set_opt(root, "k", k)?;
            set_opt(root, "pca_dims", pca_dims)
        }
        Command::Rsa | Command::Multitok | Command::Report { .. } => Ok(()),
    }
}

fn execute<C>(
    value: Value,
    out: &Path,
    kind: &str,
    resolve: fn(&mut C) -> Result<()>,
    body: fn(&C, &Path) -> Result<Results>,
) -> Result<()>
where
    C: DeserializeOwned + Serialize,
{
    let mut cfg: C = from_value(value)?;
    resolve(&mut cfg)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let results = body(&cfg, out)?;
    write_results(out, kind, &cfg, &results)
}

fn dispatch(cli: &Cli, out: &Path) -> Result<()> {
    if let Command::Report { results_dir } = &cli.command {
        render_report(results_dir)?;
        return Ok(());
    }
    let mut value = match &cli.global.config {
        Some(p) => load_file(p)?,
        None => json!({}),
    };
    for s in &cli.global.set {
        apply_set(&mut value, s)?;
    }
    apply_flags(&mut value, &cli.command)?;
    if let Some(seed) = cli.global.seed {
        set_path(&mut value, "seed", json!(seed))?;
    }
    let kind = cli.command.kind();
    match &cli.command {
        Command::TrainToy { .. } => execute(value, out, kind, TrainToyConfig::resolve, train_toy),
        Command::DumpToy { .. } => execute(value, out, kind, DumpToyConfig::resolve, dump_toy),
        Command::Probe(p) => match p {
            ProbeCommand::Train(_) => execute(value, out, kind, ProbeRunConfig::resolve, probe_train),
            ProbeCommand::Eval { .. } => execute(value, out, kind, ProbeEvalConfig::resolve, probe_eval),
            ProbeCommand::CrossLayer(_) => execute(value, out, kind, ProbeRunConfig::resolve, probe_cross_layer),
            ProbeCommand::Loo(_) => execute(value, out, kind, ProbeRunConfig::resolve, probe_loo),
        },
        Command::Rsa => execute(value, out, kind, RsaConfig::resolve, rsa),
        Command::FftIou { .. } => execute(value, out, kind, FftIouConfig::resolve, fft_iou),
        Command::Multitok => execute(value, out, kind, MultitokRunConfig::resolve, multitok),
        Command::Trace(_) => execute(value, out, kind, TraceErrorsConfig::resolve, trace_errors),
        Command::Ablate { .. } => execute(value, out, kind, AblateConfig::resolve, ablate),
        Command::Report { .. } => unreachable!("handled above"),
    }
}

/// Runs one parsed invocation and returns its result directory.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let out = match (&cli.command, &cli.global.out) {
        (Command::Report { results_dir }, _) => results_dir.clone(),
        (_, Some(o)) => o.clone(),
        (cmd, None) => Path::new("results").join(cmd.kind()),
    };
    match cli.global.jobs {
        Some(0) => Err(CliError::config("/jobs", "must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::config("/jobs", e.to_string()))?;
            pool.install(|| dispatch(&cli, &out))?;
            Ok(out)
        }
        None => {
            dispatch(&cli, &out)?;
            Ok(out)
        }
    }
}
