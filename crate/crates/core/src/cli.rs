//! The `hycube` command line: `train`, `eval`, `stats`, `extract-fixed`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::{parse_layout, parse_padding, NegativeMode, RunConfig, Variant};
use crate::data::{load_dataset, DatasetStats, FilterIndex, Split};
use crate::eval::evaluate_split;
use crate::training::{format_epoch_log, train, StopReason, TrainOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.hycb";
pub const EPOCH_LOG_FILE: &str = "epochs.log";
pub const REPORT_FILE: &str = "report.txt";

pub fn metrics_file(split: Split) -> String {
    format!("metrics_{}.txt", split.name())
}

#[derive(Debug, Parser)]
#[command(name = "hycube", version, about = "Knowledge-hypergraph link prediction with 3D circular convolutions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, epoch log and metrics to --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
    /// Write a copy of a dataset restricted to one arity.
    ExtractFixed(ExtractArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// key=value file applied on top of the defaults; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = ["hycube", "hycube-plus", "hyplane"])]
    pub variant: Option<String>,
    #[arg(long, value_parser = ["alternate", "standard"])]
    pub stack: Option<String>,
    #[arg(long, value_parser = ["circular", "zero"])]
    pub padding: Option<String>,
    /// Embedding dimension; d1 x d2 is the most square factorization.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Input and feature dropout; a single value sets both.
    #[arg(long, value_delimiter = ',', num_args = 1..=2)]
    pub dropout: Option<Vec<f64>>,
    /// Padding p; the kernel size is 2p+1.
    #[arg(long)]
    pub kernel_pad: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_parser = ["full", "sampled"])]
    pub neg_mode: Option<String>,
    #[arg(long)]
    pub neg_rate: Option<usize>,
    /// Split used for model selection.
    #[arg(long, default_value = "valid")]
    pub monitor: Split,
    /// Write 0 for epoch wall times so logs are byte-reproducible.
    #[arg(long)]
    pub no_wall_time: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Directory for the metrics file; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub arity: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Divergence { epoch: usize },
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Divergence { .. } => EXIT_DIVERGENCE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) => write!(f, "usage error: {e:#}"),
            Failure::Data(e) => write!(f, "error: {e:#}"),
            Failure::Divergence { epoch } => write!(f, "training diverged in epoch {epoch}"),
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

/// Resolves defaults, then the config file, then explicit flags, and
/// validates the result. Runs before any data is read.
pub fn resolve_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        cfg = cfg.apply_key_value(&text)?;
    }
    if let Some(v) = &args.variant {
        cfg.variant = v.parse::<Variant>().map_err(anyhow::Error::msg)?;
    }
    if let Some(s) = &args.stack {
        cfg.stack = parse_layout(s).map_err(anyhow::Error::msg)?;
    }
    if let Some(p) = &args.padding {
        cfg.padding = parse_padding(p).map_err(anyhow::Error::msg)?;
    }
    if let Some(d) = args.d {
        cfg = cfg.with_dim(d);
    }
    if let Some(b) = args.batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(decay) = args.lr_decay {
        cfg.lr_decay = decay;
    }
    if let Some(rates) = &args.dropout {
        cfg.input_dropout = rates[0];
        cfg.feature_dropout = *rates.last().unwrap();
    }
    if let Some(p) = args.kernel_pad {
        cfg.pad = p;
    }
    if let Some(c) = args.channels {
        cfg.channels = c;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.max_epochs {
        cfg.max_epochs = m;
    }
    if let Some(p) = args.patience {
        cfg.patience = p;
    }
    match (args.neg_mode.as_deref(), args.neg_rate) {
        (Some("sampled"), Some(rate)) => cfg.negatives = NegativeMode::Sampled { rate },
        (Some("sampled"), None) => anyhow::bail!("--neg-mode sampled requires --neg-rate"),
        (Some(_), Some(_)) => anyhow::bail!("--neg-rate only applies to --neg-mode sampled"),
        (Some(_), None) => cfg.negatives = NegativeMode::Full,
        (None, Some(rate)) => match cfg.negatives {
            NegativeMode::Sampled { .. } => cfg.negatives = NegativeMode::Sampled { rate },
            NegativeMode::Full => anyhow::bail!("--neg-rate only applies to --neg-mode sampled"),
        },
        (None, None) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> std::result::Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data)
}

pub fn cmd_train(args: &TrainArgs) -> std::result::Result<(), Failure> {
    let cfg = resolve_config(args).map_err(usage)?;
    let dataset = load_dataset(&args.data)
        .with_context(|| format!("loading {}", args.data.display()))
        .map_err(data)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(data)?;
    let mut snapshot = format!(
        "# re-run: hycube train --data {} --out {} --config {}{}\n",
        args.data.display(),
        args.out.display(),
        args.out.join(CONFIG_FILE).display(),
        if args.no_wall_time { " --no-wall-time" } else { "" },
    );
    snapshot.push_str(&format!("# monitor split: {}\n", args.monitor));
    snapshot.push_str(&cfg.to_key_value());
    write(&args.out.join(CONFIG_FILE), snapshot)?;

    let mut on_epoch = |r: &crate::training::EpochRecord| {
        eprintln!(
            "epoch {:>4}  loss {:.5}  mrr {:.4}  hits@1 {:.4}  hits@10 {:.4}",
            r.epoch, r.loss, r.mrr, r.hits1, r.hits10
        );
    };
    let options = TrainOptions {
        monitor: args.monitor,
        record_wall_time: !args.no_wall_time,
        on_epoch: Some(&mut on_epoch),
    };
    let (model, report) = train::<f32>(&dataset, &cfg, options).map_err(data)?;

    write(&args.out.join(EPOCH_LOG_FILE), format_epoch_log(&report.epochs))?;
    checkpoint::save(&model, &args.out.join(CHECKPOINT_FILE)).map_err(data)?;
    write(
        &args.out.join(REPORT_FILE),
        format!(
            "best_epoch={}\nbest_mrr={:?}\nstop_reason={}\nepochs={}\nparameters={}\nsampler_warnings={}\n",
            report.best_epoch,
            report.best_mrr,
            report.stop_reason,
            report.epochs.len(),
            model.num_parameters(),
            report.sampler_warnings
        ),
    )?;
    if let StopReason::Divergence { epoch } = report.stop_reason {
        return Err(Failure::Divergence { epoch });
    }

    let filter = FilterIndex::build(&dataset);
    for split in [Split::Valid, Split::Test] {
        if dataset.split(split).is_empty() {
            log::warn!("{split} split is empty; no metrics written");
            continue;
        }
        let metrics = evaluate_split(&model, &dataset, &filter, split).map_err(data)?;
        println!("{split} (best epoch {}):\n{}", report.best_epoch, metrics.to_table());
        write(&args.out.join(metrics_file(split)), metrics.to_records())?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> std::result::Result<(), Failure> {
    let model = checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))
        .map_err(data)?;
    let dataset = load_dataset(&args.data)
        .with_context(|| format!("loading {}", args.data.display()))
        .map_err(data)?;
    checkpoint::check_vocab(&model, dataset.num_entities(), dataset.num_relations()).map_err(data)?;
    let filter = FilterIndex::build(&dataset);
    let metrics = evaluate_split(&model, &dataset, &filter, args.split).map_err(data)?;
    println!("{}:\n{}", args.split, metrics.to_table());
    let out = match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))
                .map_err(data)?;
            dir.clone()
        }
        None => args
            .checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    write(&out.join(format!("eval_{}", metrics_file(args.split))), metrics.to_records())
}

pub fn cmd_stats(args: &StatsArgs) -> std::result::Result<(), Failure> {
    let dataset = load_dataset(&args.data)
        .with_context(|| format!("loading {}", args.data.display()))
        .map_err(data)?;
    let stats = DatasetStats::compute(&dataset);
    print!("{}", stats.to_table());
    Ok(())
}

pub fn cmd_extract_fixed(args: &ExtractArgs) -> std::result::Result<(), Failure> {
    if args.arity < 2 {
        return Err(usage(anyhow::anyhow!("--arity must be at least 2")));
    }
    let dataset = load_dataset(&args.data)
        .with_context(|| format!("loading {}", args.data.display()))
        .map_err(data)?;
    let fixed = match dataset.fixed_arity(args.arity) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("{e}");
            return Err(data(e));
        }
    };
    fixed.write_dir(&args.out).map_err(data)?;
    let stats = DatasetStats::compute(&fixed);
    println!(
        "wrote {} arity-{} tuples ({} entities, {} relations) to {}",
        stats.total(),
        args.arity,
        stats.num_entities,
        stats.num_relations,
        args.out.display()
    );
    Ok(())
}

pub fn dispatch(cli: &Cli) -> std::result::Result<(), Failure> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stats(a) => cmd_stats(a),
        Command::ExtractFixed(a) => cmd_extract_fixed(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::StackLayout;
    use crate::tensor::PaddingMode;

    fn train_args(extra: &[&str]) -> TrainArgs {
        let mut argv = vec!["hycube", "train", "--data", "d", "--out", "o"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Train(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_are_published_values() {
        let cfg = resolve_config(&train_args(&[])).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.dim, cfg.max_epochs, cfg.patience, cfg.channels, cfg.pool), (400, 500, 50, 8, 4));
    }

    #[test]
    fn ablation_and_kernel_flags() {
        let cfg = resolve_config(&train_args(&["--stack", "standard", "--padding", "zero", "--kernel-pad", "2"])).unwrap();
        assert_eq!(cfg.stack, StackLayout::Standard);
        assert_eq!(cfg.padding, PaddingMode::Zero);
        assert_eq!(cfg.kernel_size(), 5);
    }

    #[test]
    fn dropout_and_dimension_flags() {
        let cfg = resolve_config(&train_args(&["--dropout", "0.1,0.4", "--d", "200"])).unwrap();
        assert_eq!((cfg.input_dropout, cfg.feature_dropout), (0.1, 0.4));
        assert_eq!((cfg.d1, cfg.d2), (10, 20));
        let cfg = resolve_config(&train_args(&["--dropout", "0.25"])).unwrap();
        assert_eq!((cfg.input_dropout, cfg.feature_dropout), (0.25, 0.25));
    }

    #[test]
    fn negative_mode_combinations() {
        assert!(resolve_config(&train_args(&["--neg-mode", "sampled"])).is_err());
        assert!(resolve_config(&train_args(&["--neg-rate", "5"])).is_err());
        assert!(resolve_config(&train_args(&["--neg-mode", "full", "--neg-rate", "5"])).is_err());
        let cfg = resolve_config(&train_args(&["--neg-mode", "sampled", "--neg-rate", "5"])).unwrap();
        assert_eq!(cfg.negatives, NegativeMode::Sampled { rate: 5 });
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(resolve_config(&train_args(&["--variant", "hycube-plus", "--channels", "12"])).is_err());
        assert!(resolve_config(&train_args(&["--dropout", "1.5"])).is_err());
        assert!(Cli::try_parse_from(["hycube", "train", "--data", "d", "--out", "o", "--variant", "x"]).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["hycube", "train", "--data", "d"]), EXIT_USAGE);
        assert_eq!(run(["hycube", "nope"]), EXIT_USAGE);
        assert_eq!(
            run(["hycube", "train", "--data", "/nonexistent", "--out", "/tmp/x", "--neg-mode", "sampled"]),
            EXIT_USAGE
        );
        assert_eq!(run(["hycube", "stats", "--data", "/nonexistent/dir"]), EXIT_DATA);
    }
}
