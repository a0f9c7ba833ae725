//! Command-line front end: argument definitions and the five commands.
//!
//! Every command returns a process exit code: 0 on success, 1 when a check
//! fails or training breaks down numerically, 2 for bad input.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checks::{self, Check};
use crate::config::RunConfig;
use crate::data::{gen_synth, save_features, Split};
use crate::error::{Error, Result};
use crate::model::checkpoint;
use crate::sweep::run_sweep;
use crate::train::{evaluate, train_with, Mode, TrainReport};

#[derive(Debug, Parser)]
#[command(name = "rrtn", version, about = "Twin-network multi-output regression trainer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write metrics and checkpoints.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on one split of the configured data.
    Eval(EvalArgs),
    /// Compare every analytic gradient with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train every mode for every seed and summarise the ablation.
    Sweep(ConfigArgs),
    /// Write the configured synthetic dataset as a feature file.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (same as `--set paths.out=DIR`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(out) = &self.out {
            overrides.push(format!("paths.out={}", serde_json::to_string(out)?));
        }
        let cfg = RunConfig::load(self.config.as_deref(), &overrides)?.with_env_seed()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Feature file to evaluate on instead of the configured data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dev")]
    pub split: SplitArg,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_delimiter = ',', default_values_t = checks::DEFAULT_SEEDS)]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = checks::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Destination `.feat` file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Runs a parsed command line, writing progress to `out` and diagnostics to `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args, out),
        Command::Eval(args) => cmd_eval(&args, out),
        Command::Gradcheck(args) => cmd_gradcheck(&checks::suite(), &args.seeds, args.tolerance, out),
        Command::Sweep(args) => cmd_sweep(&args, out),
        Command::GenData(args) => cmd_gen_data(&args, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    mode: Mode,
    seed: u64,
    epochs: usize,
    initial_dev_ccc: f64,
    final_dev_ccc: f64,
    best_epoch: usize,
    best_dev_ccc: f64,
    final_c: Option<[f64; 3]>,
    halted: Option<&'a str>,
}

/// Trains and writes `metrics.jsonl`, `final.ckpt`, `best.ckpt`,
/// `summary.json` and the resolved `config.json` into `paths.out`.
pub fn cmd_train(args: &ConfigArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = args.load()?;
    let data = cfg.data.load()?;
    let setup = cfg.setup_for(&data)?;
    let dir = &cfg.paths.out;
    create_dir(dir)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;

    let mut metrics = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
    let report = train_with(&setup, &data, |rec| {
        serde_json::to_writer(&mut metrics, rec)?;
        metrics.write_all(b"\n")?;
        metrics.flush()?;
        writeln!(
            out,
            "epoch {:>3}  l_total {:>10.5}  l_ccc {:.5}  dev_ccc {:.4}",
            rec.epoch, rec.l_total, rec.l_ccc, rec.dev_ccc
        )?;
        Ok(())
    })?;
    drop(metrics);
    write_train_outputs(dir, &cfg, &report)?;

    writeln!(
        out,
        "dev_ccc initial {:.4}  final {:.4}  best {:.4} (epoch {})",
        report.initial_dev_ccc, report.final_dev_ccc, report.best_dev_ccc, report.best_epoch
    )?;
    match &report.halted {
        Some(why) => {
            writeln!(out, "halted: {why}")?;
            Ok(1)
        }
        None => Ok(0),
    }
}

fn write_train_outputs(dir: &Path, cfg: &RunConfig, report: &TrainReport) -> Result<()> {
    checkpoint::save(&report.final_params, dir.join("final.ckpt"))?;
    checkpoint::save(&report.best_params, dir.join("best.ckpt"))?;
    let summary = TrainSummary {
        mode: report.mode,
        seed: cfg.train.seed,
        epochs: report.records.len(),
        initial_dev_ccc: report.initial_dev_ccc,
        final_dev_ccc: report.final_dev_ccc,
        best_epoch: report.best_epoch,
        best_dev_ccc: report.best_dev_ccc,
        final_c: (report.mode == Mode::RrtnRuwl).then_some(report.final_c),
        halted: report.halted.as_deref(),
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

/// Prints the mean CCC and the per-dimension CCC vector of a checkpoint.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = args.config.load()?;
    if let Some(path) = &args.data {
        cfg.data.path = Some(path.clone());
    }
    let params = checkpoint::load(&args.checkpoint).map_err(|e| match e {
        Error::Io(io) => Error::Load(format!("{}: {io}", args.checkpoint.display())),
        other => other,
    })?;
    if cfg.data.path.is_some() {
        cfg.data.frames = params.config().frames;
    }
    let data = cfg.data.load()?;
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Dev => Split::Dev,
    };
    let report = evaluate(&params, &data, split)?;
    writeln!(out, "mean_ccc {}", report.mean_ccc)?;
    writeln!(out, "per_dim {}", serde_json::to_string(&report.per_dim)?)?;
    Ok(0)
}

/// Runs `suite`; exits 1 naming every check at or above `tolerance`.
pub fn cmd_gradcheck(suite: &[Check], seeds: &[u64], tolerance: f64, out: &mut dyn Write) -> Result<i32> {
    if seeds.is_empty() {
        return Err(Error::Usage("gradcheck needs at least one seed".into()));
    }
    let report = checks::run_suite(suite, seeds, tolerance, out)?;
    if report.passed() {
        writeln!(
            out,
            "all {} checks passed (tolerance {tolerance:e}, seeds {seeds:?})",
            suite.len()
        )?;
        Ok(0)
    } else {
        writeln!(out, "failed checks: {}", report.failures().join(", "))?;
        Ok(1)
    }
}

/// Runs the ablation and writes `summary.json` and `summary.txt` into `paths.out`.
pub fn cmd_sweep(args: &ConfigArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = args.load()?;
    let data = cfg.data.load()?;
    cfg.setup_for(&data)?;
    create_dir(&cfg.paths.out)?;
    let mut progress = Ok(());
    let summary = run_sweep(&cfg, &data, |row| {
        if progress.is_ok() {
            progress = writeln!(
                out,
                "seed {:>3}  {:<10}  best_dev_ccc {:.4}",
                row.seed,
                row.mode.name(),
                row.best_dev_ccc
            );
        }
    })?;
    progress?;
    let text = summary.to_text();
    std::fs::write(
        cfg.paths.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    std::fs::write(cfg.paths.out.join("summary.txt"), &text)?;
    write!(out, "\n{text}")?;
    Ok(if summary.halted() { 1 } else { 0 })
}

/// Writes the configured synthetic dataset to `args.out`.
pub fn cmd_gen_data(args: &GenDataArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    let data = gen_synth(&cfg.data.synth())?;
    save_features(&data, &args.out).map_err(|e| Error::Config(format!("{}: {e}", args.out.display())))?;
    writeln!(
        out,
        "wrote {} samples ({}×{} features, {} targets) to {}",
        data.len(),
        data.frames(),
        data.bins(),
        data.n_targets(),
        args.out.display()
    )?;
    Ok(0)
}
