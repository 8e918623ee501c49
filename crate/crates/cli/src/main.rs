//! `pl3d`: label, synth, eval and ablate.
//!
//! Results go to stdout as JSON, logs to stderr. Exit status is 0 on
//! success, 2 when some frames failed, 1 on configuration or fatal errors.

use clap::{Args, Parser, Subcommand};
use pl3d_core::ablate::run_ablation;
use pl3d_core::config::Config;
use pl3d_core::dataset::{evaluate_dirs, label_dataset, write_synth};
use pl3d_core::eval::pr_points_csv;
use pl3d_core::formats::write_atomic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pl3d",
    version,
    about = "Oriented 3D box labels from depth maps and instance masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Flat TOML config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs serially, 0 uses every core.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// off, error, warn, info, debug or trace.
    #[arg(long, global = true, value_name = "L")]
    log_level: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Label every frame of a manifest.
    Label { manifest: PathBuf },
    /// Render a synthetic suite: rasters, manifest and ground truth.
    Synth,
    /// Score a prediction label directory against ground truth.
    Eval {
        predictions: PathBuf,
        ground_truth: PathBuf,
    },
    /// Relabel a manifest under each ablation variant and compare mAP.
    Ablate {
        manifest: PathBuf,
        /// Ground-truth labels; defaults to `gt/` next to the manifest.
        #[arg(long, value_name = "DIR")]
        gt: Option<PathBuf>,
    },
}

enum Failure {
    Fatal(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Fatal(e.to_string())
    }
}

fn load_config(common: &Common) -> Result<Config, Failure> {
    let mut cfg = Config::load(common.config.as_deref())?;
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(l) = &common.log_level {
        cfg.log_level = l.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    let cfg = load_config(&cli.common)?;
    env_logger::Builder::new()
        .parse_filters(&cfg.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match &cli.command {
        Command::Label { manifest } => {
            let out = out_dir(&cli.common, "labels");
            let summary = label_dataset(manifest, &cfg, &out)?;
            print_json(&summary);
            if summary.has_failures() {
                log::warn!(
                    "{} of {} frames failed",
                    summary.frames_failed,
                    summary.frames
                );
                return Ok(ExitCode::from(2));
            }
        }
        Command::Synth => {
            let out = out_dir(&cli.common, "synth");
            let summary = write_synth(&cfg, &out)?;
            print_json(&summary);
        }
        Command::Eval {
            predictions,
            ground_truth,
        } => {
            let (result, points) = evaluate_dirs(predictions, ground_truth, &cfg)?;
            eprint!("{}", result.table());
            if let Some(out) = &cli.common.out {
                std::fs::create_dir_all(out)?;
                let json = serde_json::to_string_pretty(&result)? + "\n";
                write_atomic(&out.join("eval.json"), json.as_bytes())?;
                write_atomic(&out.join("eval.txt"), result.table().as_bytes())?;
                if cfg.pr_csv {
                    write_atomic(&out.join("pr.csv"), pr_points_csv(&points).as_bytes())?;
                }
            }
            print_json(&result);
        }
        Command::Ablate { manifest, gt } => {
            let gt = gt
                .clone()
                .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("gt"));
            let out = out_dir(&cli.common, "ablation");
            let report = run_ablation(manifest, &gt, &cfg, &out)?;
            eprint!("{}", report.table());
            write_atomic(&out.join("ablation.txt"), report.table().as_bytes())?;
            print_json(&report);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Fatal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
