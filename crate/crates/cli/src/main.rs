use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sst_cli::{CliError, RunConfig};

/// Neonatal sleep-state classification and the Sleep State Trend.
#[derive(Debug, Parser)]
#[command(name = "sst", version)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic recordings and annotations.
    Synth,
    /// Preprocess every recording in the data directory.
    Preprocess {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one model on every subject.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Leave-one-subject-out cross-validation.
    Crossval {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compute the SST of one recording with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        recording: Option<PathBuf>,
    },
    /// Score an SST CSV against annotations.
    Eval {
        #[arg(long)]
        sst: Option<PathBuf>,
        #[arg(long)]
        recording: Option<PathBuf>,
        #[arg(long = "annotations")]
        annotations: Vec<PathBuf>,
    },
    /// Compare an SST CSV with the amplitude-envelope baseline.
    Baseline {
        #[arg(long)]
        recording: Option<PathBuf>,
        #[arg(long)]
        sst: Option<PathBuf>,
        #[arg(long = "annotations")]
        annotations: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    let set = |slot: &mut Option<PathBuf>, v: Option<PathBuf>| {
        if v.is_some() {
            *slot = v;
        }
    };
    match &cli.command {
        Command::Preprocess { data } | Command::Train { data } | Command::Crossval { data } => {
            if let Some(d) = data {
                cfg.data_dir = d.clone();
            }
        }
        Command::Infer { checkpoint, recording } => {
            set(&mut cfg.checkpoint, checkpoint.clone());
            set(&mut cfg.recording, recording.clone());
        }
        Command::Eval { sst, recording, annotations } => {
            set(&mut cfg.sst_csv, sst.clone());
            set(&mut cfg.recording, recording.clone());
            cfg.annotations.extend(annotations.iter().cloned());
        }
        Command::Baseline { recording, sst, annotations } => {
            set(&mut cfg.recording, recording.clone());
            set(&mut cfg.sst_csv, sst.clone());
            cfg.annotations.extend(annotations.iter().cloned());
        }
        Command::Synth => {}
    }
    let cfg = cfg.resolved()?;
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    // A closed pipe (e.g. `| head`) is not an error worth a panic.
    let say = |s: String| {
        let _ = writeln!(std::io::stdout(), "{s}");
    };
    let json = |v: serde_json::Value| say(serde_json::to_string_pretty(&v).unwrap_or_default());
    match cli.command {
        Command::Synth => {
            let files = sst_cli::cmd_synth(&cfg)?;
            json(serde_json::json!({ "files": files }));
        }
        Command::Preprocess { .. } => {
            let s = sst_cli::cmd_preprocess(&cfg)?;
            json(serde_json::json!({ "channels": s }));
        }
        Command::Train { .. } => {
            let h = sst_cli::cmd_train(&cfg)?;
            say(format!("best epoch {:?}, validation loss {:.6}", h.best_epoch, h.best_val_loss));
        }
        Command::Crossval { .. } => {
            let r = sst_cli::cmd_crossval(&cfg)?;
            for row in r.rows.iter().filter(|r| r.subject == sst_cli::eval::POOLED) {
                say(format!(
                    "pooled {} {}: accuracy {:?} kappa {:?} auc {:?}",
                    row.expert, row.channel, row.accuracy, row.kappa, row.auc
                ));
            }
        }
        Command::Infer { .. } => {
            let t = sst_cli::cmd_infer(&cfg)?;
            say(format!("{} epochs written to {}", t.epochs.len(), cfg.out_dir.display()));
        }
        Command::Eval { .. } => {
            let rows = sst_cli::cmd_eval(&cfg)?;
            json(serde_json::to_value(rows).unwrap_or_default());
        }
        Command::Baseline { .. } => {
            let r = sst_cli::cmd_baseline(&cfg)?;
            json(serde_json::to_value(r).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sst: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
