use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use anomaly_rl::config::{OracleSection, RunConfig};
use anomaly_rl::data::SynthSpec;
use anomaly_rl::pipeline::{cmd_eval, cmd_synth, cmd_train};

#[derive(Parser)]
#[command(name = "anomaly-rl", version, about = "Reinforcement-learning time-series anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a detector and write a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a saved Q-network on the test split.
    Eval {
        /// Run directory holding config.json and qnet.ckpt.
        #[arg(long)]
        run: PathBuf,
        /// Config to use instead of the run's own.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the report; defaults to `<run>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train with human labeling through the annotation service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Seconds each labeling round waits for answers.
        #[arg(long, default_value_t = 60.0)]
        wait: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory of built annotator assets to serve at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Write a synthetic spike series to disk.
    Synth {
        #[arg(long, default_value_t = 2000)]
        t: usize,
        #[arg(long, default_value_t = 1)]
        dims: usize,
        #[arg(long, default_value_t = 20)]
        n_anomalies: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, seed, output_dir, episodes } => {
            let mut cfg = load_config(config.as_ref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.output_dir = output_dir.unwrap_or(cfg.output_dir);
            cfg.episodes = episodes.unwrap_or(cfg.episodes);
            let out = cmd_train(cfg)?;
            println!("{}", serde_json::to_string_pretty(&out.metrics)?);
            eprintln!("run written to {}", out.run_dir.display());
        }
        Command::Eval { run, config, out } => {
            let cfg = match config {
                Some(p) => load_config(Some(&p))?,
                None => load_config(Some(&run.join("config.json")))?,
            };
            let out = out.unwrap_or_else(|| run.join("eval"));
            let metrics = cmd_eval(&cfg, &run.join("qnet.ckpt"), &out)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Serve { config, port, wait, seed, ui } => {
            let mut cfg = load_config(config.as_ref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.oracle = OracleSection::Human { wait_secs: wait, addr: format!("127.0.0.1:{port}"), ui_dir: ui };
            let out = cmd_train(cfg)?;
            println!("{}", serde_json::to_string_pretty(&out.metrics)?);
        }
        Command::Synth { t, dims, n_anomalies, seed, out } => {
            let spec = SynthSpec { t, dims, n_anomalies, seed, ..SynthSpec::default() };
            for p in cmd_synth(&spec, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
