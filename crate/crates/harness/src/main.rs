use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode};

use clap::{Parser, Subcommand};
use misac_harness::config::ExperimentConfig;
use misac_harness::run::{self, TrainOptions};
use misac_harness::{compare, selftest, HarnessError, Result};
use misac_tasks::{format_sig9, parse_csv, EpochMetrics};

#[derive(Parser)]
#[command(name = "misac", version, about = "Multimodal mixture-of-experts ISAC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the experiment's synthetic dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every configured seed, writing a metrics CSV and checkpoint per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Validate the configuration and print the parameter count only.
        #[arg(long)]
        dry_run: bool,
        /// Continue from existing checkpoints.
        #[arg(long)]
        resume: bool,
        /// Run seeds in separate processes, at most MISAC_THREADS at a time.
        #[arg(long)]
        parallel: bool,
        /// Train a single seed from the configuration.
        #[arg(long, hide = true)]
        seed: Option<u64>,
        /// Stop after this many epochs, as if interrupted.
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Evaluate a checkpoint on the test split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Summarize metrics CSVs: median final metric and epochs to threshold per model.
    Compare {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write the summary as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient-check and invariant suites.
    Selftest {
        /// Criterion numbers to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::GenData { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let (dir, hash) = run::gen_data(&config, out.as_deref())?;
            println!("dataset written to {}", dir.display());
            println!("config hash {hash}");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train { config: path, dry_run, resume, parallel, seed, stop_after } => {
            let config = ExperimentConfig::load(&path)?;
            if dry_run {
                println!("config hash {}", config.config_hash());
                println!("dataset hash {}", config.dataset_hash());
                println!("seeds {:?}", config.seeds);
                println!("parameters {}", run::parameter_count(&config)?);
                return Ok(ExitCode::SUCCESS);
            }
            let seeds = match seed {
                Some(s) if !config.seeds.contains(&s) => {
                    return Err(HarnessError::Config(format!("seed {s} is not listed in {}", path.display())));
                }
                Some(s) => vec![s],
                None => config.seeds.clone(),
            };
            let dataset = run::load_dataset(&config.dataset_dir(), &config.dataset_hash())?;
            if seed.is_none() {
                run::write_experiment_file(&config)?;
            }
            if parallel && seeds.len() > 1 {
                return train_in_processes(&path, &seeds, resume, stop_after);
            }
            let options = TrainOptions { resume, stop_after };
            for s in seeds {
                let state = run::train_seed(&config, &dataset, s, options, &mut print_epoch)?;
                println!("seed {s}: {} epochs, results in {}", state.epochs_done(), config.run_dir(s).display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval { checkpoint, data } => {
            let report = run::eval_checkpoint(&checkpoint, &data)?;
            print!("{}", report.render());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Compare { csvs, threshold, out } => {
            let mut runs = Vec::with_capacity(csvs.len());
            for path in &csvs {
                let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                let csv = parse_csv(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                let label = csv.model_kind.clone().unwrap_or_else(|| path.display().to_string());
                runs.push((label, csv));
            }
            let summary = compare(&runs, threshold)?;
            print!("{}", summary.to_text());
            if let Some(out) = out {
                std::fs::write(&out, summary.to_csv()).map_err(|e| HarnessError::io(&out, e))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Selftest { only } => {
            let ids = if only.is_empty() { selftest::PROPERTY_IDS.to_vec() } else { only };
            let mut all_passed = true;
            for id in ids {
                let r = selftest::run_property(id).ok_or_else(|| HarnessError::Config(format!("no property criterion {id}")))?;
                println!("{r}");
                all_passed &= r.passed;
            }
            Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn print_epoch(seed: u64, m: &EpochMetrics) {
    println!("seed {seed} epoch {:>3}  train_loss {}  metric {}", m.epoch, format_sig9(m.train_loss), format_sig9(m.metric_value));
}

fn thread_cap() -> Result<usize> {
    match std::env::var("MISAC_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(HarnessError::Config(format!("MISAC_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

/// One child process per seed, at most `MISAC_THREADS` alive at once.
fn train_in_processes(config: &Path, seeds: &[u64], resume: bool, stop_after: Option<usize>) -> Result<ExitCode> {
    let cap = thread_cap()?;
    let exe = std::env::current_exe().map_err(|e| HarnessError::Runtime(format!("cannot locate the misac executable: {e}")))?;
    let spawn = |seed: u64| -> Result<Child> {
        let mut cmd = Command::new(&exe);
        cmd.arg("train").arg("--config").arg(config).arg("--seed").arg(seed.to_string());
        if resume {
            cmd.arg("--resume");
        }
        if let Some(k) = stop_after {
            cmd.arg("--stop-after").arg(k.to_string());
        }
        cmd.spawn().map_err(|e| HarnessError::Runtime(format!("cannot start seed {seed}: {e}")))
    };
    let mut pending = seeds.iter().copied();
    let mut running: Vec<(u64, Child)> = Vec::new();
    let mut failed = Vec::new();
    loop {
        while running.len() < cap {
            match pending.next() {
                Some(s) => running.push((s, spawn(s)?)),
                None => break,
            }
        }
        if running.is_empty() {
            break;
        }
        let (seed, mut child) = running.remove(0);
        let status = child.wait().map_err(|e| HarnessError::Runtime(format!("seed {seed}: {e}")))?;
        if !status.success() {
            failed.push((seed, status.code().unwrap_or(1)));
        }
    }
    match failed.iter().map(|&(_, c)| c).max() {
        None => Ok(ExitCode::SUCCESS),
        Some(code) => {
            let seeds: Vec<String> = failed.iter().map(|(s, _)| s.to_string()).collect();
            eprintln!("error: seeds {} failed", seeds.join(", "));
            Ok(ExitCode::from(code as u8))
        }
    }
}
