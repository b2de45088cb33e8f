use clap::{Parser, Subcommand};
use daert::harness::{
    compare, evaluate_params, oracle_dump, render_comparison_csv, render_comparison_text,
    train_run, OptimizerChoice, RunConfig,
};
use daert::policy::PolicyParams;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "daert", about = "Diversity-aware red teaming of fragile instruction targets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured optimizer and persist run artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/run")]
        out: PathBuf,
        /// Overrides the config's optimizer (daert, grpo, grpo-nokl).
        #[arg(long)]
        optimizer: Option<String>,
    },
    /// Evaluate a checkpoint under the config's evaluation protocol.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the brute-force mode enumeration and uniform-sampling Q tables.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge completed runs into a per-method comparison table.
    Compare {
        /// Run directories to merge.
        runs: Vec<PathBuf>,
        /// Directory for compare.csv and compare.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize one run directory.
    Report {
        run: PathBuf,
    },
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    optimizer: Option<&str>,
) -> daert::Result<(RunConfig, Vec<u8>)> {
    let raw = fs::read(path)?;
    let body = String::from_utf8_lossy(&raw);
    let mut config = RunConfig::from_toml(&body)?;
    let mut changed = false;
    if let Some(s) = seed {
        config.seeds = vec![s];
        changed = true;
    }
    if let Some(name) = optimizer {
        config.optimizer = name.parse::<OptimizerChoice>()?;
        changed = true;
    }
    config.validate()?;
    // the persisted snapshot must reflect what actually ran
    let raw = if changed {
        toml::to_string(&config)
            .map_err(|e| daert::Error::Validation(vec![format!("config re-serialization: {e}")]))?
            .into_bytes()
    } else {
        raw
    };
    Ok((config, raw))
}

fn run(cli: Cli) -> daert::Result<()> {
    match cli.command {
        Command::Train { config, seed, out, optimizer } => {
            let (cfg, raw) = load_config(&config, seed, optimizer.as_deref())?;
            let artifacts = train_run(&cfg, &raw, &out)?;
            println!("run complete: {}", artifacts.dir.display());
            for p in &artifacts.eval_paths {
                println!("  eval: {}", p.display());
            }
        }
        Command::Evaluate { config, checkpoint, seed, out } => {
            let (cfg, _) = load_config(&config, None, None)?;
            let suite = cfg.environment.resolve()?;
            let file = fs::File::open(&checkpoint)?;
            let params = PolicyParams::load(BufReader::new(file))?;
            if params.vocab_size() != suite.vocab.size() || params.horizon() != suite.horizon {
                return Err(daert::Error::Validation(vec![format!(
                    "checkpoint (|V|={}, H={}) does not match the configured environment (|V|={}, H={})",
                    params.vocab_size(),
                    params.horizon(),
                    suite.vocab.size(),
                    suite.horizon
                )]));
            }
            let seed = seed.or_else(|| cfg.seeds.first().copied()).unwrap_or(0);
            let report = evaluate_params(&params, &cfg, &suite, seed)?;
            let body = serde_json::to_string_pretty(&report)
                .map_err(|e| daert::Error::Input(e.to_string()))?;
            match out {
                Some(path) => fs::write(path, body)?,
                None => println!("{body}"),
            }
        }
        Command::Oracle { config, out } => {
            let (cfg, _) = load_config(&config, None, None)?;
            let dump = oracle_dump(&cfg)?;
            match out {
                Some(path) => fs::write(path, dump)?,
                None => print!("{dump}"),
            }
        }
        Command::Compare { runs, out } => {
            let paths: Vec<&Path> = runs.iter().map(|p| p.as_path()).collect();
            let table = compare(&paths)?;
            let text = render_comparison_text(&table);
            print!("{text}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("compare.csv"), render_comparison_csv(&table))?;
                fs::write(dir.join("compare.txt"), text)?;
            }
        }
        Command::Report { run } => {
            let table = compare(&[run.as_path()])?;
            print!("{}", render_comparison_text(&table));
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
