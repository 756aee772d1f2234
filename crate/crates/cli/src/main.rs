use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use cl4srec::corpus::Phase;
use cl4srec::synthetic::{clustered, latent, planted, ClusteredConfig, LatentConfig, PlantedConfig};
use cl4srec_cli::commands::{self, write_atomic, SweepAxis};
use cl4srec_cli::ExperimentConfig;

#[derive(Parser)]
#[command(name = "cl4srec", version, about = "Contrastive sequential recommendation experiments")]
struct Cli {
    /// Config file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location: dataset dir for preprocess, run root for training
    /// commands, file for simreport and generate.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum SyntheticKind {
    Planted,
    Clustered,
    Latent,
}

#[derive(Subcommand)]
enum Command {
    /// Binarize, deduplicate and 5-core filter a raw interaction log.
    Preprocess {
        /// Raw file; defaults to dataset.raw.
        raw: Option<PathBuf>,
    },
    /// Train one model into its run directory.
    Train {
        /// Continue from the run's ckpt_last if present.
        #[arg(long)]
        resume: bool,
        /// Explicit run directory instead of <run.root>/<run name>.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Rank held-out items with a trained run or the popularity baseline.
    Evaluate {
        /// Run directory holding ckpt_best and config.txt.
        #[arg(long, conflicts_with = "pop")]
        run: Option<PathBuf>,
        /// Evaluate the popularity baseline on dataset.dir.
        #[arg(long)]
        pop: bool,
        #[arg(long, value_enum, default_value = "test")]
        phase: PhaseArg,
    },
    /// Train one run per value of a hyperparameter axis.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated values; defaults to the axis grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// SASRec vs SASRec_aug vs CL4SRec under one configuration.
    Ablate,
    /// Cosine-similarity histogram of user representations.
    Simreport {
        run: PathBuf,
        pairs: PathBuf,
    },
    /// Write a seeded synthetic raw log.
    Generate {
        #[arg(long, value_enum, default_value = "latent")]
        kind: SyntheticKind,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
    },
}

fn resolve_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_assignment(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Preprocess { raw } => {
            let raw = raw
                .or_else(|| cfg.dataset_raw.clone())
                .context("no raw file given and dataset.raw is not set")?;
            let out = cli
                .out
                .or_else(|| cfg.dataset_dir.clone())
                .context("no --out given and dataset.dir is not set")?;
            let stats = commands::preprocess(&cfg, &raw, &out)?;
            print!("{}", stats.to_table());
        }
        Command::Train { resume, run_dir } => {
            if let Some(root) = cli.out {
                cfg.run_root = root;
            }
            cfg.validate()?;
            let dir = run_dir.unwrap_or_else(|| cfg.run_dir());
            let summary = commands::train_in(&cfg, &dir, resume)?;
            println!("run {}", summary.run_dir.display());
            println!("{}", summary.test.csv_header());
            println!("{}", summary.test.csv_row());
        }
        Command::Evaluate { run, pop, phase } => {
            let phase = match phase {
                PhaseArg::Valid => Phase::Valid,
                PhaseArg::Test => Phase::Test,
            };
            let report = match (run, pop) {
                (Some(dir), _) => commands::evaluate_run(&dir, phase)?,
                (None, true) => commands::evaluate_pop(&cfg, phase)?,
                (None, false) => bail!("pass --run <dir> or --pop"),
            };
            let csv = format!("{}\n{}\n", report.csv_header(), report.csv_row());
            match cli.out {
                Some(path) => write_atomic(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
        }
        Command::Sweep { axis, values } => {
            if let Some(root) = cli.out {
                cfg.run_root = root;
            }
            let axis: SweepAxis = axis.parse()?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            let cells = commands::sweep(&cfg, axis, &values)?;
            print!("{}", commands::sweep_csv(axis, &cfg.ks, &cells));
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            if failed > 0 {
                bail!("{failed} of {} sweep cells failed", cells.len());
            }
        }
        Command::Ablate => {
            if let Some(root) = cli.out {
                cfg.run_root = root;
            }
            let rows = commands::ablate(&cfg)?;
            print!("{}", commands::ablation_csv(&rows));
        }
        Command::Simreport { run, pairs } => {
            let out = cli.out.unwrap_or_else(|| run.join("similarity.csv"));
            let report = commands::simreport(&run, &pairs, &out)?;
            print!("{}", commands::similarity_csv(&report));
        }
        Command::Generate { kind, users, items } => {
            let out = cli.out.context("generate needs --out")?;
            let data = match kind {
                SyntheticKind::Planted => {
                    let d = PlantedConfig::default();
                    planted(&PlantedConfig {
                        users: users.unwrap_or(d.users),
                        items: items.unwrap_or(d.items),
                        seed: cli.seed.unwrap_or(d.seed),
                        ..d
                    })?
                }
                SyntheticKind::Clustered => {
                    let d = ClusteredConfig::default();
                    clustered(&ClusteredConfig {
                        users: users.unwrap_or(d.users),
                        items: items.unwrap_or(d.items),
                        seed: cli.seed.unwrap_or(d.seed),
                        ..d
                    })?
                }
                SyntheticKind::Latent => {
                    let d = LatentConfig::default();
                    latent(&LatentConfig {
                        users: users.unwrap_or(d.users),
                        items: items.unwrap_or(d.items),
                        seed: cli.seed.unwrap_or(d.seed),
                        ..d
                    })?
                }
            };
            write_atomic(&out, data.to_tsv().as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
