// SPDX-License-Identifier: Apache-2.0

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use sap_core::harness::{
    checkpoint_dir, export_csv, meta_train, prune_topk, random_search, report_strengths, test_rows, with_threads,
    write_search_report, write_strengths_csv, Checkpoint, MetricsRow, RunConfig, SearchSpace,
};
use sap_core::tasks::{write_episodes, Stream};
use sap_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "sap", version, about = "Meta-learning experiments: SAP, MAML and T-Net")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(clap::Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file for `strengths` and `gen-tasks`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Meta-train, then meta-test the best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Meta-test a checkpoint on fresh test episodes.
    Test {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/checkpoints/best.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Keep the K strongest operations per set and write the pruned config.
    Prune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short = 'k', long)]
        k: usize,
        /// Retrain the pruned network from a fresh initialization into <out>.
        #[arg(long)]
        retrain: bool,
        /// Inner learning rate for the pruned config; pools of only matrix
        /// operations usually need a smaller one.
        #[arg(long)]
        inner_lr: Option<f64>,
    },
    /// Tabulate activation strengths, aggregated over the given checkpoints.
    Strengths {
        #[command(flatten)]
        common: Common,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Random hyperparameter search over shortened runs.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 30)]
        trials: usize,
    },
    /// Dump episodes as JSON lines.
    GenTasks {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Split {
    Train,
    Validation,
    Test,
}

impl From<Split> for Stream {
    fn from(s: Split) -> Stream {
        match s {
            Split::Train => Stream::Train,
            Split::Validation => Stream::Validation,
            Split::Test => Stream::Test,
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_rows(rows: &[MetricsRow]) {
    for r in rows {
        println!("{} {} {}: {:.6} ± {:.6}", r.tasks_seen, r.split, r.metric, r.mean, r.ci95);
    }
}

fn train(mut cfg: RunConfig, out: Option<PathBuf>) -> Result<()> {
    if out.is_some() {
        cfg.out_dir = out;
    }
    let outcome = meta_train(&cfg)?;
    let tests = test_rows(&outcome.best)?;
    print_rows(&tests);
    if let Some(dir) = &cfg.out_dir {
        let mut rows = outcome.rows;
        rows.extend(tests);
        export_csv(&rows, &dir.join("metrics.csv"))?;
        info!("run written to {}", dir.display());
    }
    Ok(())
}

fn test(common: &Common, checkpoint: Option<PathBuf>) -> Result<()> {
    let path = match (checkpoint, &common.out) {
        (Some(p), _) => p,
        (None, Some(dir)) => checkpoint_dir(dir).join("best.ckpt"),
        (None, None) => return Err(Error::Config("test needs --checkpoint or --out <run dir>".into())),
    };
    let mut ckpt = Checkpoint::load(&path)?;
    if let Some(seed) = common.seed {
        ckpt.config.seed = seed;
    }
    if let Some(cfg_path) = &common.config {
        // Only evaluation settings are taken from the file; the architecture is the checkpoint's.
        let cfg = RunConfig::load(cfg_path)?;
        ckpt.config.test_tasks = cfg.test_tasks;
        ckpt.config.test_steps = cfg.test_steps;
        ckpt.config.threads = cfg.threads;
    }
    let rows = test_rows(&ckpt)?;
    print_rows(&rows);
    if let Some(dir) = &common.out {
        export_csv(&rows, &dir.join("test.csv"))?;
    }
    Ok(())
}

fn prune(common: &Common, checkpoint: &Path, k: usize, retrain: bool, inner_lr: Option<f64>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg = prune_topk(&ckpt, k)?;
    if let Some(lr) = inner_lr {
        cfg.inner_lr = lr;
        cfg.validate()?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.out_dir = common.out.clone();
    for (i, pool) in cfg.pools.iter().flatten().enumerate() {
        println!("set {i}: {}", if pool.is_empty() { "-" } else { pool });
    }
    if retrain {
        return train(cfg, None);
    }
    match &common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            cfg.save(&dir.join("config.toml"))
        }
        None => {
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
    }
}

fn strengths(common: &Common, checkpoints: &[PathBuf]) -> Result<()> {
    let ckpts = checkpoints.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    let table = report_strengths(&ckpts)?;
    for e in &table.entries {
        if let (Some(mean), Some(std)) = (e.mean, e.std) {
            println!("layer {:>2} {:<16} {mean:.4} ± {std:.4}", e.layer, e.op.to_string());
        }
    }
    if let Some(path) = &common.out {
        write_strengths_csv(&table, path)?;
    }
    Ok(())
}

fn search(common: &Common, trials: usize) -> Result<()> {
    let mut base = load_config(common)?;
    base.out_dir = common.out.clone();
    if let Some(dir) = &base.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let results = random_search(&SearchSpace::default(), &base, trials)?;
    for (rank, r) in results.iter().enumerate() {
        println!("#{:<3} trial {:<3} {:?} -> {:?}", rank + 1, r.trial, r.params, r.outcome);
    }
    if let Some(dir) = &base.out_dir {
        write_search_report(&results, &dir.join("search.csv"))?;
    }
    Ok(())
}

fn gen_tasks(common: &Common, count: usize, split: Split) -> Result<()> {
    let cfg = load_config(common)?;
    let spec = cfg.task_spec()?;
    let episodes = (0..count).map(|i| spec.episode(cfg.seed, split.into(), i as u64)).collect::<Result<Vec<_>>>()?;
    match &common.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            write_episodes(&mut w, &episodes)?;
            w.flush().map_err(|e| Error::io(path, e))
        }
        None => write_episodes(&mut std::io::stdout().lock(), &episodes),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            train(cfg, common.out)
        }
        Command::Test { common, checkpoint } => test(&common, checkpoint),
        Command::Prune { common, checkpoint, k, retrain, inner_lr } => {
            prune(&common, &checkpoint, k, retrain, inner_lr)
        }
        Command::Strengths { common, checkpoints } => strengths(&common, &checkpoints),
        Command::Search { common, trials } => search(&common, trials),
        Command::GenTasks { common, count, split } => {
            let threads = load_config(&common)?.threads;
            with_threads(threads, || gen_tasks(&common, count, split))?
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
