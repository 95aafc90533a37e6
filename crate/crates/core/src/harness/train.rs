// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;

use super::metrics::{export_csv, summarize, MetricsRow};
use super::strengths::{report_strengths, write_strengths_csv};
use super::{Checkpoint, RunConfig};
use crate::error::{Error, Result};
use crate::meta::{adapt, outer_step, AdaptResult, OuterOptimizer};
use crate::net::{LearnerKind, Network};
use crate::tasks::{Episode, Stream};

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Freshly initialised network for `cfg`, drawn from the run's init stream.
pub fn initial_network(cfg: &RunConfig) -> Result<Network> {
    let mut rng = crate::tasks::stream_rng(cfg.seed, Stream::Init, 0);
    Network::build(&cfg.network()?, &mut rng)
}

pub fn fresh_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let meta = cfg.meta();
    Ok(Checkpoint {
        config: cfg.clone(),
        network: initial_network(cfg)?,
        optimizer: OuterOptimizer::new(meta.outer_optimizer, meta.outer_lr),
        tasks_seen: 0,
        best_score: None,
    })
}

/// Adapts a copy of the initialization to episodes `0..n_tasks` of `stream`
/// and scores each on its query set. Results are in episode order.
pub fn evaluate(
    net: &Network,
    cfg: &RunConfig,
    stream: Stream,
    n_tasks: usize,
    steps: usize,
) -> Result<Vec<AdaptResult>> {
    let spec = cfg.task_spec()?;
    (0..n_tasks)
        .into_par_iter()
        .map(|i| adapt(net, &spec.episode(cfg.seed, stream, i as u64)?, cfg.inner_lr, steps))
        .collect()
}

fn metric_name(cfg: &RunConfig, steps: usize) -> String {
    let base = if cfg.task_spec().map(|s| s.is_classification()).unwrap_or(false) { "accuracy" } else { "mse" };
    format!("{base}_t{steps}")
}

fn evaluation_row(
    ckpt: &Checkpoint,
    stream: Stream,
    n_tasks: usize,
    steps: usize,
    seconds: impl FnOnce() -> f64,
) -> Result<MetricsRow> {
    let results = evaluate(&ckpt.network, &ckpt.config, stream, n_tasks, steps)?;
    let values: Vec<f64> = results.iter().map(|r| r.query_metric).collect();
    let (mean, ci95) = summarize(&values);
    Ok(MetricsRow {
        tasks_seen: ckpt.tasks_seen,
        split: match stream {
            Stream::Validation => "validation",
            Stream::Test => "test",
            _ => "other",
        }
        .into(),
        metric: metric_name(&ckpt.config, steps),
        mean,
        ci95,
        seconds: seconds(),
    })
}

/// Scores the checkpoint on the fixed validation episodes with the evaluation step count.
pub fn meta_validate(ckpt: &Checkpoint, n_tasks: usize) -> Result<MetricsRow> {
    let start = Instant::now();
    evaluation_row(ckpt, Stream::Validation, n_tasks, ckpt.config.eval_steps(), || start.elapsed().as_secs_f64())
}

/// Scores the checkpoint on fresh test episodes after `steps` inner steps.
pub fn meta_test(ckpt: &Checkpoint, n_tasks: usize, steps: usize) -> Result<MetricsRow> {
    let start = Instant::now();
    evaluation_row(ckpt, Stream::Test, n_tasks, steps, || start.elapsed().as_secs_f64())
}

/// Higher accuracy or lower loss.
pub fn is_better(cfg: &RunConfig, candidate: f64, incumbent: Option<f64>) -> bool {
    let classification = cfg.task_spec().map(|s| s.is_classification()).unwrap_or(false);
    match incumbent {
        None => candidate.is_finite(),
        Some(best) if classification => candidate > best,
        Some(best) => candidate < best,
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation score.
    pub best: Checkpoint,
    /// State after the final outer step.
    pub last: Checkpoint,
    pub rows: Vec<MetricsRow>,
}

pub fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    if let Some(dir) = &cfg.out_dir {
        let ckpts = checkpoint_dir(dir);
        std::fs::create_dir_all(&ckpts).map_err(|e| Error::io(&ckpts, e))?;
        cfg.save(&dir.join("config.toml"))?;
    }
    Ok(())
}

/// Meta-trains on `total_train_tasks` tasks in batches of `meta_batch_size`,
/// validating every `validate_every` tasks and keeping the best checkpoint.
///
/// With an output directory the config, metrics, strengths and checkpoints
/// are written there; the best checkpoint is saved as soon as it improves,
/// so it survives a divergence.
pub fn meta_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    with_threads(cfg.threads, || train_loop(cfg))?
}

fn train_loop(cfg: &RunConfig) -> Result<TrainOutcome> {
    prepare_out_dir(cfg)?;
    let start = Instant::now();
    let spec = cfg.task_spec()?;
    let meta = cfg.meta();
    let mut state = fresh_checkpoint(cfg)?;
    let mut best: Option<Checkpoint> = None;
    let mut rows = Vec::new();
    let m = cfg.meta_batch_size as u64;
    let batches = cfg.total_train_tasks.div_ceil(m);
    let mut interval_losses = Vec::new();
    let mut last_validated = 0u64;

    for b in 0..batches {
        let batch =
            (0..m).map(|j| spec.episode(cfg.seed, Stream::Train, b * m + j)).collect::<Result<Vec<Episode>>>()?;
        let step = outer_step(&mut state.network, &batch, &meta, &mut state.optimizer).map_err(|e| {
            if let Some(dir) = &cfg.out_dir {
                let _ = export_csv(&rows, &dir.join("metrics.csv"));
            }
            log::error!("meta-training stopped after {} tasks: {e}", state.tasks_seen);
            e
        })?;
        state.tasks_seen += m;
        interval_losses.extend(step.task_losses);

        let due = state.tasks_seen / cfg.validate_every > last_validated / cfg.validate_every;
        if !due && b + 1 < batches {
            continue;
        }
        last_validated = state.tasks_seen;
        let (mean, ci95) = summarize(&interval_losses);
        interval_losses.clear();
        rows.push(MetricsRow {
            tasks_seen: state.tasks_seen,
            split: "train".into(),
            metric: format!("query_loss_t{}", cfg.inner_steps_train),
            mean,
            ci95,
            seconds: start.elapsed().as_secs_f64(),
        });
        let mut row = match meta_validate(&state, cfg.validation_tasks) {
            Ok(row) => row,
            // A validation episode blowing up disqualifies this checkpoint
            // without stopping training.
            Err(Error::Divergence { step, context }) => {
                log::warn!("validation diverged after {} tasks (inner step {step}: {context})", state.tasks_seen);
                MetricsRow {
                    tasks_seen: state.tasks_seen,
                    split: "validation".into(),
                    metric: metric_name(cfg, cfg.eval_steps()),
                    mean: f64::INFINITY,
                    ci95: f64::NAN,
                    seconds: 0.0,
                }
            }
            Err(e) => return Err(e),
        };
        row.seconds = start.elapsed().as_secs_f64();
        info!(
            "tasks {:>7}  train loss {:.4}  validation {} {:.4} ± {:.4}",
            state.tasks_seen, mean, row.metric, row.mean, row.ci95
        );
        if is_better(cfg, row.mean, best.as_ref().and_then(|c| c.best_score)) {
            state.best_score = Some(row.mean);
            let snapshot = state.clone();
            if let Some(dir) = &cfg.out_dir {
                snapshot.save(&checkpoint_dir(dir).join("best.ckpt"))?;
            }
            best = Some(snapshot);
        }
        rows.push(row);
        if let Some(dir) = &cfg.out_dir {
            export_csv(&rows, &dir.join("metrics.csv"))?;
        }
    }

    let best = match best {
        Some(b) => b,
        None => {
            return Err(Error::Divergence {
                step: state.optimizer.steps() as usize,
                context: "no finite validation score was recorded".into(),
            })
        }
    };
    if let Some(dir) = &cfg.out_dir {
        state.save(&checkpoint_dir(dir).join("last.ckpt"))?;
        if cfg.learner == LearnerKind::Sap {
            write_strengths_csv(&report_strengths(std::slice::from_ref(&best))?, &dir.join("strengths.csv"))?;
        }
    }
    Ok(TrainOutcome { best, last: state, rows })
}

/// Evaluates the checkpoint at every configured test step count.
pub fn test_rows(ckpt: &Checkpoint) -> Result<Vec<MetricsRow>> {
    with_threads(ckpt.config.threads, || {
        ckpt.config
            .test_steps
            .iter()
            .map(|&steps| meta_test(ckpt, ckpt.config.test_tasks, steps))
            .collect::<Result<Vec<_>>>()
    })?
}
