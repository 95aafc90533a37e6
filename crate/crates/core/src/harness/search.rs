// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::train::{is_better, meta_train};
use super::RunConfig;
use crate::error::{Error, Result};
use crate::tasks::{stream_rng, Stream};

/// Random-search ranges; every bound is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Sampled log-uniformly.
    pub inner_lr: (f64, f64),
    pub inner_steps_train: (usize, usize),
    /// Upper bound of the evaluation steps; the lower bound is the sampled training count.
    pub inner_steps_eval_max: usize,
    pub meta_batch_size: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            inner_lr: (1e-3, 6e-1),
            inner_steps_train: (1, 10),
            inner_steps_eval_max: 15,
            meta_batch_size: (1, 10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub inner_lr: f64,
    pub inner_steps_train: usize,
    pub inner_steps_eval: usize,
    pub meta_batch_size: usize,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.inner_lr;
        let ok = lo > 0.0
            && lo <= hi
            && hi.is_finite()
            && self.inner_steps_train.0 >= 1
            && self.inner_steps_train.0 <= self.inner_steps_train.1
            && self.inner_steps_train.1 <= self.inner_steps_eval_max
            && self.meta_batch_size.0 >= 1
            && self.meta_batch_size.0 <= self.meta_batch_size.1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid search space {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialParams {
        let (lo, hi) = self.inner_lr;
        let inner_lr = (rng.random_range(lo.ln()..=hi.ln())).exp().clamp(lo, hi);
        let inner_steps_train = rng.random_range(self.inner_steps_train.0..=self.inner_steps_train.1);
        TrialParams {
            inner_lr,
            inner_steps_train,
            inner_steps_eval: rng.random_range(inner_steps_train..=self.inner_steps_eval_max),
            meta_batch_size: rng.random_range(self.meta_batch_size.0..=self.meta_batch_size.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub params: TrialParams,
    /// Best validation metric, or the failure message.
    pub outcome: std::result::Result<f64, String>,
}

/// Runs `trials` shortened meta-training runs with sampled hyperparameters
/// and returns them ranked best first; failed trials are kept at the end.
pub fn random_search(space: &SearchSpace, base: &RunConfig, trials: usize) -> Result<Vec<TrialResult>> {
    space.validate()?;
    if trials == 0 {
        return Err(Error::Config("random search needs at least one trial".into()));
    }
    let mut results = Vec::with_capacity(trials);
    for trial in 0..trials {
        let params = space.sample(&mut stream_rng(base.seed, Stream::Search, trial as u64));
        let cfg = RunConfig {
            inner_lr: params.inner_lr,
            inner_steps_train: params.inner_steps_train,
            inner_steps_eval: Some(params.inner_steps_eval),
            meta_batch_size: params.meta_batch_size,
            out_dir: base.out_dir.as_ref().map(|d| d.join(format!("trial_{trial:03}"))),
            ..base.clone()
        };
        let outcome = meta_train(&cfg)
            .and_then(|o| o.best.best_score.ok_or_else(|| Error::Config("no validation score".into())))
            .map_err(|e| e.to_string());
        log::info!("trial {trial}: {params:?} -> {outcome:?}");
        results.push(TrialResult { trial, params, outcome });
    }
    results.sort_by(|a, b| match (&a.outcome, &b.outcome) {
        (Ok(x), Ok(y)) if x == y => a.trial.cmp(&b.trial),
        (Ok(x), Ok(y)) => {
            if is_better(base, *x, Some(*y)) {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Greater
            }
        }
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.trial.cmp(&b.trial),
    });
    Ok(results)
}

pub fn write_search_report(results: &[TrialResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "rank",
        "trial",
        "inner_lr",
        "inner_steps_train",
        "inner_steps_eval",
        "meta_batch_size",
        "status",
        "validation_metric",
    ])?;
    for (rank, r) in results.iter().enumerate() {
        let (status, score) = match &r.outcome {
            Ok(v) => ("ok".to_string(), v.to_string()),
            Err(e) => (format!("failed: {e}"), "NA".to_string()),
        };
        w.write_record([
            (rank + 1).to_string(),
            r.trial.to_string(),
            r.params.inner_lr.to_string(),
            r.params.inner_steps_train.to_string(),
            r.params.inner_steps_eval.to_string(),
            r.params.meta_batch_size.to_string(),
            status,
            score,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Uniform};

    use super::*;

    #[test]
    fn samples_stay_in_bounds() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let p = space.sample(&mut rng);
            assert!((1e-3..=6e-1).contains(&p.inner_lr));
            assert!((1..=10).contains(&p.inner_steps_train));
            assert!((p.inner_steps_train..=15).contains(&p.inner_steps_eval));
            assert!((1..=10).contains(&p.meta_batch_size));
        }
    }

    #[test]
    fn log_inner_lr_is_uniform() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut logs: Vec<f64> = (0..1000).map(|_| space.sample(&mut rng).inner_lr.ln()).collect();
        logs.sort_by(f64::total_cmp);
        let dist = Uniform::new(1e-3f64.ln(), 6e-1f64.ln()).unwrap();
        let n = logs.len() as f64;
        let d = logs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = dist.cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov-Smirnov critical value at α = 0.01
        assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
    }
}
