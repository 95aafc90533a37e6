// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::episode::{Episode, EpisodeKind, Targets, TaskParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sampling intervals for sine-like tasks, all inclusive of the lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SineRanges {
    pub amplitude: (f64, f64),
    pub phase: (f64, f64),
    pub frequency: (f64, f64),
    pub offset: (f64, f64),
    pub input: (f64, f64),
}

impl Default for SineRanges {
    fn default() -> Self {
        SineRanges {
            amplitude: (0.1, 5.0),
            phase: (0.0, PI),
            frequency: (0.5, 2.0),
            offset: (-2.0, 2.0),
            input: (-5.0, 5.0),
        }
    }
}

/// `g(x) = A · sin(f·x − p) + β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTask {
    pub amplitude: f64,
    pub phase: f64,
    pub frequency: f64,
    pub offset: f64,
}

impl SineTask {
    /// Values that leave `sin(x)` unaltered.
    pub const IDENTITY: SineTask = SineTask { amplitude: 1.0, phase: 0.0, frequency: 1.0, offset: 0.0 };

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (self.frequency * x - self.phase).sin() + self.offset
    }

    fn params(&self) -> TaskParams {
        TaskParams::Sine {
            amplitude: self.amplitude,
            phase: self.phase,
            frequency: self.frequency,
            offset: self.offset,
        }
    }

    /// Draws `k` support and `n_query` query points with inputs from `input`.
    pub fn episode<R: Rng + ?Sized>(
        &self,
        input: (f64, f64),
        rng: &mut R,
        k: usize,
        n_query: usize,
    ) -> Result<Episode> {
        if k == 0 || n_query == 0 {
            return Err(Error::Config("sine episodes need at least one support and one query point".into()));
        }
        let mut draw = |n: usize| -> Result<(Tensor, Targets)> {
            let xs: Vec<f64> = (0..n).map(|_| uniform(rng, input)).collect();
            let ys: Vec<f64> = xs.iter().map(|&x| self.eval(x)).collect();
            Ok((Tensor::new([n, 1], xs)?, Targets::Values(Tensor::new([n, 1], ys)?)))
        };
        let (support_x, support_y) = draw(k)?;
        let (query_x, query_y) = draw(n_query)?;
        Ok(Episode { kind: EpisodeKind::Regression, support_x, support_y, query_x, query_y, params: self.params() })
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Sine regression with amplitude and phase drawn from the default ranges.
pub fn sample_sine_task<R: Rng + ?Sized>(rng: &mut R, k: usize, n_query: usize) -> Result<Episode> {
    sample_sine_task_with(&SineRanges::default(), rng, k, n_query)
}

pub fn sample_sine_task_with<R: Rng + ?Sized>(
    ranges: &SineRanges,
    rng: &mut R,
    k: usize,
    n_query: usize,
) -> Result<Episode> {
    let task =
        SineTask { amplitude: uniform(rng, ranges.amplitude), phase: uniform(rng, ranges.phase), ..SineTask::IDENTITY };
    task.episode(ranges.input, rng, k, n_query)
}

/// Which of the four template parameters a family varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskFamily {
    pub vary_amplitude: bool,
    pub vary_frequency: bool,
    pub vary_phase: bool,
    pub vary_offset: bool,
}

impl TaskFamily {
    /// Family `i` of [`enumerate_task_families`]: bit 0 amplitude, bit 1
    /// frequency, bit 2 phase, bit 3 offset.
    pub fn from_index(i: usize) -> Result<Self> {
        if i >= 16 {
            return Err(Error::Config(format!("task family index {i} out of range 0..16")));
        }
        Ok(TaskFamily {
            vary_amplitude: i & 1 != 0,
            vary_frequency: i & 2 != 0,
            vary_phase: i & 4 != 0,
            vary_offset: i & 8 != 0,
        })
    }

    pub fn index(&self) -> usize {
        self.vary_amplitude as usize
            | (self.vary_frequency as usize) << 1
            | (self.vary_phase as usize) << 2
            | (self.vary_offset as usize) << 3
    }
}

impl std::fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = [
            (self.vary_amplitude, "amplitude"),
            (self.vary_frequency, "frequency"),
            (self.vary_phase, "phase"),
            (self.vary_offset, "offset"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            f.write_str("fixed")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

/// All 16 families in index order.
pub fn enumerate_task_families() -> Vec<TaskFamily> {
    (0..16).map(|i| TaskFamily::from_index(i).expect("in range")).collect()
}

pub fn sample_family_task<R: Rng + ?Sized>(
    family: TaskFamily,
    ranges: &SineRanges,
    rng: &mut R,
    k: usize,
    n_query: usize,
) -> Result<Episode> {
    let id = SineTask::IDENTITY;
    let mut pick = |vary: bool, range, fixed| if vary { uniform(rng, range) } else { fixed };
    let task = SineTask {
        amplitude: pick(family.vary_amplitude, ranges.amplitude, id.amplitude),
        frequency: pick(family.vary_frequency, ranges.frequency, id.frequency),
        phase: pick(family.vary_phase, ranges.phase, id.phase),
        offset: pick(family.vary_offset, ranges.offset, id.offset),
    };
    task.episode(ranges.input, rng, k, n_query)
}
