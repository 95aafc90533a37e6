// SPDX-License-Identifier: Apache-2.0

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::episode::{Episode, EpisodeKind, Targets, TaskParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bars in four orientations at three offsets, then the four filled quadrants.
pub const PATTERN_COUNT: usize = 16;

fn default_query() -> usize {
    15
}

fn default_noise() -> f64 {
    0.1
}

/// N-way k-shot classification of noisy single-channel patterns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageTaskSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub side: usize,
    #[serde(default = "default_query")]
    pub n_query_per_class: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

impl ImageTaskSpec {
    pub fn new(n_way: usize, k_shot: usize, side: usize) -> Self {
        ImageTaskSpec { n_way, k_shot, side, n_query_per_class: default_query(), noise: default_noise() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot == 0 || self.n_query_per_class == 0 {
            return Err(Error::Config("image tasks need n_way ≥ 2 and non-empty splits".into()));
        }
        if self.side < 8 {
            return Err(Error::Config(format!("image side {} is below 8", self.side)));
        }
        if self.n_way > PATTERN_COUNT {
            return Err(Error::Config(format!(
                "{}-way tasks exceed the {PATTERN_COUNT} available patterns",
                self.n_way
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("invalid noise level {}", self.noise)));
        }
        Ok(())
    }
}

/// Noise-free `side × side` image of pattern `index`, row-major with values in {0, 1}.
pub fn render_pattern(index: usize, side: usize) -> Result<Vec<f64>> {
    if index >= PATTERN_COUNT {
        return Err(Error::Config(format!("pattern {index} out of range")));
    }
    let s = side as isize;
    let thick = (s / 8).max(1);
    let mut img = vec![0.0; side * side];
    for i in 0..s {
        for j in 0..s {
            let on = if index < 12 {
                let off = (index as isize % 3 - 1) * (s / 4);
                let c = s / 2 + off;
                let dist = match index / 3 {
                    0 => i - c,
                    1 => j - c,
                    2 => i - j - off,
                    _ => i + j - (s - 1) - off,
                };
                if index / 3 < 2 {
                    (0..thick).contains(&dist)
                } else {
                    dist.abs() < thick
                }
            } else {
                let q = index - 12;
                let (r0, c0) = ((q / 2) as isize * s / 2, (q % 2) as isize * s / 2);
                i >= r0 && i < r0 + s / 2 && j >= c0 && j < c0 + s / 2
            };
            if on {
                img[(i * s + j) as usize] = 1.0;
            }
        }
    }
    Ok(img)
}

pub fn sample_synthetic_image_task<R: Rng + ?Sized>(spec: &ImageTaskSpec, rng: &mut R) -> Result<Episode> {
    spec.validate()?;
    let mut bank: Vec<usize> = (0..PATTERN_COUNT).collect();
    bank.shuffle(rng);
    let patterns: Vec<usize> = bank[..spec.n_way].to_vec();
    let images = patterns.iter().map(|&p| render_pattern(p, spec.side)).collect::<Result<Vec<_>>>()?;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let pixels = spec.side * spec.side;
    let mut draw = |per_class: usize| -> Result<(Tensor, Targets)> {
        let n = per_class * spec.n_way;
        let mut data = Vec::with_capacity(n * pixels);
        let mut labels = Vec::with_capacity(n);
        for (label, img) in images.iter().enumerate() {
            for _ in 0..per_class {
                data.extend(img.iter().map(|&v| v + noise.sample(rng)));
                labels.push(label);
            }
        }
        Ok((Tensor::new([n, 1, spec.side, spec.side], data)?, Targets::Labels(labels)))
    };
    let (support_x, support_y) = draw(spec.k_shot)?;
    let (query_x, query_y) = draw(spec.n_query_per_class)?;
    Ok(Episode {
        kind: EpisodeKind::Classification(spec.n_way),
        support_x,
        support_y,
        query_x,
        query_y,
        params: TaskParams::Image { patterns },
    })
}
