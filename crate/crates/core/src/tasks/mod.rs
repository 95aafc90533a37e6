// SPDX-License-Identifier: Apache-2.0

//! Seeded episodic task samplers.

mod episode;
mod images;
mod sine;

pub use episode::{read_episodes, write_episodes, Episode, EpisodeKind, Targets, TaskParams, EPISODE_FORMAT_VERSION};
pub use images::{render_pattern, sample_synthetic_image_task, ImageTaskSpec, PATTERN_COUNT};
pub use sine::{
    enumerate_task_families, sample_family_task, sample_sine_task, sample_sine_task_with, SineRanges, SineTask,
    TaskFamily,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Independent random streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Train,
    Validation,
    Test,
    Init,
    Search,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Train => 1,
            Stream::Validation => 2,
            Stream::Test => 3,
            Stream::Init => 4,
            Stream::Search => 5,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of `stream`; distinct streams never share seeds in practice.
pub fn mix_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream.id()) ^ index)
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(master, stream, index))
}

/// Which task distribution a run samples from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskSpec {
    Sine {
        k_shot: usize,
        n_query: usize,
        #[serde(default)]
        ranges: SineRanges,
    },
    Family {
        family: TaskFamily,
        k_shot: usize,
        n_query: usize,
        #[serde(default)]
        ranges: SineRanges,
    },
    Image(ImageTaskSpec),
}

impl TaskSpec {
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Episode> {
        match self {
            TaskSpec::Sine { k_shot, n_query, ranges } => sample_sine_task_with(ranges, rng, *k_shot, *n_query),
            TaskSpec::Family { family, k_shot, n_query, ranges } => {
                sample_family_task(*family, ranges, rng, *k_shot, *n_query)
            }
            TaskSpec::Image(spec) => sample_synthetic_image_task(spec, rng),
        }
    }

    /// Episode `index` of `stream`, reproducible from `master` alone.
    pub fn episode(&self, master: u64, stream: Stream, index: u64) -> Result<Episode> {
        self.sample(&mut stream_rng(master, stream, index))
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, TaskSpec::Image(_))
    }
}
