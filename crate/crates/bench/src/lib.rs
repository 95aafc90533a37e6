// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sap_core::net::{Architecture, LearnerKind, Network, NetworkConfig};
use sap_core::tasks::{Episode, ImageTaskSpec, SineRanges, Stream, TaskSpec};

pub fn sine_net(learner: LearnerKind) -> Network {
    let cfg = NetworkConfig::new(Architecture::Mlp { sizes: vec![1, 40, 40, 1] }, learner);
    Network::build(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).expect("valid sine network")
}

pub fn sine_batch(n: usize) -> Vec<Episode> {
    let spec = TaskSpec::Sine { k_shot: 5, n_query: 50, ranges: SineRanges::default() };
    (0..n as u64).map(|i| spec.episode(0, Stream::Train, i).expect("valid episode")).collect()
}

pub fn conv_net(learner: LearnerKind) -> Network {
    let arch = Architecture::Conv { in_channels: 1, side: 8, channels: 8, blocks: 2, classes: 2, kernel: 3 };
    Network::build(&NetworkConfig::new(arch, learner), &mut ChaCha8Rng::seed_from_u64(0)).expect("valid conv network")
}

pub fn image_episode() -> Episode {
    TaskSpec::Image(ImageTaskSpec::new(2, 1, 8)).episode(0, Stream::Train, 0).expect("valid episode")
}
