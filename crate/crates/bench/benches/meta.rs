// SPDX-License-Identifier: Apache-2.0

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sap_bench::{conv_net, image_episode, sine_batch, sine_net};
use sap_core::meta::{adapt, outer_step, GradientOrder, MetaConfig, OptimizerKind, OuterOptimizer};
use sap_core::net::LearnerKind;

fn outer_steps(c: &mut Criterion) {
    let batch = sine_batch(4);
    let mut group = c.benchmark_group("outer_step_sine_m4");
    for learner in [LearnerKind::Sap, LearnerKind::Maml, LearnerKind::Tnet] {
        for order in [GradientOrder::First, GradientOrder::Second] {
            let cfg = MetaConfig { gradient_order: order, ..MetaConfig::default() };
            let id = BenchmarkId::new(learner.to_string(), format!("{order:?}"));
            group.bench_function(id, |b| {
                let mut net = sine_net(learner);
                let mut opt = OuterOptimizer::new(OptimizerKind::Adam, 1e-3);
                b.iter(|| outer_step(&mut net, &batch, &cfg, &mut opt).unwrap());
            });
        }
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let ep = sine_batch(1).remove(0);
    let mut group = c.benchmark_group("adapt_sine");
    for learner in [LearnerKind::Sap, LearnerKind::Maml] {
        let net = sine_net(learner);
        for steps in [1, 10] {
            group.bench_function(BenchmarkId::new(learner.to_string(), steps), |b| {
                b.iter(|| adapt(&net, &ep, 0.01, steps).unwrap())
            });
        }
    }
    group.finish();

    let net = conv_net(LearnerKind::Sap);
    let ep = image_episode();
    c.bench_function("adapt_conv_2way_1shot", |b| b.iter(|| adapt(&net, &ep, 0.1, 1).unwrap()));
}

criterion_group!(benches, outer_steps, evaluation);
criterion_main!(benches);
