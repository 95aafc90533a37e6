// SPDX-License-Identifier: Apache-2.0

//! Oracles for the bilevel objective and the warp identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sap_core::autodiff::{finite_diff, DEFAULT_STEP};
use sap_core::meta::{
    meta_gradient, meta_objective, post_update_output, predict_post_update_output, GradientOrder, MetaConfig,
};
use sap_core::net::{Architecture, LearnerKind, Network, NetworkConfig, OpKind};
use sap_core::tasks::{Episode, EpisodeKind, Targets, TaskParams};
use sap_core::{Init, Tensor, Var};

use super::primitives::norm_relative;

pub struct ToyCase {
    pub name: &'static str,
    pub net: Network,
    pub batch: Vec<Episode>,
}

fn random_episode<R: Rng>(rng: &mut R, support: usize, query: usize) -> Episode {
    let mut t = |n: usize| Tensor::create([n, 1], Init::Uniform(-2.0, 2.0), rng).unwrap();
    Episode {
        kind: EpisodeKind::Regression,
        support_x: t(support),
        support_y: Targets::Values(t(support)),
        query_x: t(query),
        query_y: Targets::Values(t(query)),
        params: TaskParams::Sine { amplitude: 1.0, phase: 0.0, frequency: 1.0, offset: 0.0 },
    }
}

/// Moves every parameter off its initial value so no derivative vanishes by symmetry.
fn scramble<R: Rng>(net: &mut Network, rng: &mut R) {
    for h in net.store().handles().to_vec() {
        let v = Tensor::create(h.tensor.shape().to_vec(), Init::Uniform(-1.0, 1.0), rng).unwrap();
        net.store_mut().set(h.id, v).unwrap();
    }
}

/// Toy networks with at most ten parameters each.
pub fn toy_cases(seed: u64) -> Vec<ToyCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs = [
        (
            "sap-linear",
            NetworkConfig::new(Architecture::Mlp { sizes: vec![1, 1] }, LearnerKind::Sap)
                .with_pools(vec![vec![OpKind::ScalarScale, OpKind::ScalarShift], vec![OpKind::ScalarShift]]),
        ),
        (
            "sap-relu",
            NetworkConfig::new(Architecture::Mlp { sizes: vec![1, 2, 1] }, LearnerKind::Sap).with_pools(vec![
                vec![],
                vec![],
                vec![OpKind::ScalarShift],
            ]),
        ),
        ("maml-relu", NetworkConfig::new(Architecture::Mlp { sizes: vec![1, 2, 1] }, LearnerKind::Maml)),
        ("tnet-linear", NetworkConfig::new(Architecture::Mlp { sizes: vec![1, 1, 1] }, LearnerKind::Tnet)),
    ];
    configs
        .into_iter()
        .map(|(name, cfg)| {
            let mut net = Network::build(&cfg, &mut rng).unwrap();
            assert!(net.param_count() <= 10, "{name} has {} parameters", net.param_count());
            scramble(&mut net, &mut rng);
            let batch = (0..2).map(|_| random_episode(&mut rng, 3, 4)).collect();
            ToyCase { name, net, batch }
        })
        .collect()
}

/// Norm-wise relative error between the autodiff meta-gradient and central
/// differences of the meta-objective.
pub fn meta_gradient_error(case: &ToyCase, steps: usize, order: GradientOrder) -> f64 {
    let cfg = MetaConfig {
        inner_lr: 0.1,
        inner_steps_train: steps,
        inner_steps_eval: steps,
        gradient_order: order,
        ..MetaConfig::default()
    };
    let analytic = meta_gradient(&case.net, &case.batch, &cfg).unwrap();
    let ids = case.net.store().trainable_ids();
    let params: Vec<Tensor> = ids.iter().map(|&id| case.net.store().tensor(id).clone()).collect();
    let numeric = finite_diff(
        |p| {
            let mut probe = case.net.clone();
            for (&id, t) in ids.iter().zip(p) {
                probe.store_mut().set(id, t.clone())?;
            }
            meta_objective(&probe, &case.batch, &cfg)
        },
        &params,
        DEFAULT_STEP,
    )
    .unwrap();
    let analytic: Vec<Tensor> = ids.iter().map(|&id| analytic.grads.get(id).unwrap().clone()).collect();
    norm_relative(&analytic, &numeric, 1e-8)
}

fn quadratic(target: Tensor) -> impl for<'g> Fn(Var<'g>) -> sap_core::Result<Var<'g>> {
    move |v| v.sub(v.graph().constant(target.clone()))?.square().sum()
}

/// Largest gap between the warp prediction and the actual post-step output
/// over `instances` random linear layers.
pub fn warp_identity_error(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (m, n, p) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let normal = Init::Normal(0.0, 1.0);
        let w = Tensor::create([m, n], normal, &mut rng).unwrap();
        let o = Tensor::create([n, p], normal, &mut rng).unwrap();
        let x = Tensor::create([p], normal, &mut rng).unwrap();
        let target = Tensor::create([m, 1], normal, &mut rng).unwrap();
        let alpha = rng.random_range(0.001..0.5);
        let pred = predict_post_update_output(&w, &o, &x, alpha, quadratic(target.clone())).unwrap();
        let actual = post_update_output(&w, &o, &x, alpha, quadratic(target)).unwrap();
        let scale = actual.max_abs().max(1.0);
        worst = worst.max(pred.sub(&actual).unwrap().max_abs() / scale);
    }
    worst
}
