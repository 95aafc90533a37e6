// SPDX-License-Identifier: Apache-2.0

//! Structural oracles for operation sets and networks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sap_core::net::{
    apply_operation_set, fold_operation_set, Architecture, LearnerKind, Network, NetworkConfig, OpDims, OpKind,
    OperationSet, ParamStore,
};
use sap_core::{Graph, Init, ParamGroup, Tensor};

/// Random non-empty subset of the fully-connected kinds valid at width `d`.
pub fn random_pool<R: Rng>(d: usize, rng: &mut R) -> Vec<OpKind> {
    let ranks: Vec<usize> = [1, 2, 3].into_iter().filter(|&r| r < d).collect();
    let mut kinds = OpKind::fully_connected(&ranks);
    kinds.shuffle(rng);
    let n = rng.random_range(1..=kinds.len());
    kinds.truncate(n);
    kinds
}

/// Largest deviation between a freshly built SAP network and the same
/// backbone without operation sets, over `pools` random pool configurations
/// with `inputs` random inputs each.
pub fn identity_at_init_error(pools: usize, inputs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = vec![3, 8, 6, 2];
    let mut worst = 0.0f64;
    for _ in 0..pools {
        let pool: Vec<Vec<OpKind>> =
            sizes.iter().map(|&d| if rng.random_bool(0.2) { Vec::new() } else { random_pool(d, &mut rng) }).collect();
        let cfg = NetworkConfig::new(Architecture::Mlp { sizes: sizes.clone() }, LearnerKind::Sap).with_pools(pool);
        let mut net = Network::build(&cfg, &mut rng).expect("valid pool");
        // random logits: identity-at-init must not depend on the strengths
        for id in net.store().ids_in(ParamGroup::Strength) {
            let shape = net.store().tensor(id).shape().to_vec();
            let logits = Tensor::create(shape, Init::Normal(0.0, 2.0), &mut rng).unwrap();
            net.store_mut().set(id, logits).unwrap();
        }
        let plain = net.without_operation_sets().unwrap();
        let x = Tensor::create([inputs, sizes[0]], Init::Normal(0.0, 3.0), &mut rng).unwrap();
        let diff = net.predict(&x).unwrap().sub(&plain.predict(&x).unwrap()).unwrap();
        worst = worst.max(diff.max_abs());
    }
    worst
}

/// Largest deviation between a folded random fully-connected set and its
/// direct application, over `sets` sets with `inputs` random vectors each.
pub fn folding_error(sets: usize, inputs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sets {
        let d = rng.random_range(1..=6);
        let kinds = random_pool(d, &mut rng);
        let mut store = ParamStore::new();
        let set = OperationSet::build(&kinds, OpDims::Features(d), &mut store, "f", &mut rng).unwrap();
        for h in store.handles().to_vec() {
            let value = Tensor::create(h.tensor.shape().to_vec(), Init::Normal(0.0, 1.0), &mut rng).unwrap();
            store.set(h.id, value).unwrap();
        }
        let folded = fold_operation_set(&set, &store, d).unwrap();
        let z = Tensor::create([inputs, d], Init::Normal(0.0, 2.0), &mut rng).unwrap();
        let g = Graph::new();
        let vars: Vec<_> = store.handles().iter().map(|h| g.constant(h.tensor.clone())).collect();
        let direct = apply_operation_set(&set, g.constant(z.clone()), &vars).unwrap().tensor();
        // homogeneous rows [z, 1] times foldedᵀ
        let mut homo = Vec::with_capacity(inputs * (d + 1));
        for row in z.data().chunks(d) {
            homo.extend_from_slice(row);
            homo.push(1.0);
        }
        let homo = Tensor::new([inputs, d + 1], homo).unwrap();
        let mapped = homo.matmul(&folded.transpose().unwrap()).unwrap();
        for i in 0..inputs {
            for j in 0..d {
                let a = mapped.data()[i * (d + 1) + j];
                let b = direct.data()[i * d + j];
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
            worst = worst.max((mapped.data()[i * (d + 1) + d] - 1.0).abs());
        }
    }
    worst
}

/// Worst relative error of reverse-mode gradients of a random linear probe of
/// `kind` (w.r.t. its input and parameters) against central differences.
/// Parameters are perturbed away from the identity init first.
pub fn op_gradient_error(kind: OpKind, dims: OpDims, input_shape: &[usize], trials: usize, seed: u64) -> f64 {
    use sap_core::autodiff::finite_diff;
    use sap_core::net::{apply_op, build_op};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut store = ParamStore::new();
        let op = build_op(kind, dims, &mut store, "p", &mut rng).unwrap();
        for h in store.handles().to_vec() {
            let v = Tensor::create(h.tensor.shape().to_vec(), Init::Normal(0.0, 1.0), &mut rng).unwrap();
            store.set(h.id, v).unwrap();
        }
        let mut inputs = vec![Tensor::create(input_shape.to_vec(), Init::Normal(0.0, 1.0), &mut rng).unwrap()];
        inputs.extend(store.handles().iter().map(|h| h.tensor.clone()));
        let weights = Tensor::create(input_shape.to_vec(), Init::Normal(0.0, 1.0), &mut rng).unwrap();
        let probe = |g: &Graph, xs: &[sap_core::Var<'_>]| -> sap_core::Result<f64> {
            let out = apply_op(&op, xs[0], &xs[1..])?;
            out.mul(g.constant(weights.clone()))?.sum()?.item()
        };

        let g = Graph::new();
        let xs: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = apply_op(&op, xs[0], &xs[1..]).unwrap();
        assert_eq!(out.shape(), input_shape, "{kind} changed the shape");
        let loss = out.mul(g.constant(weights.clone())).unwrap().sum().unwrap();
        let analytic: Vec<Tensor> = g.gradient(loss, &xs, false).unwrap().iter().map(|v| v.tensor()).collect();
        let numeric = finite_diff(
            |p| {
                let g = Graph::new();
                let xs: Vec<_> = p.iter().map(|t| g.constant(t.clone())).collect();
                probe(&g, &xs)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        worst = worst.max(super::primitives::norm_relative(&analytic, &numeric, 1e-12));
    }
    worst
}

/// Every convolutional candidate kind on a 3-channel 3×3 position.
pub fn conv_kinds() -> Vec<(OpKind, OpDims)> {
    let dims = OpDims::Channels { channels: 3, kernel: 3 };
    OpKind::convolutional(&[1, 2]).into_iter().map(|k| (k, dims)).collect()
}
