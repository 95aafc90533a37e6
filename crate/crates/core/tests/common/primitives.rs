// SPDX-License-Identifier: Apache-2.0

//! Finite-difference checks for every differentiable primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sap_core::autodiff::{self, finite_diff, Graph, Var};
use sap_core::{Result, Tensor};

type Build = for<'g> fn(&[Var<'g>]) -> Result<Var<'g>>;

pub struct PrimitiveCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub domain: (f64, f64),
    pub build: Build,
    /// Rejects inputs too close to a non-differentiable point.
    pub valid: fn(&[Tensor]) -> bool,
}

fn always(_: &[Tensor]) -> bool {
    true
}

fn away_from_kink(x: &[Tensor]) -> bool {
    x[0].data().iter().all(|v| v.abs() >= 1e-3)
}

fn no_pool_ties(x: &[Tensor]) -> bool {
    let t = &x[0];
    let s = t.shape();
    let (h, w) = (s[2], s[3]);
    for plane in 0..s[0] * s[1] {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let mut vals: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| t.data()[plane * h * w + (2 * y + dy) * w + 2 * xx + dx])
                    .collect();
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if vals[0] - vals[1] < 1e-3 {
                    return false;
                }
            }
        }
    }
    true
}

fn v(shape: &[usize]) -> Vec<usize> {
    shape.to_vec()
}

pub fn cases() -> Vec<PrimitiveCase> {
    fn case(name: &'static str, shapes: &[&[usize]], build: Build) -> PrimitiveCase {
        PrimitiveCase { name, shapes: shapes.iter().map(|s| v(s)).collect(), domain: (-2.0, 2.0), build, valid: always }
    }
    let mut out = vec![
        case("add", &[&[3, 4], &[3, 4]], |x| x[0].add(x[1])),
        case("add_broadcast", &[&[3, 4], &[4]], |x| x[0].add(x[1])),
        case("sub", &[&[2, 3], &[2, 3]], |x| x[0].sub(x[1])),
        case("mul", &[&[2, 3], &[2, 3]], |x| x[0].mul(x[1])),
        case("mul_broadcast", &[&[2, 3, 2], &[3, 1]], |x| x[0].mul(x[1])),
        case("scale", &[&[5]], |x| Ok(x[0].scale(-1.7))),
        case("add_scalar", &[&[5]], |x| Ok(x[0].add_scalar(0.3))),
        case("broadcast_to", &[&[1, 3]], |x| x[0].broadcast_to(&[4, 3])),
        case("sum_to", &[&[4, 3]], |x| x[0].sum_to(&[3])),
        case("sum_axes", &[&[2, 3, 2, 2]], |x| x[0].sum_axes(&[0, 2, 3])),
        case("sum", &[&[3, 3]], |x| x[0].sum()),
        case("mean", &[&[3, 3]], |x| x[0].mean()),
        case("matmul", &[&[3, 4], &[4, 2]], |x| x[0].matmul(x[1])),
        case("transpose", &[&[3, 2]], |x| x[0].transpose()),
        case("reshape", &[&[2, 6]], |x| x[0].reshape(&[3, 4])),
        case("flatten", &[&[2, 2, 2, 2]], |x| x[0].flatten()),
        case("exp", &[&[4]], |x| Ok(x[0].exp())),
        case("square", &[&[4]], |x| Ok(x[0].square())),
        case("pick", &[&[6]], |x| x[0].pick(4)),
        case("conv2d_3x3", &[&[2, 2, 5, 5], &[3, 2, 3, 3]], |x| x[0].conv2d(x[1])),
        case("conv2d_1x1", &[&[2, 3, 4, 4], &[3, 3, 1, 1]], |x| x[0].conv2d(x[1])),
        case("conv2d_kernel_grad", &[&[2, 2, 4, 4], &[2, 3, 4, 4]], |x| x[0].conv2d_kernel_grad(x[1], 3)),
        case("kernel_flip_transpose", &[&[2, 3, 3, 3]], |x| x[0].kernel_flip_transpose()),
        case("softmax", &[&[3, 4]], |x| autodiff::softmax(x[0])),
        case("log_softmax", &[&[3, 4]], |x| autodiff::log_softmax(x[0])),
        case("cross_entropy", &[&[3, 4]], |x| autodiff::softmax_cross_entropy(x[0], &[0, 3, 1])),
        case("mse", &[&[4, 2], &[4, 2]], |x| autodiff::mse_loss(x[0], x[1])),
        case("batch_norm_4d", &[&[3, 2, 2, 2], &[2], &[2]], |x| autodiff::batch_norm(x[0], x[1], x[2], 1e-5)),
        case("batch_norm_2d", &[&[4, 3], &[3], &[3]], |x| autodiff::batch_norm(x[0], x[1], x[2], 1e-5)),
    ];
    let positive =
        |name, build: Build| PrimitiveCase { name, shapes: vec![v(&[5])], domain: (0.5, 2.0), build, valid: always };
    out.push(positive("ln", |x| Ok(x[0].ln())));
    out.push(positive("powf_neg_half", |x| Ok(x[0].powf(-0.5))));
    out.push(positive("powf_cube", |x| Ok(x[0].powf(3.0))));
    out.push(PrimitiveCase {
        name: "relu",
        shapes: vec![v(&[6])],
        domain: (-2.0, 2.0),
        build: |x| Ok(x[0].relu()),
        valid: away_from_kink,
    });
    out.push(PrimitiveCase {
        name: "maxpool2x2",
        shapes: vec![v(&[2, 2, 4, 4])],
        domain: (-2.0, 2.0),
        build: |x| x[0].maxpool2x2(),
        valid: no_pool_ties,
    });
    out
}

fn sample_inputs(case: &PrimitiveCase, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    loop {
        let inputs: Vec<Tensor> = case
            .shapes
            .iter()
            .map(|s| {
                let n = s.iter().product();
                let data = (0..n).map(|_| rng.random_range(case.domain.0..case.domain.1)).collect();
                Tensor::new(s.clone(), data).unwrap()
            })
            .collect();
        if (case.valid)(&inputs) {
            return inputs;
        }
    }
}

/// Scalar probe `sum(f(x) ⊙ weights)` so every output element matters.
fn probe<'g>(g: &'g Graph, case: &PrimitiveCase, xs: &[Var<'g>], weights: &Tensor) -> Result<Var<'g>> {
    let out = (case.build)(xs)?;
    out.mul(g.constant(weights.clone()))?.sum()
}

fn output_weights(case: &PrimitiveCase, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> Tensor {
    let g = Graph::new();
    let xs: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let shape = (case.build)(&xs).unwrap().shape();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)` over all tensors jointly.
pub fn norm_relative(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.data().iter().zip(y.data()) {
            diff += (p - q) * (p - q);
            na += p * p;
            nb += q * q;
        }
    }
    diff.sqrt() / f64::sqrt(na).max(f64::sqrt(nb)).max(floor)
}

/// Worst relative error of reverse-mode gradients against central
/// differences over `trials` random inputs.
pub fn first_order_error(case: &PrimitiveCase, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let inputs = sample_inputs(case, &mut rng);
        let weights = output_weights(case, &inputs, &mut rng);
        let g = Graph::new();
        let xs: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = probe(&g, case, &xs, &weights).unwrap();
        let analytic: Vec<Tensor> = g.gradient(loss, &xs, false).unwrap().iter().map(|v| v.tensor()).collect();
        let numeric = finite_diff(
            |p| {
                let g = Graph::new();
                let xs: Vec<Var> = p.iter().map(|t| g.constant(t.clone())).collect();
                probe(&g, case, &xs, &weights)?.item()
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        worst = worst.max(norm_relative(&analytic, &numeric, 1e-12));
    }
    worst
}

/// Differentiates `s(x) = sum_i <∇_i f(x), r_i>` in reverse mode through the
/// recorded backward pass and compares against central differences of `s`
/// computed from first-order gradients.
pub fn second_order_error(case: &PrimitiveCase, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let inputs = sample_inputs(case, &mut rng);
        let weights = output_weights(case, &inputs, &mut rng);
        let directions: Vec<Tensor> = inputs.iter().map(|t| t.map(|_| rng.random_range(-1.0..1.0))).collect();
        let g = Graph::new();
        let xs: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = probe(&g, case, &xs, &weights).unwrap();
        let grads = g.gradient(loss, &xs, true).unwrap();
        let mut s = g.scalar(0.0);
        for (gr, d) in grads.iter().zip(&directions) {
            s = s.add(gr.mul(g.constant(d.clone())).unwrap().sum().unwrap()).unwrap();
        }
        let analytic: Vec<Tensor> = g.gradient(s, &xs, false).unwrap().iter().map(|v| v.tensor()).collect();

        let numeric = finite_diff(
            |p| {
                let g = Graph::new();
                let xs: Vec<Var> = p.iter().map(|t| g.leaf(t.clone())).collect();
                let loss = probe(&g, case, &xs, &weights)?;
                let grads = g.gradient(loss, &xs, false)?;
                let mut total = 0.0;
                for (gr, d) in grads.iter().zip(&directions) {
                    total += gr.value().data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>();
                }
                Ok(total)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        worst = worst.max(norm_relative(&analytic, &numeric, 1e-3));
    }
    worst
}
