// SPDX-License-Identifier: Apache-2.0

use rand::Rng;

use super::{Architecture, LearnerKind, NetworkConfig, OpDims, OpKind, OperationSet, ParamStore};
use crate::autodiff::{batch_norm, Graph, ParamGroup, ParamHandle, ParamId, Var};
use crate::error::{Error, Result};
use crate::net::apply_operation_set;
use crate::tensor::{Init, Tensor};

const BN_EPS: f64 = 1e-5;

/// One step of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Ops(OperationSet),
    /// `z W + b` with `W` stored as `[d_in, d_out]`.
    Dense {
        weight: ParamId,
        bias: ParamId,
    },
    /// Linear warp: `[d, d]` matrix on features or `[C, C, 1, 1]` on maps.
    Warp {
        matrix: ParamId,
    },
    Relu,
    /// Same-padded convolution with a per-channel bias.
    Conv {
        weight: ParamId,
        bias: ParamId,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
    },
    MaxPool,
    Flatten,
}

/// Disjoint split of every parameter of a network.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    /// Base weights and warps.
    pub theta: Vec<ParamId>,
    /// Candidate-operation parameters.
    pub phi: Vec<ParamId>,
    /// Strength logits.
    pub lambda: Vec<ParamId>,
}

/// A base learner with optional operation sets or warps, plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
    store: ParamStore,
}

fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Result<Tensor> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::create(shape.to_vec(), Init::Uniform(-bound, bound), rng)
}

struct Builder<'a, R: ?Sized> {
    store: ParamStore,
    layers: Vec<Layer>,
    pools: Vec<Vec<OpKind>>,
    positions: Vec<OpDims>,
    warps: Vec<bool>,
    learner: LearnerKind,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn ops(&mut self, position: usize) -> Result<()> {
        if self.learner != LearnerKind::Sap || self.pools[position].is_empty() {
            return Ok(());
        }
        let set = OperationSet::build(
            &self.pools[position],
            self.positions[position],
            &mut self.store,
            &format!("ops{position}"),
            self.rng,
        )?;
        self.layers.push(Layer::Ops(set));
        Ok(())
    }

    fn warp(&mut self, index: usize, dims: OpDims) -> Result<()> {
        if self.learner != LearnerKind::Tnet || !self.warps[index] {
            return Ok(());
        }
        let init = match dims {
            OpDims::Features(d) => Tensor::eye(d)?,
            OpDims::Channels { channels: c, .. } => Tensor::eye(c)?.reshape([c, c, 1, 1])?,
        };
        let matrix = self.store.add(format!("warp{index}.matrix"), ParamGroup::Warp, init);
        self.layers.push(Layer::Warp { matrix });
        Ok(())
    }

    fn dense(&mut self, index: usize, d_in: usize, d_out: usize) -> Result<()> {
        let w = uniform_fan_in(&[d_in, d_out], d_in, self.rng)?;
        let b = uniform_fan_in(&[d_out], d_in, self.rng)?;
        let weight = self.store.add(format!("dense{index}.weight"), ParamGroup::Base, w);
        let bias = self.store.add(format!("dense{index}.bias"), ParamGroup::Base, b);
        self.layers.push(Layer::Dense { weight, bias });
        Ok(())
    }
}

impl Network {
    pub fn build<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        config.arch.validate()?;
        let mut b = Builder {
            store: ParamStore::new(),
            layers: Vec::new(),
            pools: config.resolved_pools()?,
            positions: config.arch.op_positions(),
            warps: config.resolved_warps()?,
            learner: config.learner,
            rng,
        };
        match &config.arch {
            Architecture::Mlp { sizes } => {
                let depth = sizes.len() - 1;
                for l in 0..depth {
                    b.ops(l)?;
                    b.dense(l, sizes[l], sizes[l + 1])?;
                    b.warp(l, OpDims::Features(sizes[l + 1]))?;
                    if l + 1 < depth {
                        b.layers.push(Layer::Relu);
                    }
                }
                b.ops(depth)?;
            }
            &Architecture::Conv { in_channels, side, channels, blocks, classes, kernel } => {
                for blk in 0..blocks {
                    b.ops(blk)?;
                    let c_in = if blk == 0 { in_channels } else { channels };
                    let fan_in = c_in * kernel * kernel;
                    let w = uniform_fan_in(&[channels, c_in, kernel, kernel], fan_in, b.rng)?;
                    let bias = uniform_fan_in(&[channels], fan_in, b.rng)?;
                    let weight = b.store.add(format!("conv{blk}.weight"), ParamGroup::Base, w);
                    let bias = b.store.add(format!("conv{blk}.bias"), ParamGroup::Base, bias);
                    b.layers.push(Layer::Conv { weight, bias });
                    b.warp(blk, OpDims::Channels { channels, kernel: 1 })?;
                    let gamma = b.store.add(format!("bn{blk}.gamma"), ParamGroup::Base, Tensor::ones([channels])?);
                    let beta = b.store.add(format!("bn{blk}.beta"), ParamGroup::Base, Tensor::zeros([channels])?);
                    b.layers.push(Layer::BatchNorm { gamma, beta });
                    b.layers.push(Layer::Relu);
                    b.layers.push(Layer::MaxPool);
                }
                b.layers.push(Layer::Flatten);
                let spatial = side >> blocks;
                let features = channels * spatial * spatial;
                b.ops(blocks)?;
                b.dense(blocks, features, classes)?;
                b.warp(blocks, OpDims::Features(classes))?;
                b.ops(blocks + 1)?;
            }
        }
        Ok(Network { config: config.clone(), layers: b.layers, store: b.store })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn learner(&self) -> LearnerKind {
        self.config.learner
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.store.handles().iter().map(|h| h.tensor.numel()).sum()
    }

    pub fn partition(&self) -> Partition {
        let mut p = Partition::default();
        for h in self.store.handles() {
            match h.group {
                ParamGroup::Base | ParamGroup::Warp => p.theta.push(h.id),
                ParamGroup::Operation => p.phi.push(h.id),
                ParamGroup::Strength => p.lambda.push(h.id),
            }
        }
        p
    }

    /// Parameters the inner loop updates for this network's learner.
    pub fn adapted_ids(&self) -> Vec<ParamId> {
        self.store.ids_in(self.config.learner.adapted_group())
    }

    pub fn operation_sets(&self) -> impl Iterator<Item = &OperationSet> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Ops(set) => Some(set),
            _ => None,
        })
    }

    /// Current strengths of every operation set, in forward order.
    pub fn strengths(&self) -> Vec<Vec<(OpKind, f64)>> {
        self.operation_sets().map(|set| set.kinds().into_iter().zip(set.strengths(&self.store)).collect()).collect()
    }

    /// Binds every parameter into `graph`; those selected by `leaf` become
    /// differentiable leaves, the rest constants.
    pub fn bind<'g>(&self, graph: &'g Graph, leaf: impl Fn(&ParamHandle) -> bool) -> Vec<Var<'g>> {
        self.store
            .handles()
            .iter()
            .map(|h| if leaf(h) { graph.leaf(h.tensor.clone()) } else { graph.constant(h.tensor.clone()) })
            .collect()
    }

    /// Binds every parameter as a constant.
    pub fn bind_constants<'g>(&self, graph: &'g Graph) -> Vec<Var<'g>> {
        self.bind(graph, |_| false)
    }

    /// Forward pass of a batch `x` (`[B, ...]`), reading parameters from `vars`.
    pub fn forward<'g>(&self, x: Var<'g>, vars: &[Var<'g>]) -> Result<Var<'g>> {
        if vars.len() != self.store.len() {
            return Err(Error::mismatch("forward parameters", &[vars.len()], &[self.store.len()]));
        }
        let mut expected = vec![x.shape().first().copied().unwrap_or(0)];
        expected.extend(self.config.arch.input_shape());
        if x.shape() != expected {
            return Err(Error::mismatch("network input", &x.shape(), &expected));
        }
        let mut z = x;
        for layer in &self.layers {
            z = match layer {
                Layer::Ops(set) => apply_operation_set(set, z, vars)?,
                Layer::Dense { weight, bias } => z.matmul(vars[weight.0])?.add(vars[bias.0])?,
                Layer::Warp { matrix } => {
                    if z.shape().len() == 4 {
                        z.conv2d(vars[matrix.0])?
                    } else {
                        z.matmul(vars[matrix.0])?
                    }
                }
                Layer::Relu => z.relu(),
                Layer::Conv { weight, bias } => {
                    let c = self.store.tensor(*bias).numel();
                    z.conv2d(vars[weight.0])?.add(vars[bias.0].reshape(&[1, c, 1, 1])?)?
                }
                Layer::BatchNorm { gamma, beta } => batch_norm(z, vars[gamma.0], vars[beta.0], BN_EPS)?,
                Layer::MaxPool => z.maxpool2x2()?,
                Layer::Flatten => z.flatten()?,
            };
        }
        Ok(z)
    }

    /// Convenience forward with every parameter constant.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let graph = Graph::new();
        let vars = self.bind_constants(&graph);
        let out = self.forward(graph.constant(x.clone()), &vars)?;
        Ok(out.tensor())
    }

    /// The same backbone with every operation set removed; base parameters
    /// keep their values.
    pub fn without_operation_sets(&self) -> Result<Network> {
        let mut store = ParamStore::new();
        let mut copy = |id: ParamId| {
            let h = self.store.handle(id);
            store.add(h.name.clone(), h.group, h.tensor.clone())
        };
        let mut layers = Vec::new();
        for layer in &self.layers {
            layers.push(match layer {
                Layer::Ops(_) => continue,
                Layer::Dense { weight, bias } => Layer::Dense { weight: copy(*weight), bias: copy(*bias) },
                Layer::Conv { weight, bias } => Layer::Conv { weight: copy(*weight), bias: copy(*bias) },
                Layer::BatchNorm { gamma, beta } => Layer::BatchNorm { gamma: copy(*gamma), beta: copy(*beta) },
                Layer::Warp { matrix } => Layer::Warp { matrix: copy(*matrix) },
                other => other.clone(),
            });
        }
        let pools = self.config.arch.op_positions().iter().map(|_| Vec::new()).collect();
        let config = NetworkConfig { pools: Some(pools), ..self.config.clone() };
        Ok(Network { config, layers, store })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sine(learner: LearnerKind) -> NetworkConfig {
        NetworkConfig::new(Architecture::Mlp { sizes: vec![1, 40, 40, 1] }, learner)
    }

    #[test]
    fn sine_parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let maml = Network::build(&sine(LearnerKind::Maml), &mut rng).unwrap();
        assert_eq!(maml.param_count(), 1761);
        // 1761 + 40·40 + 40·40 + 1·1
        let tnet = Network::build(&sine(LearnerKind::Tnet), &mut rng).unwrap();
        assert_eq!(tnet.param_count(), 4962);
        let sap = Network::build(&sine(LearnerKind::Sap), &mut rng).unwrap();
        assert_eq!(sap.param_count(), 10013);
    }

    #[test]
    fn sap_count_matches_hand_count() {
        // d=1 sets: identity, scalar scale, scalar shift → 2 params + 3 logits
        let one = 2 + 3;
        // d=40: matmul 1600, three svd ranks (2·40·v + v), elem scale 40,
        // scalar scale 1, vector shift 40, scalar shift 1, plus 9 logits
        let svd: usize = [5, 10, 15].iter().map(|v| 2 * 40 * v + v).sum();
        let forty = 1600 + svd + 40 + 1 + 40 + 1 + 9;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sap = Network::build(&sine(LearnerKind::Sap), &mut rng).unwrap();
        assert_eq!(sap.param_count(), 1761 + 2 * one + 2 * forty);
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sap = Network::build(&sine(LearnerKind::Sap), &mut rng).unwrap();
        let p = sap.partition();
        let mut all: Vec<usize> = p.theta.iter().chain(&p.phi).chain(&p.lambda).map(|i| i.0).collect();
        all.sort();
        assert_eq!(all, (0..sap.store().len()).collect::<Vec<_>>());
        assert_eq!(p.lambda.len(), 4);
    }

    #[test]
    fn linear_shift_then_scale() {
        let cfg = NetworkConfig::new(Architecture::Mlp { sizes: vec![1, 1] }, LearnerKind::Sap)
            .with_pools(vec![vec![OpKind::ScalarShift], vec![OpKind::ScalarScale]]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::build(&cfg, &mut rng).unwrap();
        let (p, a) = (0.7, -2.5);
        for h in net.store().handles().to_vec() {
            let value = match h.name.as_str() {
                "dense0.weight" => 1.0,
                "dense0.bias" => 0.0,
                "ops0.scalar_shift.b" => p,
                "ops1.scalar_scale.s" => a,
                _ => continue,
            };
            net.store_mut().set(h.id, Tensor::full(h.tensor.shape().to_vec(), value).unwrap()).unwrap();
        }
        let x = Tensor::new([3, 1], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = net.predict(&x).unwrap();
        for (xi, yi) in x.data().iter().zip(y.data()) {
            assert!((yi - a * (xi + p)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_leave_bias_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = NetworkConfig::new(Architecture::Mlp { sizes: vec![2, 3, 1] }, LearnerKind::Sap).with_pools(vec![
            vec![],
            vec![],
            vec![OpKind::ScalarShift],
        ]);
        let mut net = Network::build(&cfg, &mut rng).unwrap();
        for h in net.store().handles().to_vec() {
            if h.name.ends_with("weight") {
                net.store_mut().set(h.id, Tensor::zeros(h.tensor.shape().to_vec()).unwrap()).unwrap();
            }
        }
        let shift = net.store().handles().iter().find(|h| h.name.ends_with(".b")).unwrap().id;
        net.store_mut().set(shift, Tensor::scalar(0.5).reshape([1]).unwrap()).unwrap();
        let bias = net.store().handles().iter().find(|h| h.name == "dense1.bias").unwrap();
        let expected = bias.tensor.data()[0] + 0.5;
        let y = net.predict(&Tensor::new([2, 2], vec![1.0, -3.0, 4.0, 9.0]).unwrap()).unwrap();
        assert!(y.data().iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn conv_backbone_runs_and_preserves_init() {
        let arch = Architecture::Conv { in_channels: 1, side: 8, channels: 3, blocks: 2, classes: 4, kernel: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sap = Network::build(&NetworkConfig::new(arch.clone(), LearnerKind::Sap), &mut rng).unwrap();
        let plain = sap.without_operation_sets().unwrap();
        let x = Tensor::create([5, 1, 8, 8], Init::Normal(0.0, 1.0), &mut rng).unwrap();
        let a = sap.predict(&x).unwrap();
        let b = plain.predict(&x).unwrap();
        assert_eq!(a.shape(), &[5, 4]);
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
        let tnet = Network::build(&NetworkConfig::new(arch, LearnerKind::Tnet), &mut rng).unwrap();
        assert_eq!(tnet.predict(&x).unwrap().shape(), &[5, 4]);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Network::build(&sine(LearnerKind::Maml), &mut rng).unwrap();
        let err = net.predict(&Tensor::zeros([4, 2]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }
}
