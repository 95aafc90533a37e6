// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::{GradientOrder, MetaConfig, OptimizerKind};
use crate::net::{Architecture, LearnerKind, NetworkConfig, OpKind};
use crate::tasks::{ImageTaskSpec, SineRanges, TaskFamily, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Mlp,
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Sine,
    Family,
    Image,
}

/// Flat run configuration, read from and written to TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub learner: LearnerKind,

    pub arch: ArchKind,
    pub layer_sizes: Vec<usize>,
    pub in_channels: usize,
    pub image_side: usize,
    pub channels: usize,
    pub conv_blocks: usize,
    pub kernel: usize,
    /// One entry per operation-set position: comma-separated kind names,
    /// empty for no set. Absent means the default pools.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pools: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warps: Option<Vec<bool>>,

    pub inner_lr: f64,
    pub outer_lr: f64,
    pub inner_steps_train: usize,
    /// Defaults to `inner_steps_train`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_steps_eval: Option<usize>,
    pub meta_batch_size: usize,
    pub gradient_order: GradientOrder,
    pub outer_optimizer: OptimizerKind,

    pub task: TaskKind,
    pub k_shot: usize,
    pub n_query: usize,
    /// Index into the 16 task families.
    pub family: usize,
    pub n_way: usize,
    pub n_query_per_class: usize,
    pub noise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_range: Option<[f64; 2]>,

    pub total_train_tasks: u64,
    pub validate_every: u64,
    pub validation_tasks: usize,
    pub test_tasks: usize,
    /// Inner step counts evaluated by `test`.
    pub test_steps: Vec<usize>,

    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            learner: LearnerKind::Sap,
            arch: ArchKind::Mlp,
            layer_sizes: vec![1, 40, 40, 1],
            in_channels: 1,
            image_side: 8,
            channels: 8,
            conv_blocks: 2,
            kernel: 3,
            pools: None,
            warps: None,
            inner_lr: 0.01,
            outer_lr: 0.001,
            inner_steps_train: 1,
            inner_steps_eval: None,
            meta_batch_size: 4,
            gradient_order: GradientOrder::Second,
            outer_optimizer: OptimizerKind::Adam,
            task: TaskKind::Sine,
            k_shot: 5,
            n_query: 50,
            family: 0,
            n_way: 2,
            n_query_per_class: 15,
            noise: 0.1,
            amplitude_range: None,
            phase_range: None,
            frequency_range: None,
            offset_range: None,
            input_range: None,
            total_train_tasks: 70_000,
            validate_every: 2_500,
            validation_tasks: 500,
            test_tasks: 2_000,
            test_steps: vec![1, 10],
            seed: 0,
            out_dir: None,
            threads: 1,
        }
    }
}

/// Parses one pool entry; the empty string means no operation set.
pub fn parse_pool(entry: &str) -> Result<Vec<OpKind>> {
    entry.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

pub fn format_pool(kinds: &[OpKind]) -> String {
    kinds.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn eval_steps(&self) -> usize {
        self.inner_steps_eval.unwrap_or(self.inner_steps_train)
    }

    pub fn meta(&self) -> MetaConfig {
        MetaConfig {
            inner_lr: self.inner_lr,
            outer_lr: self.outer_lr,
            inner_steps_train: self.inner_steps_train,
            inner_steps_eval: self.eval_steps(),
            meta_batch_size: self.meta_batch_size,
            gradient_order: self.gradient_order,
            outer_optimizer: self.outer_optimizer,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self.arch {
            ArchKind::Mlp => Architecture::Mlp { sizes: self.layer_sizes.clone() },
            ArchKind::Conv => Architecture::Conv {
                in_channels: self.in_channels,
                side: self.image_side,
                channels: self.channels,
                blocks: self.conv_blocks,
                classes: self.n_way,
                kernel: self.kernel,
            },
        }
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        let pools = match &self.pools {
            None => None,
            Some(entries) => Some(entries.iter().map(|e| parse_pool(e)).collect::<Result<Vec<_>>>()?),
        };
        Ok(NetworkConfig { arch: self.architecture(), learner: self.learner, pools, warps: self.warps.clone() })
    }

    fn ranges(&self) -> SineRanges {
        let d = SineRanges::default();
        let pick = |r: Option<[f64; 2]>, default: (f64, f64)| r.map_or(default, |[a, b]| (a, b));
        SineRanges {
            amplitude: pick(self.amplitude_range, d.amplitude),
            phase: pick(self.phase_range, d.phase),
            frequency: pick(self.frequency_range, d.frequency),
            offset: pick(self.offset_range, d.offset),
            input: pick(self.input_range, d.input),
        }
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        Ok(match self.task {
            TaskKind::Sine => TaskSpec::Sine { k_shot: self.k_shot, n_query: self.n_query, ranges: self.ranges() },
            TaskKind::Family => TaskSpec::Family {
                family: TaskFamily::from_index(self.family)?,
                k_shot: self.k_shot,
                n_query: self.n_query,
                ranges: self.ranges(),
            },
            TaskKind::Image => TaskSpec::Image(ImageTaskSpec {
                n_way: self.n_way,
                k_shot: self.k_shot,
                side: self.image_side,
                n_query_per_class: self.n_query_per_class,
                noise: self.noise,
            }),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.meta().validate()?;
        let net = self.network()?;
        net.arch.validate()?;
        net.resolved_pools()?;
        net.resolved_warps()?;
        if let TaskSpec::Image(spec) = self.task_spec()? {
            spec.validate()?;
            if self.arch != ArchKind::Conv {
                return Err(Error::Config("image tasks need arch = \"conv\"".into()));
            }
        } else if self.arch != ArchKind::Mlp {
            return Err(Error::Config("regression tasks need arch = \"mlp\"".into()));
        }
        if self.k_shot == 0 || self.n_query == 0 {
            return Err(Error::Config("k_shot and n_query must be positive".into()));
        }
        if self.total_train_tasks == 0 || self.validate_every == 0 || self.validation_tasks == 0 || self.test_tasks == 0
        {
            return Err(Error::Config("task counts must be positive".into()));
        }
        if self.validate_every > self.total_train_tasks {
            return Err(Error::Config(format!(
                "validate_every ({}) exceeds total_train_tasks ({})",
                self.validate_every, self.total_train_tasks
            )));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        for (name, r) in [
            ("amplitude_range", self.amplitude_range),
            ("phase_range", self.phase_range),
            ("frequency_range", self.frequency_range),
            ("offset_range", self.offset_range),
            ("input_range", self.input_range),
        ] {
            if let Some([a, b]) = r {
                if !(a.is_finite() && b.is_finite() && a <= b) {
                    return Err(Error::Config(format!("{name} must be an increasing finite interval")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_sine_protocol() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.total_train_tasks, 70_000);
        assert_eq!(cfg.validate_every, 2_500);
        assert_eq!(cfg.test_tasks, 2_000);
        assert_eq!(cfg.meta_batch_size, 4);
        assert_eq!(cfg.eval_steps(), 1);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig {
            pools: Some(vec![
                "identity,scalar_shift".into(),
                String::new(),
                "svd_matmul:5,matmul".into(),
                "scalar_scale".into(),
            ]),
            inner_steps_eval: Some(3),
            frequency_range: Some([0.5, 2.0]),
            ..RunConfig::default()
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        let pools = cfg.network().unwrap().pools.unwrap();
        assert!(pools[1].is_empty());
        assert_eq!(pools[2], vec![OpKind::SvdMatMul { rank: 5 }, OpKind::MatMul]);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml_str("learner = \"maml\"\ninner_lr = 0.05\n").unwrap();
        assert_eq!(cfg.learner, LearnerKind::Maml);
        assert_eq!(cfg.layer_sizes, vec![1, 40, 40, 1]);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("pools = [\"warp_drive\"]\n").is_err());
        assert!(RunConfig::from_toml_str("validate_every = 100\ntotal_train_tasks = 10\n").is_err());
        assert!(RunConfig::from_toml_str("inner_steps_train = 3\ninner_steps_eval = 2\n").is_err());
    }
}
