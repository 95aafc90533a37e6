// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use super::config::format_pool;
use super::{Checkpoint, RunConfig};
use crate::error::{Error, Result};
use crate::net::{LearnerKind, Network, OpKind};

/// Strengths of one operation set, in pool order.
pub type SetStrengths = Vec<(OpKind, f64)>;

/// Strengths of every operation set keyed by position; `None` where a
/// position has no set.
pub fn strengths_by_position(net: &Network) -> Result<Vec<Option<SetStrengths>>> {
    let pools = net.config().resolved_pools()?;
    let mut sets = net.strengths().into_iter();
    Ok(pools.iter().map(|p| if p.is_empty() { None } else { sets.next() }).collect())
}

/// Mean strength of one kind at one position across checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthEntry {
    pub layer: usize,
    pub op: OpKind,
    /// `None` when the kind is absent from this layer in every checkpoint.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Checkpoints that contain the kind at this layer.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StrengthTable {
    pub entries: Vec<StrengthEntry>,
}

impl StrengthTable {
    pub fn get(&self, layer: usize, op: OpKind) -> Option<&StrengthEntry> {
        self.entries.iter().find(|e| e.layer == layer && e.op == op)
    }
}

/// Layer × kind table of softmax strengths, aggregated as mean ± sample
/// standard deviation over `ckpts` (e.g. one per seed).
pub fn report_strengths(ckpts: &[Checkpoint]) -> Result<StrengthTable> {
    if ckpts.is_empty() {
        return Err(Error::Config("no checkpoints to report".into()));
    }
    let mut per_ckpt = Vec::with_capacity(ckpts.len());
    for c in ckpts {
        if c.network.learner() != LearnerKind::Sap {
            return Err(Error::Config(format!("strengths need a SAP checkpoint, got {}", c.network.learner())));
        }
        per_ckpt.push(strengths_by_position(&c.network)?);
    }
    let layers = per_ckpt.iter().map(Vec::len).max().unwrap_or(0);
    let mut kinds: Vec<OpKind> = Vec::new();
    for table in &per_ckpt {
        for (kind, _) in table.iter().flatten().flatten() {
            if !kinds.contains(kind) {
                kinds.push(*kind);
            }
        }
    }
    let mut entries = Vec::new();
    for layer in 0..layers {
        for &op in &kinds {
            let values: Vec<f64> = per_ckpt
                .iter()
                .filter_map(|t| t.get(layer).cloned().flatten())
                .filter_map(|set| set.iter().find(|(k, _)| *k == op).map(|(_, w)| *w))
                .collect();
            let n = values.len();
            let (mean, std) = if n == 0 {
                (None, None)
            } else {
                let mean = values.iter().sum::<f64>() / n as f64;
                let var =
                    if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
                (Some(mean), Some(var.sqrt()))
            };
            entries.push(StrengthEntry { layer, op, mean, std, n });
        }
    }
    Ok(StrengthTable { entries })
}

pub fn write_strengths_csv(table: &StrengthTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["layer", "op", "mean", "std", "n"])?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    for e in &table.entries {
        w.write_record([e.layer.to_string(), e.op.to_string(), fmt(e.mean), fmt(e.std), e.n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Indices of the `k` strongest operations, strongest first; ties go to
/// the lower index.
pub fn top_k_indices(strengths: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..strengths.len()).collect();
    order.sort_by(|&a, &b| strengths[b].total_cmp(&strengths[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Keeps the `k` strongest operations of every set and returns a config
/// whose pools hold only the survivors (in their original order). The
/// pruned network must be retrained from a fresh initialization.
pub fn prune_topk(ckpt: &Checkpoint, k: usize) -> Result<RunConfig> {
    let net = &ckpt.network;
    if net.learner() != LearnerKind::Sap {
        return Err(Error::Config("pruning needs a SAP checkpoint".into()));
    }
    let pools = net.config().resolved_pools()?;
    let smallest = pools.iter().filter(|p| !p.is_empty()).map(Vec::len).min().unwrap_or(0);
    if k == 0 || k > smallest {
        return Err(Error::Config(format!("K = {k} must be between 1 and the smallest pool size {smallest}")));
    }
    if k == smallest && pools.iter().all(|p| p.is_empty() || p.len() == k) {
        return Ok(ckpt.config.clone());
    }
    let strengths = strengths_by_position(net)?;
    let mut pruned = Vec::with_capacity(pools.len());
    for (pool, set) in pools.iter().zip(&strengths) {
        match set {
            None => pruned.push(String::new()),
            Some(set) => {
                let w: Vec<f64> = set.iter().map(|(_, w)| *w).collect();
                let mut keep = top_k_indices(&w, k);
                keep.sort_unstable();
                pruned.push(format_pool(&keep.iter().map(|&i| pool[i]).collect::<Vec<_>>()));
            }
        }
    }
    Ok(RunConfig { pools: Some(pruned), ..ckpt.config.clone() })
}
