// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::autodiff::{ParamGroup, ParamId};
use crate::error::{Error, Result};
use crate::meta::{OptimizerKind, OuterOptimizer};
use crate::net::Network;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"SAP-CHECKPOINT\n";

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub network: Network,
    pub optimizer: OuterOptimizer,
    pub tasks_seen: u64,
    /// Best validation metric so far, if any validation ran.
    pub best_score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: RunConfig,
    tasks_seen: u64,
    params: Vec<ParamRecord>,
    optimizer_kind: OptimizerKind,
    optimizer_steps: u64,
    /// Parameter ids with Adam moments, in payload order.
    moments: Vec<ParamId>,
}

struct Payload<'a> {
    bytes: &'a [u8],
}

impl Payload<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n * 8;
        if self.bytes.len() < len {
            return Err(Error::Checkpoint("payload is truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(len);
        self.bytes = rest;
        Ok(head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn put(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    /// Text header followed by a little-endian `f64` payload.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = self.network.store();
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tasks_seen: self.tasks_seen,
            params: store
                .handles()
                .iter()
                .map(|h| ParamRecord {
                    name: h.name.clone(),
                    group: h.group,
                    shape: h.tensor.shape().to_vec(),
                    trainable: h.trainable,
                })
                .collect(),
            optimizer_kind: self.optimizer.kind(),
            optimizer_steps: self.optimizer.steps(),
            moments: self.optimizer.moments().keys().copied().collect(),
        };
        let mut out = MAGIC.to_vec();
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        put(&mut out, &[self.best_score.unwrap_or(f64::NAN), self.optimizer.lr()]);
        for h in store.handles() {
            put(&mut out, h.tensor.data());
        }
        for (m, v) in self.optimizer.moments().values() {
            put(&mut out, m.data());
            put(&mut out, v.data());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest =
            bytes.strip_prefix(MAGIC).ok_or_else(|| Error::Checkpoint("missing checkpoint magic line".into()))?;
        let newline =
            rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
        let version: serde_json::Value = serde_json::from_slice(&rest[..newline])?;
        let found = version.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found, expected: CHECKPOINT_VERSION });
        }
        let header: Header = serde_json::from_slice(&rest[..newline])?;
        let mut payload = Payload { bytes: &rest[newline + 1..] };
        let scalars = payload.take(2)?;
        let best_score = if scalars[0].is_nan() { None } else { Some(scalars[0]) };

        let mut network = Network::build(&header.config.network()?, &mut ChaCha8Rng::seed_from_u64(0))?;
        if network.store().len() != header.params.len() {
            return Err(Error::Checkpoint(format!(
                "config builds {} parameters, checkpoint has {}",
                network.store().len(),
                header.params.len()
            )));
        }
        for (i, rec) in header.params.iter().enumerate() {
            let id = ParamId(i);
            let h = network.store().handle(id);
            if h.name != rec.name || h.group != rec.group || h.tensor.shape() != rec.shape.as_slice() {
                return Err(Error::Checkpoint(format!("parameter {i} ({}) does not match the config", rec.name)));
            }
            let n = rec.shape.iter().product();
            network.store_mut().set(id, Tensor::new(rec.shape.clone(), payload.take(n)?)?)?;
            network.store_mut().set_trainable(id, rec.trainable);
        }
        let mut moments = BTreeMap::new();
        for &id in &header.moments {
            let shape = header
                .params
                .get(id.0)
                .ok_or_else(|| Error::Checkpoint(format!("moment for unknown parameter {}", id.0)))?
                .shape
                .clone();
            let n = shape.iter().product();
            let m = Tensor::new(shape.clone(), payload.take(n)?)?;
            let v = Tensor::new(shape, payload.take(n)?)?;
            moments.insert(id, (m, v));
        }
        if !payload.bytes.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(Checkpoint {
            optimizer: OuterOptimizer::from_state(header.optimizer_kind, scalars[1], header.optimizer_steps, moments),
            config: header.config,
            network,
            tasks_seen: header.tasks_seen,
            best_score,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
