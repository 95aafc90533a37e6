// SPDX-License-Identifier: Apache-2.0

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EPISODE_FORMAT_VERSION: u32 = 1;
const EPISODE_FORMAT: &str = "sap-episodes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Targets {
    /// Regression targets, `[n, out]`.
    Values(Tensor),
    /// Class indices.
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(t) => t.shape()[0],
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeKind {
    Regression,
    Classification(usize),
}

/// Ground-truth parameters an episode was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskParams {
    Sine {
        amplitude: f64,
        phase: f64,
        frequency: f64,
        offset: f64,
    },
    /// Pattern index behind each class label.
    Image {
        patterns: Vec<usize>,
    },
}

/// One few-shot problem: a support set to adapt on and a query set to score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub kind: EpisodeKind,
    pub support_x: Tensor,
    pub support_y: Targets,
    pub query_x: Tensor,
    pub query_y: Targets,
    pub params: TaskParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Writes a versioned header line followed by one JSON record per episode.
pub fn write_episodes<W: Write>(mut out: W, episodes: &[Episode]) -> Result<()> {
    let header = Header { format: EPISODE_FORMAT.into(), version: EPISODE_FORMAT_VERSION };
    let io = |e| Error::io("<episode stream>", e);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io)?;
    for ep in episodes {
        serde_json::to_writer(&mut out, ep)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_episodes<R: BufRead>(input: R) -> Result<Vec<Episode>> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("empty episode stream".into()))?
        .map_err(|e| Error::io("<episode stream>", e))?;
    let header: Header = serde_json::from_str(&first)?;
    if header.format != EPISODE_FORMAT {
        return Err(Error::Checkpoint(format!("not an episode stream: {}", header.format)));
    }
    if header.version != EPISODE_FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: header.version, expected: EPISODE_FORMAT_VERSION });
    }
    let mut episodes = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io("<episode stream>", e))?;
        if !line.trim().is_empty() {
            episodes.push(serde_json::from_str(&line)?);
        }
    }
    Ok(episodes)
}
