//! Checkpoint files: one JSON header line followed by every network's
//! parameters as little-endian float64 in `param_slices` order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::network::{SequenceNetwork, Topology};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "speechfront-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct NetworkEntry {
    topology: Topology,
    param_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    networks: Vec<NetworkEntry>,
    #[serde(default)]
    metadata: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model family, e.g. `"sse"` or `"lm"`.
    pub kind: String,
    pub networks: Vec<SequenceNetwork>,
    /// Arbitrary model-specific settings (feature statistics, vocabulary...).
    pub metadata: Value,
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    kind: &str,
    networks: &[&SequenceNetwork],
    metadata: Value,
) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        format: FORMAT_TAG.into(),
        version: CHECKPOINT_VERSION,
        kind: kind.into(),
        networks: networks
            .iter()
            .map(|n| NetworkEntry {
                topology: n.topology(),
                param_count: n.num_params(),
            })
            .collect(),
        metadata,
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let line = serde_json::to_string(&header).expect("header serializes");
    let io = |e| Error::io(path, e);
    w.write_all(line.as_bytes()).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    for net in networks {
        for s in net.param_slices() {
            for v in s {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| Error::Format(format!("{}: bad checkpoint header: {e}", path.display())))?;
    if header.format != FORMAT_TAG {
        return Err(Error::Format(format!(
            "{}: not a checkpoint",
            path.display()
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Unsupported(format!(
            "checkpoint version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
    let expected: usize = header.networks.iter().map(|n| n.param_count).sum();
    if blob.len() != expected * 8 {
        return Err(Error::Format(format!(
            "{}: {} parameter bytes, header promises {}",
            path.display(),
            blob.len(),
            expected * 8
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut offset = 0;
    let mut networks = Vec::with_capacity(header.networks.len());
    for entry in &header.networks {
        let mut net = SequenceNetwork::zeros(&entry.topology)?;
        if net.num_params() != entry.param_count {
            return Err(Error::Format(format!(
                "topology has {} parameters, header says {}",
                net.num_params(),
                entry.param_count
            )));
        }
        net.set_flat_params(&values[offset..offset + entry.param_count])?;
        offset += entry.param_count;
        networks.push(net);
    }
    Ok(Checkpoint {
        kind: header.kind,
        networks,
        metadata: header.metadata,
    })
}
