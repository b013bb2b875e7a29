use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, TrainConfig};
use crate::deform::DeformNet;
use crate::spectrum::AngularGrid;
use crate::splat::GaussianSet;
use crate::tasks::RssiCalibration;
use crate::wavesim::PositionBounds;
use crate::{Result, WrfError};

const MAGIC: &[u8; 4] = b"WRFC";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 6 * 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: TrainConfig,
    /// Global iterations completed (coarse plus fine).
    pub iteration: u64,
    pub manifest_hash: String,
    pub bounds: PositionBounds,
    pub grid: AngularGrid,
    pub rssi: Option<RssiCalibration>,
}

impl CheckpointMeta {
    pub fn new(
        config: TrainConfig,
        iteration: u64,
        manifest_hash: String,
        bounds: PositionBounds,
        grid: AngularGrid,
        rssi: Option<RssiCalibration>,
    ) -> Self {
        Self { format_version: VERSION, config, iteration, manifest_hash, bounds, grid, rssi }
    }
}

/// File layout: `WRFC`, version, then `(offset, length)` as `u64` pairs for
/// the Gaussian section, the network section and the JSON trailer, followed
/// by the three blobs in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut gauss = Vec::new();
        self.model.set.write_section(&mut gauss);
        let mut net = Vec::new();
        self.model.net.write_section(&mut net);
        let trailer = serde_json::to_vec(&self.meta).expect("checkpoint metadata serializes");

        let mut out = Vec::with_capacity(HEADER_LEN + gauss.len() + net.len() + trailer.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut offset = HEADER_LEN as u64;
        for len in [gauss.len(), net.len(), trailer.len()] {
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(len as u64).to_le_bytes());
            offset += len as u64;
        }
        out.extend_from_slice(&gauss);
        out.extend_from_slice(&net);
        out.extend_from_slice(&trailer);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(WrfError::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(WrfError::Format(format!("unsupported checkpoint version {version}")));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
        let section = |k: usize| -> Result<&[u8]> {
            let (off, len) = (word(2 * k), word(2 * k + 1));
            off.checked_add(len)
                .and_then(|end| bytes.get(off..end))
                .ok_or_else(|| WrfError::Format("checkpoint section out of range".into()))
        };
        let meta: CheckpointMeta = serde_json::from_slice(section(2)?)?;
        if meta.format_version != VERSION {
            return Err(WrfError::Format(format!("unsupported checkpoint metadata version {}", meta.format_version)));
        }
        let (set, used) = GaussianSet::read_section(section(0)?, meta.grid)?;
        let (net, used_net) = DeformNet::read_section(section(1)?)?;
        if used != word(1) || used_net != word(3) {
            return Err(WrfError::Format("checkpoint section lengths disagree with their contents".into()));
        }
        if net.encoding != meta.config.encoding {
            return Err(WrfError::Format("network encoding differs from the recorded configuration".into()));
        }
        Ok(Self { model: Model { set, net, bounds: meta.bounds }, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
