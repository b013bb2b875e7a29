//! Dataset generation and the `manifest.json` + `spectra.bin` on-disk format.
//!
//! `spectra.bin` is a flat little-endian `f32` stream; each sample is three
//! position floats followed by `n_elevation·n_azimuth` interleaved
//! `[re, im]` pairs in row-major order.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::trace::{rssi_dbm, trace_paths, Mobility, Scene};
use super::{beam_scan, channel_response, element_layout, ArrayConfig};
use crate::spectrum::{AngularGrid, Spectrum};
use crate::{Result, WrfError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPECTRA_FILE: &str = "spectra.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenOptions {
    pub seed: u64,
    /// One held-out sample per block of this many consecutive samples.
    pub test_every: usize,
    pub tx_power_dbm: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self { seed: 0, test_every: 10, tx_power_dbm: 0.0 }
    }
}

/// Axis-aligned bounds of the moving positions, used to map positions into
/// the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl PositionBounds {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a [f32; 3]>) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                min[a] = min[a].min(p[a] as f64);
                max[a] = max[a].max(p[a] as f64);
            }
        }
        Self { min, max }
    }

    /// Affine map into `[0, 1]³`; degenerate axes map to 0.5.
    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.5; 3];
        for a in 0..3 {
            let span = self.max[a] - self.min[a];
            if span > 0.0 {
                out[a] = (p[a] - self.min[a]) / span;
            }
        }
        out
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub mode: Mobility,
    pub grid: AngularGrid,
    pub array: ArrayConfig,
    pub fixed_node: [f64; 3],
    /// Global max magnitude the raw spectra were divided by.
    pub normalization: f64,
    pub seed: u64,
    pub sample_count: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Indices into the scene's moving positions that produced no usable
    /// spectrum.
    pub excluded: Vec<usize>,
    pub bounds: PositionBounds,
    /// Per-sample received power label.
    pub rssi_dbm: Vec<f64>,
    pub spectra_sha256: String,
}

impl Manifest {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    /// SHA-256 of the serialized manifest; covers the spectra through
    /// `spectra_sha256`.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub position: [f32; 3],
    pub spectrum: Spectrum<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn grid(&self) -> AngularGrid {
        self.manifest.grid
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &Sample> {
        self.manifest.train.iter().map(|&i| &self.samples[i])
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &Sample> {
        self.manifest.test.iter().map(|&i| &self.samples[i])
    }

    pub fn spectra_bytes(&self) -> Vec<u8> {
        encode_samples(&self.samples)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(SPECTRA_FILE), self.spectra_bytes())?;
        fs::write(dir.join(MANIFEST_FILE), self.manifest.to_json_bytes())?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(WrfError::Format(format!("unsupported dataset version {}", manifest.format_version)));
        }
        manifest.grid.validate()?;
        let bytes = fs::read(dir.join(SPECTRA_FILE))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != manifest.spectra_sha256 {
            return Err(WrfError::HashMismatch { expected: manifest.spectra_sha256.clone(), found: digest });
        }
        let samples = decode_samples(&bytes, manifest.grid, manifest.sample_count)?;
        if manifest.rssi_dbm.len() != samples.len()
            || manifest.train.iter().chain(&manifest.test).any(|&i| i >= samples.len())
        {
            return Err(WrfError::Format("manifest indices do not match the sample count".into()));
        }
        Ok(Self { manifest, samples })
    }
}

pub fn encode_samples(samples: &[Sample]) -> Vec<u8> {
    let per = samples.first().map_or(0, |s| 3 + s.spectrum.values().len());
    let mut out = Vec::with_capacity(4 * per * samples.len());
    for s in samples {
        for v in s.position.iter().chain(s.spectrum.values()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_samples(bytes: &[u8], grid: AngularGrid, count: usize) -> Result<Vec<Sample>> {
    let per = 3 + 2 * grid.cells();
    if bytes.len() != 4 * per * count {
        return Err(WrfError::Format(format!(
            "spectra file holds {} bytes, expected {} for {count} samples",
            bytes.len(),
            4 * per * count
        )));
    }
    let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    floats
        .chunks_exact(per)
        .map(|chunk| {
            Ok(Sample {
                position: [chunk[0], chunk[1], chunk[2]],
                spectrum: Spectrum::from_values(grid, chunk[3..].to_vec())?,
            })
        })
        .collect()
}

/// Stratified split: one seeded pick per full block of `test_every` samples.
fn split(count: usize, test_every: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    if test_every < 2 {
        return ((0..count).collect(), Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::new();
    for block in 0..count / test_every {
        test.push(block * test_every + rng.random_range(0..test_every));
    }
    let train = (0..count).filter(|i| !test.contains(i)).collect();
    (train, test)
}

struct RawSample {
    position: [f64; 3],
    spectrum: Spectrum<f64>,
    rssi: f64,
}

fn simulate(scene: &Scene, p: [f64; 3], grid: AngularGrid, tx_power_dbm: f64) -> Result<RawSample> {
    let elems = element_layout(&scene.array)?;
    let (tx, rx) = scene.endpoints(p);
    let paths = trace_paths(scene, tx, rx)?;
    let h = channel_response(&paths, &elems, scene.array.wavelength)?;
    let spectrum = beam_scan(&h, &elems, grid, scene.array.wavelength)?;
    Ok(RawSample { position: p, spectrum, rssi: rssi_dbm(&paths, tx_power_dbm) })
}

/// Simulates one spectrum per moving position, normalizes the set by its
/// global max magnitude and attaches a seeded train/test split.
pub fn generate_dataset(scene: &Scene, grid: AngularGrid, opts: &GenOptions) -> Result<Dataset> {
    scene.validate()?;
    grid.validate()?;
    let results: Vec<Result<RawSample>> =
        scene.moving_positions.par_iter().map(|&p| simulate(scene, p, grid, opts.tx_power_dbm)).collect();

    let mut raw = Vec::new();
    let mut excluded = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => raw.push(s),
            Err(WrfError::NoCoverage | WrfError::DegenerateChannel(_) | WrfError::Geometry(_)) => excluded.push(i),
            Err(e) => return Err(e),
        }
    }
    if raw.is_empty() {
        return Err(WrfError::EmptyDataset);
    }
    let normalization = raw.iter().map(|s| s.spectrum.max_magnitude()).fold(0.0, f64::max);
    let inv = if normalization > 0.0 { 1.0 / normalization } else { 1.0 };
    let samples: Vec<Sample> = raw
        .iter()
        .map(|s| {
            let mut spec = s.spectrum.clone();
            spec.scale(inv);
            Sample { position: s.position.map(|v| v as f32), spectrum: spec.cast() }
        })
        .collect();
    let (train, test) = split(samples.len(), opts.test_every, opts.seed);
    let bounds = PositionBounds::from_points(samples.iter().map(|s| &s.position));
    let spectra_sha256 = hex::encode(Sha256::digest(encode_samples(&samples)));
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        mode: scene.mode,
        grid,
        array: scene.array,
        fixed_node: scene.fixed_node,
        normalization,
        seed: opts.seed,
        sample_count: samples.len(),
        train,
        test,
        excluded,
        bounds,
        rssi_dbm: raw.iter().map(|s| s.rssi).collect(),
        spectra_sha256,
    };
    Ok(Dataset { manifest, samples })
}
