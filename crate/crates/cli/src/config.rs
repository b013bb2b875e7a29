use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use wrfsplat::spectrum::AngularGrid;
use wrfsplat::training::TrainConfig;
use wrfsplat::wavesim::{ArrayConfig, GenOptions, Mobility, Scene};

use crate::CliError;

/// Everything one run needs, read from a single JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub grid: AngularGrid,
    pub gen: GenOptions,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            grid: AngularGrid { n_azimuth: 360, n_elevation: 90 },
            gen: GenOptions::default(),
            train: TrainConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub room_dims: [f64; 3],
    pub wall_reflectivity: f64,
    pub max_bounces: usize,
    pub fixed_node: [f64; 3],
    pub mode: Mobility,
    /// Carrier of the 4×4 half-wavelength receiver array.
    pub frequency_hz: f64,
    /// Explicit moving positions; when empty, `sampling` draws them.
    pub positions: Vec<[f64; 3]>,
    pub sampling: Sampling,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room_dims: [4.0, 3.0, 2.5],
            wall_reflectivity: 0.5,
            max_bounces: 2,
            fixed_node: [2.0, 1.5, 0.8],
            mode: Mobility::TxMoving,
            frequency_hz: 915e6,
            positions: Vec::new(),
            sampling: Sampling::default(),
        }
    }
}

/// Uniform draws inside an axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampling {
    pub count: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { count: 300, min: [0.95, 0.95, 1.15], max: [1.05, 1.05, 1.25], seed: 7 }
    }
}

impl Sampling {
    pub fn draw(&self) -> Result<Vec<[f64; 3]>, CliError> {
        if (0..3).any(|a| !(self.min[a] <= self.max[a])) {
            return Err(CliError::Input(format!("sampling box is empty: {:?} to {:?}", self.min, self.max)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.count)
            .map(|_| {
                let mut p = self.min;
                for a in 0..3 {
                    if self.max[a] > self.min[a] {
                        p[a] = rng.random_range(self.min[a]..self.max[a]);
                    }
                }
                p
            })
            .collect())
    }
}

impl SceneConfig {
    pub fn build(&self) -> Result<Scene, CliError> {
        if !(self.frequency_hz > 0.0) {
            return Err(CliError::Input(format!("frequency_hz must be positive, got {}", self.frequency_hz)));
        }
        let moving_positions = if self.positions.is_empty() { self.sampling.draw()? } else { self.positions.clone() };
        Ok(Scene {
            room_dims: self.room_dims,
            wall_reflectivity: self.wall_reflectivity,
            max_bounces: self.max_bounces,
            fixed_node: self.fixed_node,
            moving_positions,
            mode: self.mode,
            array: ArrayConfig::half_wavelength_4x4(self.frequency_hz),
        })
    }
}

/// Applies `key.path=value` overrides. The value is parsed as JSON and taken
/// as a plain string when that fails.
pub fn apply_overrides(cfg: RunConfig, overrides: &[String]) -> Result<RunConfig, CliError> {
    if overrides.is_empty() {
        return Ok(cfg);
    }
    let mut root = serde_json::to_value(&cfg).map_err(|e| CliError::Input(e.to_string()))?;
    for o in overrides {
        let (path, raw) =
            o.split_once('=').ok_or_else(|| CliError::Input(format!("override `{o}` is not of the form key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut root;
        for key in path.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(key))
                .ok_or_else(|| CliError::Input(format!("unknown config key `{path}`")))?;
        }
        *node = value;
    }
    serde_json::from_value(root).map_err(|e| CliError::Input(format!("invalid override: {e}")))
}

pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let cfg = match path {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    apply_overrides(cfg, overrides)
}
