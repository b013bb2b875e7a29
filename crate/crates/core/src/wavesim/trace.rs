//! Mirror-source (image method) specular tracing in an axis-aligned room
//! `[0, Lx] × [0, Ly] × [0, Lz]`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ArrayConfig;
use crate::{Result, WrfError};

pub const MAX_BOUNCES_CAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mobility {
    /// The receiver array is fixed; the transmitter visits `moving_positions`.
    TxMoving,
    /// The transmitter is fixed; the receiver array visits `moving_positions`.
    RxMoving,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationPath {
    pub power_coeff: Complex64,
    /// Arrival azimuth at the receiver, `[0, 2π)`.
    pub azimuth: f64,
    /// Arrival elevation at the receiver; negative for arrivals from below.
    pub elevation: f64,
    pub path_length: f64,
    pub bounce_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub room_dims: [f64; 3],
    pub wall_reflectivity: f64,
    pub max_bounces: usize,
    pub fixed_node: [f64; 3],
    pub moving_positions: Vec<[f64; 3]>,
    pub mode: Mobility,
    pub array: ArrayConfig,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.room_dims.iter().any(|d| !(*d > 0.0)) {
            return Err(WrfError::Geometry(format!("room dimensions must be positive: {:?}", self.room_dims)));
        }
        if !(self.wall_reflectivity > 0.0 && self.wall_reflectivity <= 1.0) {
            return Err(WrfError::Geometry(format!(
                "wall reflectivity must lie in (0, 1], got {}",
                self.wall_reflectivity
            )));
        }
        if self.max_bounces > MAX_BOUNCES_CAP {
            return Err(WrfError::Geometry(format!(
                "max_bounces {} exceeds the cap of {MAX_BOUNCES_CAP}",
                self.max_bounces
            )));
        }
        if self.moving_positions.is_empty() {
            return Err(WrfError::Geometry("scene has no moving positions".into()));
        }
        self.array.validate()?;
        self.check_inside(&self.fixed_node)?;
        for p in &self.moving_positions {
            self.check_inside(p)?;
        }
        Ok(())
    }

    pub fn check_inside(&self, p: &[f64; 3]) -> Result<()> {
        for axis in 0..3 {
            if !(p[axis] > 0.0 && p[axis] < self.room_dims[axis]) {
                return Err(WrfError::Geometry(format!(
                    "position {p:?} is not strictly inside the room {:?}",
                    self.room_dims
                )));
            }
        }
        Ok(())
    }

    /// `(tx, rx)` for the moving position `p` under the scene's mobility mode.
    pub fn endpoints(&self, p: [f64; 3]) -> ([f64; 3], [f64; 3]) {
        match self.mode {
            Mobility::TxMoving => (p, self.fixed_node),
            Mobility::RxMoving => (self.fixed_node, p),
        }
    }
}

/// Coordinate of the `n`-th mirror image of `x` along an axis of length `len`;
/// the image involves `|n|` reflections.
fn image_coord(x: f64, len: f64, n: i32) -> f64 {
    if n % 2 == 0 {
        n as f64 * len + x
    } else {
        (n + 1) as f64 * len - x
    }
}

/// Every mirror image of `tx` with at most `max_bounces` reflections, before
/// hemisphere filtering. The line-of-sight path comes first.
pub fn candidate_paths(scene: &Scene, tx: [f64; 3], rx: [f64; 3]) -> Result<Vec<PropagationPath>> {
    scene.check_inside(&tx)?;
    scene.check_inside(&rx)?;
    if scene.max_bounces > MAX_BOUNCES_CAP {
        return Err(WrfError::Geometry(format!("max_bounces {} exceeds {MAX_BOUNCES_CAP}", scene.max_bounces)));
    }
    let los = ((tx[0] - rx[0]).powi(2) + (tx[1] - rx[1]).powi(2) + (tx[2] - rx[2]).powi(2)).sqrt();
    if los < 1e-9 {
        return Err(WrfError::Geometry("transmitter and receiver coincide".into()));
    }
    let lambda = scene.array.wavelength;
    let b = scene.max_bounces as i32;
    let mut paths = Vec::new();
    for order in 0..=b {
        for nx in -order..=order {
            for ny in -(order - nx.abs())..=(order - nx.abs()) {
                let rest = order - nx.abs() - ny.abs();
                let nzs: &[i32] = if rest == 0 { &[0] } else { &[-rest, rest] };
                for &nz in nzs {
                    let img = [
                        image_coord(tx[0], scene.room_dims[0], nx),
                        image_coord(tx[1], scene.room_dims[1], ny),
                        image_coord(tx[2], scene.room_dims[2], nz),
                    ];
                    let d = [img[0] - rx[0], img[1] - rx[1], img[2] - rx[2]];
                    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    let azimuth = if d[0] == 0.0 && d[1] == 0.0 { 0.0 } else { d[1].atan2(d[0]).rem_euclid(TAU) };
                    let azimuth = if azimuth >= TAU { 0.0 } else { azimuth };
                    let elevation = (d[2] / len).clamp(-1.0, 1.0).asin();
                    let bounces = order as usize;
                    let amplitude = lambda / (4.0 * PI * len) * scene.wall_reflectivity.powi(order);
                    let power_coeff = Complex64::from_polar(amplitude, -TAU * len / lambda);
                    paths.push(PropagationPath { power_coeff, azimuth, elevation, path_length: len, bounce_count: bounces });
                }
            }
        }
    }
    Ok(paths)
}

/// Specular paths from `tx` to `rx` arriving from the upper hemisphere of
/// the receiver array.
pub fn trace_paths(scene: &Scene, tx: [f64; 3], rx: [f64; 3]) -> Result<Vec<PropagationPath>> {
    let mut paths = candidate_paths(scene, tx, rx)?;
    paths.retain(|p| p.elevation >= 0.0 && p.elevation <= std::f64::consts::FRAC_PI_2);
    Ok(paths)
}

/// Received power `10·log10(Σ|ρ|²)` plus the transmit power.
pub fn rssi_dbm(paths: &[PropagationPath], tx_power_dbm: f64) -> f64 {
    let p: f64 = paths.iter().map(|p| p.power_coeff.norm_sqr()).sum();
    10.0 * p.log10() + tx_power_dbm
}
