//! Synthetic spatial spectra: planar array geometry, mirror-source multipath
//! tracing in shoebox rooms, channel synthesis and beam scanning.

mod dataset;
mod trace;

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use dataset::{
    decode_samples, encode_samples, generate_dataset, Dataset, GenOptions, Manifest, PositionBounds, Sample, MANIFEST_FILE,
    SPECTRA_FILE,
};
pub use trace::{candidate_paths, rssi_dbm, trace_paths, Mobility, PropagationPath, Scene, MAX_BOUNCES_CAP};

use crate::spectrum::{AngularGrid, Spectrum};
use crate::{Result, WrfError};

/// Square planar array of `k_elements` isotropic elements in the horizontal
/// plane of the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub k_elements: usize,
    /// Element spacing in meters.
    pub spacing: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl ArrayConfig {
    /// A 4×4 half-wavelength array at the given carrier frequency.
    pub fn half_wavelength_4x4(freq_hz: f64) -> Self {
        let wavelength = 299_792_458.0 / freq_hz;
        Self { k_elements: 16, spacing: wavelength / 2.0, wavelength }
    }

    /// Side length `√K`.
    pub fn side(&self) -> Result<usize> {
        let side = (self.k_elements as f64).sqrt().round() as usize;
        if side == 0 || side * side != self.k_elements {
            return Err(WrfError::InvalidArgument(format!(
                "element count {} is not a positive perfect square",
                self.k_elements
            )));
        }
        Ok(side)
    }

    pub fn validate(&self) -> Result<()> {
        self.side()?;
        if !(self.spacing > 0.0) || !(self.wavelength > 0.0) {
            return Err(WrfError::InvalidArgument(format!(
                "spacing and wavelength must be positive (got {}, {})",
                self.spacing, self.wavelength
            )));
        }
        Ok(())
    }
}

/// Polar position of element `(m, n)` relative to element `(1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementCoord {
    pub m: usize,
    pub n: usize,
    pub radial: f64,
    pub angular: f64,
}

/// Elements in `m`-major order, `m, n ∈ [1, √K]`.
pub fn element_layout(cfg: &ArrayConfig) -> Result<Vec<ElementCoord>> {
    cfg.validate()?;
    let side = cfg.side()?;
    let mut out = Vec::with_capacity(cfg.k_elements);
    for m in 1..=side {
        for n in 1..=side {
            let (dm, dn) = ((m - 1) as f64, (n - 1) as f64);
            let angular = if m == 1 && n == 1 { 0.0 } else { dm.atan2(dn) };
            out.push(ElementCoord { m, n, radial: cfg.spacing * dm.hypot(dn), angular });
        }
    }
    Ok(out)
}

/// Phase of element `elem` relative to the reference element for a plane wave
/// from `(azimuth, elevation)`, reduced to `[0, 2π)`.
pub fn phase_shift(elem: &ElementCoord, azimuth: f64, elevation: f64, wavelength: f64) -> f64 {
    let raw = -TAU * elem.radial * (azimuth - elem.angular).cos() * elevation.cos() / wavelength;
    let wrapped = raw.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Per-element superposition `h = Σ ρ·e^{jΔα}` of the given paths.
pub fn channel_response(paths: &[PropagationPath], elems: &[ElementCoord], wavelength: f64) -> Result<Vec<Complex64>> {
    if paths.is_empty() {
        return Err(WrfError::NoCoverage);
    }
    Ok(elems
        .iter()
        .map(|e| {
            paths
                .iter()
                .map(|p| p.power_coeff * Complex64::from_polar(1.0, phase_shift(e, p.azimuth, p.elevation, wavelength)))
                .sum()
        })
        .collect())
}

/// Phase-only beam scan over `grid`. Each cell holds the complex combiner
/// output before the modulus; its magnitude is at most 1.
pub fn beam_scan(channel: &[Complex64], elems: &[ElementCoord], grid: AngularGrid, wavelength: f64) -> Result<Spectrum<f64>> {
    grid.validate()?;
    if channel.len() != elems.len() || elems.is_empty() {
        return Err(WrfError::ShapeMismatch(format!(
            "channel has {} entries for {} elements",
            channel.len(),
            elems.len()
        )));
    }
    if let Some(i) = channel.iter().position(|h| h.norm() == 0.0) {
        return Err(WrfError::DegenerateChannel(i));
    }
    let phases: Vec<f64> = channel.iter().map(|h| h.arg()).collect();
    // element positions in wavelengths, scaled by −2π
    let ex: Vec<f64> = elems.iter().map(|e| -TAU * e.radial * e.angular.cos() / wavelength).collect();
    let ey: Vec<f64> = elems.iter().map(|e| -TAU * e.radial * e.angular.sin() / wavelength).collect();
    let inv_k = 1.0 / elems.len() as f64;
    let az_trig: Vec<(f64, f64)> = (0..grid.n_azimuth).map(|j| grid.azimuth(j).sin_cos()).collect();

    let mut values = Vec::with_capacity(2 * grid.cells());
    for row in 0..grid.n_elevation {
        let cos_el = grid.elevation(row).cos();
        for &(sin_az, cos_az) in &az_trig {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..elems.len() {
                let delta = (ex[i] * cos_az + ey[i] * sin_az) * cos_el;
                let (s, c) = (phases[i] - delta).sin_cos();
                re += c;
                im += s;
            }
            values.push(re * inv_k);
            values.push(im * inv_k);
        }
    }
    Ok(Spectrum::from_values_unchecked(grid, values))
}
