//! Angular grids and complex spatial spectra.

mod metrics;

use serde::{Deserialize, Serialize};

pub use metrics::{l1, psnr, ssim, ssim_with_grad, MetricReport, PSNR_CAP_DB};

use crate::{Real, Result, WrfError};

/// Uniform azimuth × elevation sampling of the upper hemisphere.
///
/// Column `j` sits at azimuth `j·360/n_azimuth` degrees (half open over the
/// circle); row `k` sits at elevation `k·90/n_elevation` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngularGrid {
    pub n_azimuth: usize,
    pub n_elevation: usize,
}

impl AngularGrid {
    pub fn new(n_azimuth: usize, n_elevation: usize) -> Result<Self> {
        let grid = Self { n_azimuth, n_elevation };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_azimuth == 0 || self.n_elevation == 0 {
            return Err(WrfError::InvalidArgument(format!(
                "grid dimensions must be positive, got {}x{}",
                self.n_azimuth, self.n_elevation
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.n_azimuth * self.n_elevation
    }

    /// Azimuth step in radians.
    pub fn azimuth_step(&self) -> f64 {
        std::f64::consts::TAU / self.n_azimuth as f64
    }

    /// Elevation step in radians.
    pub fn elevation_step(&self) -> f64 {
        std::f64::consts::FRAC_PI_2 / self.n_elevation as f64
    }

    pub fn azimuth(&self, col: usize) -> f64 {
        col as f64 * self.azimuth_step()
    }

    pub fn elevation(&self, row: usize) -> f64 {
        row as f64 * self.elevation_step()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_azimuth + col
    }
}

/// Complex spectrum on an [`AngularGrid`], stored row-major (rows are
/// elevations) with interleaved `[re, im]` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<F = f32> {
    grid: AngularGrid,
    values: Vec<F>,
}

impl<F: Real> Spectrum<F> {
    pub fn zeros(grid: AngularGrid) -> Self {
        Self { grid, values: vec![F::zero(); 2 * grid.cells()] }
    }

    /// Wraps interleaved `[re, im]` samples; rejects wrong lengths and
    /// non-finite values.
    pub fn from_values(grid: AngularGrid, values: Vec<F>) -> Result<Self> {
        grid.validate()?;
        if values.len() != 2 * grid.cells() {
            return Err(WrfError::ShapeMismatch(format!(
                "expected {} values for a {}x{} grid, got {}",
                2 * grid.cells(),
                grid.n_elevation,
                grid.n_azimuth,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(WrfError::InvalidArgument(format!("non-finite sample at index {i}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_values_unchecked(grid: AngularGrid, values: Vec<F>) -> Self {
        debug_assert_eq!(values.len(), 2 * grid.cells());
        Self { grid, values }
    }

    pub fn grid(&self) -> AngularGrid {
        self.grid
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<F> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> (F, F) {
        let i = 2 * self.grid.index(row, col);
        (self.values[i], self.values[i + 1])
    }

    pub fn set(&mut self, row: usize, col: usize, re: F, im: F) {
        let i = 2 * self.grid.index(row, col);
        self.values[i] = re;
        self.values[i + 1] = im;
    }

    /// Element-wise modulus, row-major.
    pub fn magnitude(&self) -> Vec<F> {
        self.values.chunks_exact(2).map(|c| c[0].hypot(c[1])).collect()
    }

    pub fn max_magnitude(&self) -> F {
        self.magnitude().into_iter().fold(F::zero(), F::max)
    }

    /// The same grid with `(|A|, 0)` in every cell, for magnitude-only scoring.
    pub fn magnitude_spectrum(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for m in self.magnitude() {
            values.push(m);
            values.push(F::zero());
        }
        Self { grid: self.grid, values }
    }

    pub fn scale(&mut self, factor: F) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn cast<G: Real>(&self) -> Spectrum<G> {
        Spectrum {
            grid: self.grid,
            values: self.values.iter().map(|v| G::of(v.f64())).collect(),
        }
    }

    pub(crate) fn check_same_grid(&self, other: &Spectrum<F>) -> Result<()> {
        if self.grid != other.grid {
            return Err(WrfError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.grid.n_elevation,
                self.grid.n_azimuth,
                other.grid.n_elevation,
                other.grid.n_azimuth
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_angles() {
        let g = AngularGrid::new(360, 90).unwrap();
        assert!((g.azimuth(90) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((g.elevation(45) - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert_eq!(g.elevation(0), 0.0);
        assert!(AngularGrid::new(0, 3).is_err());
        assert!(AngularGrid::new(3, 0).is_err());
    }

    #[test]
    fn magnitude_examples() {
        let g = AngularGrid::new(3, 1).unwrap();
        let s = Spectrum::<f64>::from_values(g, vec![3.0, 4.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(s.magnitude(), vec![5.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_values() {
        let g = AngularGrid::new(2, 1).unwrap();
        assert!(Spectrum::<f32>::from_values(g, vec![0.0; 3]).is_err());
        assert!(Spectrum::<f32>::from_values(g, vec![0.0, f32::NAN, 0.0, 0.0]).is_err());
    }
}
