//! 2D Gaussian primitives on the angular grid.
//!
//! Each primitive carries an unconstrained center (mapped through `tanh` to
//! elevation `(0, π/2)` and azimuth `(0, 2π)`), a lower-triangular Cholesky
//! factor `[l1, l2, l3]`, an attenuation logit and a complex response.
//!
//! Covariances live in grid-cell units: the displacement between a cell and a
//! primitive center is measured in elevation steps and azimuth steps, so the
//! same Cholesky factor means the same footprint in cells on any grid.

mod raster;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use raster::{kernel_weight, rasterize, rasterize_backward, RasterConfig};

use crate::spectrum::AngularGrid;
use crate::{Real, Result, WrfError};

/// Lower bound applied to the Cholesky diagonal.
pub const CHOL_EPS: f64 = 1e-4;

const SECTION_MAGIC: &[u8; 4] = b"WRF2";
const SECTION_VERSION: u32 = 1;
/// Initial Cholesky diagonal, in cells.
const INIT_SIGMA_CELLS: f64 = 2.0;

/// Struct-of-arrays primitive set; every field is flattened per primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet<F = f32> {
    pub grid: AngularGrid,
    /// `[elevation_raw, azimuth_raw]` per primitive.
    pub center_raw: Vec<F>,
    /// `[l1, l2, l3]` per primitive, `L = [[l1, 0], [l2, l3]]`.
    pub cholesky: Vec<F>,
    pub atten_logit: Vec<F>,
    /// `[re, im]` per primitive.
    pub response: Vec<F>,
}

/// Per-primitive offsets predicted for one transceiver position. There is
/// deliberately no covariance term.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals<F = f32> {
    /// `[Δelevation, Δazimuth]` in radians.
    pub d_center: Vec<F>,
    pub d_response: Vec<F>,
    pub d_atten: Vec<F>,
}

impl<F: Real> Residuals<F> {
    pub fn zeros(n: usize) -> Self {
        Self { d_center: vec![F::zero(); 2 * n], d_response: vec![F::zero(); 2 * n], d_atten: vec![F::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.d_atten.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_atten.is_empty()
    }
}

/// Gradients of a scalar objective with respect to every primitive and
/// residual field. Residual gradients are present even when the render used
/// no residuals: they equal the gradient at a zero residual.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGrads<F = f32> {
    pub center_raw: Vec<F>,
    pub cholesky: Vec<F>,
    pub atten_logit: Vec<F>,
    pub response: Vec<F>,
    pub d_center: Vec<F>,
    pub d_response: Vec<F>,
    pub d_atten: Vec<F>,
}

impl<F: Real> RenderGrads<F> {
    pub fn zeros(n: usize) -> Self {
        Self {
            center_raw: vec![F::zero(); 2 * n],
            cholesky: vec![F::zero(); 3 * n],
            atten_logit: vec![F::zero(); n],
            response: vec![F::zero(); 2 * n],
            d_center: vec![F::zero(); 2 * n],
            d_response: vec![F::zero(); 2 * n],
            d_atten: vec![F::zero(); n],
        }
    }
}

/// `(elevation, azimuth)` in radians for an unconstrained center.
pub fn materialize_center<F: Real>(raw: [F; 2]) -> (F, F) {
    let quarter_pi = F::FRAC_PI_4();
    (quarter_pi * (raw[0].tanh() + F::one()), F::PI() * (raw[1].tanh() + F::one()))
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Real> GaussianSet<F> {
    pub fn len(&self) -> usize {
        self.atten_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atten_logit.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(WrfError::InvalidArgument("a Gaussian set needs at least one primitive".into()));
        }
        if self.center_raw.len() != 2 * n || self.cholesky.len() != 3 * n || self.response.len() != 2 * n {
            return Err(WrfError::ShapeMismatch("Gaussian set arrays disagree on the primitive count".into()));
        }
        self.grid.validate()
    }

    pub fn check_residuals(&self, residuals: &Residuals<F>) -> Result<()> {
        let n = self.len();
        if residuals.d_atten.len() != n || residuals.d_center.len() != 2 * n || residuals.d_response.len() != 2 * n {
            return Err(WrfError::ShapeMismatch(format!(
                "residuals cover {} primitives, set has {n}",
                residuals.len()
            )));
        }
        Ok(())
    }

    pub fn center(&self, i: usize) -> (F, F) {
        materialize_center([self.center_raw[2 * i], self.center_raw[2 * i + 1]])
    }

    pub fn attenuation(&self, i: usize) -> F {
        sigmoid(self.atten_logit[i])
    }

    /// Raises any Cholesky diagonal below [`CHOL_EPS`] back to it.
    pub fn project_cholesky(&mut self) {
        let eps = F::of(CHOL_EPS);
        for l in self.cholesky.chunks_exact_mut(3) {
            l[0] = l[0].max(eps);
            l[2] = l[2].max(eps);
        }
    }

    pub fn cast<G: Real>(&self) -> GaussianSet<G> {
        let c = |v: &Vec<F>| v.iter().map(|x| G::of(x.f64())).collect();
        GaussianSet {
            grid: self.grid,
            center_raw: c(&self.center_raw),
            cholesky: c(&self.cholesky),
            atten_logit: c(&self.atten_logit),
            response: c(&self.response),
        }
    }

    /// Reorders primitives by `perm` (`new[i] = old[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let gather = |src: &Vec<F>, w: usize| perm.iter().flat_map(|&p| src[w * p..w * p + w].iter().copied()).collect();
        Self {
            grid: self.grid,
            center_raw: gather(&self.center_raw, 2),
            cholesky: gather(&self.cholesky, 3),
            atten_logit: gather(&self.atten_logit, 1),
            response: gather(&self.response, 2),
        }
    }
}

/// Random canonical set: centers uniform in raw space `[-2, 2]²`, isotropic
/// footprints of [`INIT_SIGMA_CELLS`], attenuation ½ and small responses.
pub fn init_random<F: Real>(n: usize, grid: AngularGrid, seed: u64) -> Result<GaussianSet<F>> {
    if n == 0 {
        return Err(WrfError::InvalidArgument("primitive count must be at least 1".into()));
    }
    grid.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    let mut center_raw = Vec::with_capacity(2 * n);
    let mut cholesky = Vec::with_capacity(3 * n);
    let mut response = Vec::with_capacity(2 * n);
    for _ in 0..n {
        center_raw.push(F::of(rng.random_range(-2.0..2.0)));
        center_raw.push(F::of(rng.random_range(-2.0..2.0)));
        cholesky.extend([F::of(INIT_SIGMA_CELLS), F::zero(), F::of(INIT_SIGMA_CELLS)]);
        response.push(F::of(normal.sample(&mut rng)));
        response.push(F::of(normal.sample(&mut rng)));
    }
    Ok(GaussianSet { grid, center_raw, cholesky, atten_logit: vec![F::zero(); n], response })
}

impl GaussianSet<f32> {
    /// Checkpoint section: 16-byte header (`WRF2`, version, N, reserved)
    /// then little-endian `f32` arrays in field order.
    pub fn write_section(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(SECTION_MAGIC);
        out.extend_from_slice(&SECTION_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in self.center_raw.iter().chain(&self.cholesky).chain(&self.atten_logit).chain(&self.response) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Parses a section written by [`write_section`](Self::write_section);
    /// returns the set and the number of bytes consumed.
    pub fn read_section(bytes: &[u8], grid: AngularGrid) -> Result<(Self, usize)> {
        if bytes.len() < 16 || &bytes[..4] != SECTION_MAGIC {
            return Err(WrfError::Format("missing Gaussian section header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if word(4) != SECTION_VERSION {
            return Err(WrfError::Format(format!("unsupported Gaussian section version {}", word(4))));
        }
        let n = word(8) as usize;
        let total = 16 + 4 * 8 * n;
        if bytes.len() < total {
            return Err(WrfError::Format("truncated Gaussian section".into()));
        }
        let floats: Vec<f32> =
            bytes[16..total].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let (center_raw, rest) = floats.split_at(2 * n);
        let (cholesky, rest) = rest.split_at(3 * n);
        let (atten_logit, response) = rest.split_at(n);
        let set = Self {
            grid,
            center_raw: center_raw.to_vec(),
            cholesky: cholesky.to_vec(),
            atten_logit: atten_logit.to_vec(),
            response: response.to_vec(),
        };
        set.validate()?;
        Ok((set, total))
    }
}
