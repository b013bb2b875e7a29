//! Tile-parallel spectrum rasterization and its analytic backward pass.
//!
//! Every cell value is the unordered sum `Σ ψ·δ·exp(-½ dᵀΣ⁻¹d)`. Primitives
//! are culled per 16×16 tile against the bounding box of their Mahalanobis
//! cutoff ellipse; azimuth displacements wrap around the circle.

use rayon::prelude::*;

use super::{sigmoid, GaussianSet, RenderGrads, Residuals, CHOL_EPS};
use crate::spectrum::Spectrum;
use crate::{Real, Result, WrfError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    /// Mahalanobis radius beyond which a kernel is treated as zero; `None`
    /// evaluates every primitive on every cell.
    pub cutoff: Option<f64>,
    pub tile_size: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { cutoff: Some(3.0), tile_size: 16 }
    }
}

impl RasterConfig {
    pub fn uncut() -> Self {
        Self { cutoff: None, ..Self::default() }
    }
}

/// A primitive resolved into grid-cell coordinates.
#[derive(Debug, Clone, Copy)]
struct Prim<F> {
    row: F,
    col: F,
    // q = u² + v² with u = dr/l1, v = (dc - l2·u)/l3
    inv_l1: F,
    inv_l3: F,
    delta: F,
    psi: [F; 2],
    rows: (usize, usize),
    /// Unwrapped, inclusive; narrower than the grid.
    cols: (i64, i64),
    visible: bool,
    // backward bookkeeping
    l: [F; 3],
    l_pass: [bool; 2],
    delta_pass: bool,
    sig: F,
    tanh: [F; 2],
    /// `exp(-1/l3²)` when rows may use [`RowExp`].
    step: Option<F>,
}

/// `exp(-½q)` along one row, advanced one column at a time by the ratio of
/// consecutive Gaussian values.
struct RowExp<F> {
    g: F,
    r: F,
    c: F,
}

impl<F: Real> RowExp<F> {
    fn start(p: &Prim<F>, uu: F, lu: F, j: i64, shift: i64) -> Option<Self> {
        let c = p.step?;
        let a = p.inv_l3;
        let v = (F::of((j - shift) as f64) - p.col - lu) * a;
        let half = F::of(-0.5);
        Some(Self { g: (half * (uu + v * v)).exp(), r: (-v * a + half * a * a).exp(), c })
    }

    #[inline]
    fn next(&mut self) -> F {
        let g = self.g;
        self.g = g * self.r;
        self.r = self.r * self.c;
        g
    }
}

struct Layout {
    n_el: usize,
    n_az: usize,
    tile: usize,
    tiles_r: usize,
    tiles_c: usize,
}

impl Layout {
    fn tile_rect(&self, t: usize) -> (usize, usize, usize, usize) {
        let (tr, tc) = (t / self.tiles_c, t % self.tiles_c);
        let r0 = tr * self.tile;
        let c0 = tc * self.tile;
        (r0, (r0 + self.tile).min(self.n_el) - 1, c0, (c0 + self.tile).min(self.n_az) - 1)
    }
}

fn prepare<F: Real>(set: &GaussianSet<F>, residuals: Option<&Residuals<F>>, cfg: &RasterConfig) -> Vec<Prim<F>> {
    let grid = set.grid;
    let step_el = F::of(grid.elevation_step());
    let step_az = F::of(grid.azimuth_step());
    let n_az = grid.n_azimuth as i64;
    let eps = F::of(CHOL_EPS);
    let zero = F::zero();
    (0..set.len())
        .map(|i| {
            let (d_el, d_az, d_psi, d_delta) = match residuals {
                Some(r) => (r.d_center[2 * i], r.d_center[2 * i + 1], [r.d_response[2 * i], r.d_response[2 * i + 1]], r.d_atten[i]),
                None => (zero, zero, [zero, zero], zero),
            };
            let tanh = [set.center_raw[2 * i].tanh(), set.center_raw[2 * i + 1].tanh()];
            let el = F::FRAC_PI_4() * (tanh[0] + F::one()) + d_el;
            let az = F::PI() * (tanh[1] + F::one()) + d_az;
            let row = el / step_el;
            let col = az / step_az;
            let col = col - F::of(n_az as f64) * (col / F::of(n_az as f64)).floor();

            let raw = &set.cholesky[3 * i..3 * i + 3];
            let l = [raw[0].max(eps), raw[1], raw[2].max(eps)];
            let l_pass = [raw[0] >= eps, raw[2] >= eps];
            let (inv_l1, inv_l3) = (F::one() / l[0], F::one() / l[2]);

            let sig = sigmoid(set.atten_logit[i]);
            let delta_raw = sig + d_delta;
            let delta = delta_raw.max(zero).min(F::one());
            let delta_pass = delta_raw > zero && delta_raw < F::one();
            let psi = [set.response[2 * i] + d_psi[0], set.response[2 * i + 1] + d_psi[1]];

            let finite = [row, col, inv_l1, l[1], inv_l3, delta, psi[0], psi[1]].iter().all(|v| v.is_finite());
            let (rows, cols) = match cfg.cutoff {
                Some(r) if finite => {
                    let r = F::of(r);
                    let ext_r = r * l[0];
                    let ext_c = r * (l[1] * l[1] + l[2] * l[2]).sqrt();
                    let lo = (row - ext_r).ceil().max(zero);
                    let hi = (row + ext_r).floor().min(F::of((grid.n_elevation - 1) as f64));
                    let rows = if lo <= hi { (lo.f64() as usize, hi.f64() as usize) } else { (1, 0) };
                    let cols = if (ext_c + ext_c).f64() + 1.0 >= n_az as f64 {
                        full_circle(col, n_az)
                    } else {
                        ((col - ext_c).ceil().f64() as i64, (col + ext_c).floor().f64() as i64)
                    };
                    (rows, cols)
                }
                None if finite => ((0, grid.n_elevation - 1), full_circle(col, n_az)),
                _ => ((1, 0), (0, -1)),
            };
            Prim {
                row,
                col,
                inv_l1,
                inv_l3,
                delta,
                psi,
                rows,
                cols,
                visible: finite && rows.0 <= rows.1 && cols.0 <= cols.1,
                l,
                l_pass,
                delta_pass,
                sig,
                tanh,
                step: (cfg.cutoff.is_some() && inv_l3 <= F::one()).then(|| (-inv_l3 * inv_l3).exp()),
            }
        })
        .collect()
}

/// Column window of width `n` whose displacements from `col` lie in
/// `[-n/2, n/2)`.
fn full_circle<F: Real>(col: F, n: i64) -> (i64, i64) {
    let c0 = (col - F::of(n as f64 / 2.0)).ceil().f64() as i64;
    (c0, c0 + n - 1)
}

/// Wrapped column segments of `cols` that fall inside `[lo, hi]`, each with
/// the shift that maps the pixel column back to the unwrapped coordinate.
fn col_segments(cols: (i64, i64), lo: i64, hi: i64, n: i64) -> impl Iterator<Item = (i64, i64, i64)> {
    [-n, 0, n].into_iter().filter_map(move |shift| {
        let s = (cols.0 + shift).max(lo);
        let e = (cols.1 + shift).min(hi);
        (s <= e).then_some((s, e, shift))
    })
}

/// Part of the pixel segment `(s, e, shift)` that can pass the cutoff on a
/// row with `u² = uu`, widened by one column on each side.
fn row_span<F: Real>(p: &Prim<F>, uu: F, lu: F, cut2: F, (s, e, shift): (i64, i64, i64)) -> (i64, i64) {
    let rem = cut2 - uu;
    if !(rem >= F::zero()) {
        return (1, 0);
    }
    let hw = p.l[2] * rem.sqrt();
    let c = p.col + lu;
    let lo = ((c - hw).floor().f64() as i64).saturating_sub(1).saturating_add(shift);
    let hi = ((c + hw).ceil().f64() as i64).saturating_add(1).saturating_add(shift);
    (lo.max(s), hi.min(e))
}

fn bin<F: Real>(prims: &[Prim<F>], layout: &Layout) -> Vec<Vec<u32>> {
    let mut lists = vec![Vec::new(); layout.tiles_r * layout.tiles_c];
    let n = layout.n_az as i64;
    let t = layout.tile;
    let mut tcs: Vec<usize> = Vec::with_capacity(layout.tiles_c);
    for (i, p) in prims.iter().enumerate() {
        if !p.visible {
            continue;
        }
        tcs.clear();
        for (s, e, _) in col_segments(p.cols, 0, n - 1, n) {
            tcs.extend((s as usize / t)..=(e as usize / t));
        }
        tcs.sort_unstable();
        tcs.dedup();
        for tr in p.rows.0 / t..=p.rows.1 / t {
            for &tc in &tcs {
                lists[tr * layout.tiles_c + tc].push(i as u32);
            }
        }
    }
    lists
}

fn layout_for<F: Real>(set: &GaussianSet<F>, cfg: &RasterConfig) -> Layout {
    let t = cfg.tile_size.max(1);
    let (n_el, n_az) = (set.grid.n_elevation, set.grid.n_azimuth);
    Layout { n_el, n_az, tile: t, tiles_r: n_el.div_ceil(t), tiles_c: n_az.div_ceil(t) }
}

fn cutoff_sq<F: Real>(cfg: &RasterConfig) -> F {
    cfg.cutoff.map_or(F::infinity(), |r| F::of(r * r))
}

/// Renders the set, optionally deformed by `residuals`, onto its grid.
pub fn rasterize<F: Real>(set: &GaussianSet<F>, residuals: Option<&Residuals<F>>, cfg: &RasterConfig) -> Result<Spectrum<F>> {
    set.validate()?;
    if let Some(r) = residuals {
        set.check_residuals(r)?;
    }
    let prims = prepare(set, residuals, cfg);
    let layout = layout_for(set, cfg);
    let lists = bin(&prims, &layout);
    let cut2: F = cutoff_sq(cfg);
    let n = layout.n_az as i64;
    let half = F::of(-0.5);

    let tiles: Vec<Vec<F>> = (0..lists.len())
        .into_par_iter()
        .map(|t| {
            let (r0, r1, c0, c1) = layout.tile_rect(t);
            let w = c1 - c0 + 1;
            let mut buf = vec![F::zero(); 2 * (r1 - r0 + 1) * w];
            for &pi in &lists[t] {
                let p = &prims[pi as usize];
                let (rl, rh) = (p.rows.0.max(r0), p.rows.1.min(r1));
                for (s, e, shift) in col_segments(p.cols, c0 as i64, c1 as i64, n) {
                    for row in rl..=rh {
                        let u = (F::of(row as f64) - p.row) * p.inv_l1;
                        let (uu, lu) = (u * u, p.l[1] * u);
                        let out = &mut buf[2 * (row - r0) * w..2 * (row - r0 + 1) * w];
                        let (s, e) = row_span(p, uu, lu, cut2, (s, e, shift));
                        let mut rec = RowExp::start(p, uu, lu, s, shift);
                        for j in s..=e {
                            let v = (F::of((j - shift) as f64) - p.col - lu) * p.inv_l3;
                            let q = uu + v * v;
                            let ex = match &mut rec {
                                Some(r) => r.next(),
                                None => (half * q).exp(),
                            };
                            if q <= cut2 {
                                let k = p.delta * ex;
                                let o = 2 * (j as usize - c0);
                                out[o] += p.psi[0] * k;
                                out[o + 1] += p.psi[1] * k;
                            }
                        }
                    }
                }
            }
            buf
        })
        .collect();

    let mut values = vec![F::zero(); 2 * set.grid.cells()];
    for (t, buf) in tiles.iter().enumerate() {
        let (r0, r1, c0, c1) = layout.tile_rect(t);
        let w = c1 - c0 + 1;
        for row in r0..=r1 {
            let dst = 2 * (row * layout.n_az + c0);
            values[dst..dst + 2 * w].copy_from_slice(&buf[2 * (row - r0) * w..2 * (row - r0 + 1) * w]);
        }
    }
    Ok(Spectrum::from_values_unchecked(set.grid, values))
}

/// Gradients of `Σ_cells upstream · render` with respect to every primitive
/// and residual field. Uses the same cutoff as [`rasterize`].
pub fn rasterize_backward<F: Real>(
    set: &GaussianSet<F>,
    residuals: Option<&Residuals<F>>,
    upstream: &[F],
    cfg: &RasterConfig,
) -> Result<RenderGrads<F>> {
    set.validate()?;
    if let Some(r) = residuals {
        set.check_residuals(r)?;
    }
    if upstream.len() != 2 * set.grid.cells() {
        return Err(WrfError::ShapeMismatch(format!(
            "upstream gradient has {} values, grid needs {}",
            upstream.len(),
            2 * set.grid.cells()
        )));
    }
    let prims = prepare(set, residuals, cfg);
    let layout = layout_for(set, cfg);
    let lists = bin(&prims, &layout);
    let cut2: F = cutoff_sq(cfg);
    let n = layout.n_az as i64;
    let half = F::of(-0.5);
    let two = F::of(2.0);

    // [gψre, gψim, gδ, Σw·u², Σw·uv, Σw·v², Σw·u, Σw·v] per (tile, primitive)
    // with w = ∂L/∂q
    let partials: Vec<Vec<[F; 8]>> = (0..lists.len())
        .into_par_iter()
        .map(|t| {
            let (r0, r1, c0, c1) = layout.tile_rect(t);
            lists[t]
                .iter()
                .map(|&pi| {
                    let p = &prims[pi as usize];
                    let mut acc = [F::zero(); 8];
                    let (rl, rh) = (p.rows.0.max(r0), p.rows.1.min(r1));
                    for (s, e, shift) in col_segments(p.cols, c0 as i64, c1 as i64, n) {
                        for row in rl..=rh {
                            let u = (F::of(row as f64) - p.row) * p.inv_l1;
                            let (uu, lu) = (u * u, p.l[1] * u);
                            let up = &upstream[2 * row * layout.n_az..2 * (row + 1) * layout.n_az];
                            let (s, e) = row_span(p, uu, lu, cut2, (s, e, shift));
                            let mut rec = RowExp::start(p, uu, lu, s, shift);
                            for j in s..=e {
                                let v = (F::of((j - shift) as f64) - p.col - lu) * p.inv_l3;
                                let q = uu + v * v;
                                let ex = match &mut rec {
                                    Some(r) => r.next(),
                                    None => (half * q).exp(),
                                };
                                if q > cut2 {
                                    continue;
                                }
                                let k = p.delta * ex;
                                let (g0, g1) = (up[2 * j as usize], up[2 * j as usize + 1]);
                                acc[0] += g0 * k;
                                acc[1] += g1 * k;
                                let gk = g0 * p.psi[0] + g1 * p.psi[1];
                                acc[2] += gk * ex;
                                let gq = half * gk * k;
                                let (wu, wv) = (gq * u, gq * v);
                                acc[3] += wu * u;
                                acc[4] += wu * v;
                                acc[5] += wv * v;
                                acc[6] += wu;
                                acc[7] += wv;
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let mut acc = vec![[F::zero(); 8]; set.len()];
    for (t, part) in partials.iter().enumerate() {
        for (&pi, g) in lists[t].iter().zip(part) {
            let dst = &mut acc[pi as usize];
            for k in 0..8 {
                dst[k] += g[k];
            }
        }
    }

    let grid = set.grid;
    let step_el = F::of(grid.elevation_step());
    let step_az = F::of(grid.azimuth_step());
    let mut out = RenderGrads::zeros(set.len());
    for (i, (p, g)) in prims.iter().zip(&acc).enumerate() {
        out.response[2 * i] = g[0];
        out.response[2 * i + 1] = g[1];
        out.d_response[2 * i] = g[0];
        out.d_response[2 * i + 1] = g[1];

        let g_delta = if p.delta_pass { g[2] } else { F::zero() };
        out.d_atten[i] = g_delta;
        out.atten_logit[i] = g_delta * p.sig * (F::one() - p.sig);

        let l2 = p.l[1];
        let (s_uu, s_uv, s_vv, s_u, s_v) = (g[3], g[4], g[5], g[6], g[7]);
        let ratio = l2 * p.inv_l3;
        let g_row = -two * p.inv_l1 * (s_u - ratio * s_v);
        let g_col = -two * p.inv_l3 * s_v;
        let g_el = g_row / step_el;
        let g_az = g_col / step_az;
        out.d_center[2 * i] = g_el;
        out.d_center[2 * i + 1] = g_az;
        out.center_raw[2 * i] = g_el * F::FRAC_PI_4() * (F::one() - p.tanh[0] * p.tanh[0]);
        out.center_raw[2 * i + 1] = g_az * F::PI() * (F::one() - p.tanh[1] * p.tanh[1]);

        let g1 = -two * p.inv_l1 * (s_uu - ratio * s_uv);
        let g2 = -two * p.inv_l3 * s_uv;
        let g3 = -two * p.inv_l3 * s_vv;
        out.cholesky[3 * i] = if p.l_pass[0] { g1 } else { F::zero() };
        out.cholesky[3 * i + 1] = g2;
        out.cholesky[3 * i + 2] = if p.l_pass[1] { g3 } else { F::zero() };
    }
    Ok(out)
}

/// Kernel weight `δ·exp(-½ dᵀΣ⁻¹d)` of primitive `i` at a direction in
/// radians, without any cutoff.
pub fn kernel_weight<F: Real>(
    set: &GaussianSet<F>,
    i: usize,
    elevation: F,
    azimuth: F,
    residuals: Option<&Residuals<F>>,
) -> F {
    let p = &prepare(&single(set, i), residuals.map(|r| single_residual(r, i)).as_ref(), &RasterConfig::uncut())[0];
    let grid = set.grid;
    let n = F::of(grid.n_azimuth as f64);
    let dx = elevation / F::of(grid.elevation_step()) - p.row;
    let mut dy = azimuth / F::of(grid.azimuth_step()) - p.col;
    dy = dy - n * (dy / n + F::of(0.5)).floor();
    let u = dx * p.inv_l1;
    let v = (dy - p.l[1] * u) * p.inv_l3;
    let q = u * u + v * v;
    p.delta * (F::of(-0.5) * q).exp()
}

fn single<F: Real>(set: &GaussianSet<F>, i: usize) -> GaussianSet<F> {
    GaussianSet {
        grid: set.grid,
        center_raw: set.center_raw[2 * i..2 * i + 2].to_vec(),
        cholesky: set.cholesky[3 * i..3 * i + 3].to_vec(),
        atten_logit: vec![set.atten_logit[i]],
        response: set.response[2 * i..2 * i + 2].to_vec(),
    }
}

fn single_residual<F: Real>(r: &Residuals<F>, i: usize) -> Residuals<F> {
    Residuals {
        d_center: r.d_center[2 * i..2 * i + 2].to_vec(),
        d_response: r.d_response[2 * i..2 * i + 2].to_vec(),
        d_atten: vec![r.d_atten[i]],
    }
}
