//! Positional encoding, the skip-connected deformation MLP and the
//! position-noise annealing schedule.
//!
//! The network maps `[γ(μ), γ(s)]` for every primitive to five residuals
//! `[Δelevation, Δazimuth, Δψre, Δψim, Δδ]`. Eight ReLU layers of width 156
//! are followed by a linear head; layers 3, 5 and 7 see the input encoding
//! again through concatenation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::real::dense;
use crate::splat::{materialize_center, GaussianSet, RenderGrads, Residuals};
use crate::{Real, Result, WrfError};

pub const HIDDEN_LAYERS: usize = 8;
pub const HIDDEN_WIDTH: usize = 156;
pub const OUTPUTS: usize = 5;
/// Zero-based hidden layers that also receive the input encoding.
pub const SKIP_LAYERS: [usize; 3] = [2, 4, 6];

const SECTION_MAGIC: &[u8; 4] = b"WRFD";
const SECTION_VERSION: u32 = 1;
/// Rows per parallel work item; fixed so results do not depend on the
/// thread count.
const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSpec {
    pub bands_center: usize,
    pub bands_position: usize,
}

impl Default for EncodingSpec {
    fn default() -> Self {
        Self { bands_center: 10, bands_position: 6 }
    }
}

impl EncodingSpec {
    pub fn center_dim(&self) -> usize {
        2 * (2 * self.bands_center + 1)
    }

    pub fn position_dim(&self) -> usize {
        3 * (2 * self.bands_position + 1)
    }

    pub fn input_dim(&self) -> usize {
        self.center_dim() + self.position_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands_center == 0 || self.bands_position == 0 {
            return Err(WrfError::InvalidArgument("encoding needs at least one frequency band".into()));
        }
        if self.bands_center > 24 || self.bands_position > 24 {
            return Err(WrfError::InvalidArgument("more than 24 frequency bands is not supported".into()));
        }
        Ok(())
    }
}

/// `[v, sin(2⁰πv), …, sin(2^{L-1}πv), cos(2⁰πv), …, cos(2^{L-1}πv)]`, each
/// block holding every component of `v`.
pub fn encode<F: Real>(v: &[F], bands: usize) -> Vec<F> {
    let mut out = vec![F::zero(); v.len() * (2 * bands + 1)];
    encode_into(v, bands, &mut out);
    out
}

pub fn encode_into<F: Real>(v: &[F], bands: usize, out: &mut [F]) {
    let d = v.len();
    debug_assert_eq!(out.len(), d * (2 * bands + 1));
    out[..d].copy_from_slice(v);
    let mut freq = F::PI();
    for k in 0..bands {
        for (i, &x) in v.iter().enumerate() {
            let (s, c) = (freq * x).sin_cos();
            out[d * (1 + k) + i] = s;
            out[d * (1 + bands + k) + i] = c;
        }
        freq = freq + freq;
    }
}

/// Accumulates `dL/dv` given `dL/dγ(v)`.
fn encode_backward<F: Real>(v: &[F], bands: usize, g_enc: &[F], g_v: &mut [F]) {
    let d = v.len();
    g_v.copy_from_slice(&g_enc[..d]);
    let mut freq = F::PI();
    for k in 0..bands {
        for (i, &x) in v.iter().enumerate() {
            let (s, c) = (freq * x).sin_cos();
            g_v[i] += freq * (c * g_enc[d * (1 + k) + i] - s * g_enc[d * (1 + bands + k) + i]);
        }
        freq = freq + freq;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F = f32> {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out × n_in`, row-major.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> Layer<F> {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, weight: vec![F::zero(); n_in * n_out], bias: vec![F::zero(); n_out] }
    }

    fn add_assign(&mut self, other: &Self) {
        self.weight.iter_mut().zip(&other.weight).for_each(|(a, b)| *a += *b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += *b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformNet<F = f32> {
    pub encoding: EncodingSpec,
    /// Hidden layers followed by the output head.
    pub layers: Vec<Layer<F>>,
}

/// Weight gradients, shaped like [`DeformNet::layers`], plus the gradient
/// reaching the canonical centers through the encoding input.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformGrads<F = f32> {
    pub layers: Vec<Layer<F>>,
    pub center_raw: Vec<F>,
}

/// Activations kept from a forward pass for [`DeformNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<F = f32> {
    n: usize,
    centers: Vec<F>,
    center_raw: Vec<F>,
    mu_enc: Vec<F>,
    pos_enc: Vec<F>,
    /// Post-ReLU output of every hidden layer, `n × width` each.
    hidden: Vec<Vec<F>>,
}

fn layer_dims(spec: &EncodingSpec) -> Vec<(usize, usize)> {
    let x = spec.input_dim();
    let mut dims = Vec::with_capacity(HIDDEN_LAYERS + 1);
    for l in 0..HIDDEN_LAYERS {
        let n_in = if l == 0 {
            x
        } else if SKIP_LAYERS.contains(&l) {
            HIDDEN_WIDTH + x
        } else {
            HIDDEN_WIDTH
        };
        dims.push((n_in, HIDDEN_WIDTH));
    }
    dims.push((HIDDEN_WIDTH, OUTPUTS));
    dims
}

/// Whether hidden layer `l` reads the input encoding.
fn reads_input(l: usize) -> bool {
    l == 0 || SKIP_LAYERS.contains(&l)
}

impl<F: Real> DeformNet<F> {
    /// All weights and biases zero.
    pub fn zeros(encoding: EncodingSpec) -> Result<Self> {
        encoding.validate()?;
        let layers = layer_dims(&encoding).into_iter().map(|(i, o)| Layer::zeros(i, o)).collect();
        Ok(Self { encoding, layers })
    }

    /// Kaiming-uniform hidden weights (`±√(6/fan_in)`), zero biases and a zero
    /// head, so a fresh network predicts zero residuals everywhere.
    pub fn new(encoding: EncodingSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(encoding)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in net.layers.iter_mut().take(HIDDEN_LAYERS) {
            let bound = (6.0 / layer.n_in as f64).sqrt();
            for w in &mut layer.weight {
                *w = F::of(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zero_grads(&self) -> DeformGrads<F> {
        DeformGrads {
            layers: self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect(),
            center_raw: Vec::new(),
        }
    }

    pub fn cast<G: Real>(&self) -> DeformNet<G> {
        let c = |v: &Vec<F>| v.iter().map(|x| G::of(x.f64())).collect();
        DeformNet {
            encoding: self.encoding,
            layers: self
                .layers
                .iter()
                .map(|l| Layer { n_in: l.n_in, n_out: l.n_out, weight: c(&l.weight), bias: c(&l.bias) })
                .collect(),
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let dims = layer_dims(&self.encoding);
        let ok = self.layers.len() == dims.len()
            && self.layers.iter().zip(&dims).all(|(l, &(i, o))| {
                l.n_in == i && l.n_out == o && l.weight.len() == i * o && l.bias.len() == o
            });
        if ok {
            Ok(())
        } else {
            Err(WrfError::ShapeMismatch("network layers do not match the encoding spec".into()))
        }
    }

    /// Per-primitive residuals for a position already normalized to the unit
    /// cube.
    pub fn predict_residuals(&self, set: &GaussianSet<F>, position: [F; 3]) -> Result<Residuals<F>> {
        self.forward(set, position).map(|(r, _)| r)
    }

    /// Forward pass that also returns the activations needed by
    /// [`backward`](Self::backward).
    pub fn forward(&self, set: &GaussianSet<F>, position: [F; 3]) -> Result<(Residuals<F>, ForwardCache<F>)> {
        self.check_shapes()?;
        set.validate()?;
        let n = set.len();
        let spec = self.encoding;
        let cd = spec.center_dim();

        // the high bands of a radian-valued center need more than f32
        // precision, so centers and their encoding are evaluated in f64
        let mut centers = vec![F::zero(); 2 * n];
        let mut mu_enc = vec![F::zero(); n * cd];
        let mut buf = vec![0.0f64; cd];
        for (i, out) in mu_enc.chunks_exact_mut(cd).enumerate() {
            let (el, az) = materialize_center([set.center_raw[2 * i].f64(), set.center_raw[2 * i + 1].f64()]);
            centers[2 * i] = F::of(el);
            centers[2 * i + 1] = F::of(az);
            encode_into(&[el, az], spec.bands_center, &mut buf);
            out.iter_mut().zip(&buf).for_each(|(o, &v)| *o = F::of(v));
        }
        let pos_f64 = [position[0].f64(), position[1].f64(), position[2].f64()];
        let pos_enc: Vec<F> = encode(&pos_f64, spec.bands_position).into_iter().map(F::of).collect();
        let pos_bias = self.position_bias(&pos_enc);

        let mut hidden: Vec<Vec<F>> = (0..HIDDEN_LAYERS).map(|_| vec![F::zero(); n * HIDDEN_WIDTH]).collect();
        let mut out = vec![F::zero(); n * OUTPUTS];
        {
            let mut hidden_chunks: Vec<Vec<&mut [F]>> = Vec::new();
            let mut iters: Vec<_> = hidden.iter_mut().map(|h| h.chunks_mut(CHUNK_ROWS * HIDDEN_WIDTH)).collect();
            let n_chunks = n.div_ceil(CHUNK_ROWS);
            for _ in 0..n_chunks {
                hidden_chunks.push(iters.iter_mut().map(|it| it.next().unwrap()).collect());
            }
            hidden_chunks
                .into_par_iter()
                .zip(out.par_chunks_mut(CHUNK_ROWS * OUTPUTS))
                .enumerate()
                .for_each(|(ci, (mut hs, o))| {
                    let r0 = ci * CHUNK_ROWS;
                    let rows = o.len() / OUTPUTS;
                    let mu = &mu_enc[r0 * cd..(r0 + rows) * cd];
                    self.forward_rows(rows, mu, &pos_bias, &mut hs, o);
                });
        }

        let mut res = Residuals::zeros(n);
        for (i, o) in out.chunks_exact(OUTPUTS).enumerate() {
            res.d_center[2 * i] = o[0];
            res.d_center[2 * i + 1] = o[1];
            res.d_response[2 * i] = o[2];
            res.d_response[2 * i + 1] = o[3];
            res.d_atten[i] = o[4];
        }
        let cache = ForwardCache { n, centers, center_raw: set.center_raw.clone(), mu_enc, pos_enc, hidden };
        Ok((res, cache))
    }

    /// `b + W_s·γ(s)` for every input-reading layer; the position encoding is
    /// shared by all rows.
    fn position_bias(&self, pos_enc: &[F]) -> Vec<Vec<F>> {
        let (cd, pd) = (self.encoding.center_dim(), self.encoding.position_dim());
        (0..HIDDEN_LAYERS)
            .map(|l| {
                let layer = &self.layers[l];
                if !reads_input(l) {
                    return layer.bias.clone();
                }
                let off = layer.n_in - pd;
                debug_assert_eq!(off, if l == 0 { cd } else { HIDDEN_WIDTH + cd });
                (0..layer.n_out)
                    .map(|o| {
                        let w = &layer.weight[o * layer.n_in + off..(o + 1) * layer.n_in];
                        layer.bias[o] + w.iter().zip(pos_enc).map(|(a, b)| *a * *b).sum::<F>()
                    })
                    .collect()
            })
            .collect()
    }

    fn forward_rows(&self, rows: usize, mu: &[F], pos_bias: &[Vec<F>], hs: &mut [&mut [F]], out: &mut [F]) {
        let cd = self.encoding.center_dim();
        let w = HIDDEN_WIDTH;
        for l in 0..HIDDEN_LAYERS {
            let layer = &self.layers[l];
            let (prev, rest) = hs.split_at_mut(l);
            let z = &mut *rest[0];
            for r in 0..rows {
                z[r * w..(r + 1) * w].copy_from_slice(&pos_bias[l]);
            }
            let mut col = 0;
            if l > 0 {
                dense::x_wt(rows, w, w, &*prev[l - 1], w, &layer.weight, layer.n_in, z, true);
                col = w;
            }
            if reads_input(l) {
                dense::x_wt(rows, cd, w, mu, cd, &layer.weight[col..], layer.n_in, z, true);
            }
            z.iter_mut().for_each(|v| *v = v.max(F::zero()));
        }
        let head = &self.layers[HIDDEN_LAYERS];
        for r in 0..rows {
            out[r * OUTPUTS..(r + 1) * OUTPUTS].copy_from_slice(&head.bias);
        }
        dense::x_wt(rows, w, OUTPUTS, &*hs[HIDDEN_LAYERS - 1], w, &head.weight, w, out, true);
    }

    /// Reverse pass from the rasterizer's residual gradients. With
    /// `stop_gradient` the returned center gradient is exactly zero;
    /// otherwise it is the contribution through `γ(μ)` only.
    pub fn backward(&self, cache: &ForwardCache<F>, grads: &RenderGrads<F>, stop_gradient: bool) -> Result<DeformGrads<F>> {
        self.check_shapes()?;
        let n = cache.n;
        if grads.d_atten.len() != n || grads.d_center.len() != 2 * n || grads.d_response.len() != 2 * n {
            return Err(WrfError::ShapeMismatch(format!(
                "residual gradients cover {} primitives, forward pass had {n}",
                grads.d_atten.len()
            )));
        }
        let cd = self.encoding.center_dim();
        let mut dy = vec![F::zero(); n * OUTPUTS];
        for (i, o) in dy.chunks_exact_mut(OUTPUTS).enumerate() {
            o[0] = grads.d_center[2 * i];
            o[1] = grads.d_center[2 * i + 1];
            o[2] = grads.d_response[2 * i];
            o[3] = grads.d_response[2 * i + 1];
            o[4] = grads.d_atten[i];
        }

        let n_chunks = n.div_ceil(CHUNK_ROWS);
        let partials: Vec<(Vec<Layer<F>>, Vec<F>)> = (0..n_chunks)
            .into_par_iter()
            .map(|ci| {
                let r0 = ci * CHUNK_ROWS;
                let rows = CHUNK_ROWS.min(n - r0);
                self.backward_rows(cache, r0, rows, &dy[r0 * OUTPUTS..(r0 + rows) * OUTPUTS], !stop_gradient)
            })
            .collect();

        let mut total = self.zero_grads();
        let mut g_mu_enc = vec![F::zero(); if stop_gradient { 0 } else { n * cd }];
        for (ci, (layers, g_mu)) in partials.iter().enumerate() {
            for (t, p) in total.layers.iter_mut().zip(layers) {
                t.add_assign(p);
            }
            if !stop_gradient {
                let r0 = ci * CHUNK_ROWS;
                g_mu_enc[r0 * cd..r0 * cd + g_mu.len()].copy_from_slice(g_mu);
            }
        }

        // the position encoding only ever enters through the shared bias
        let pd = self.encoding.position_dim();
        for l in (0..HIDDEN_LAYERS).filter(|&l| reads_input(l)) {
            let g = &mut total.layers[l];
            let off = g.n_in - pd;
            for o in 0..g.n_out {
                let gb = g.bias[o];
                for (k, &e) in cache.pos_enc.iter().enumerate() {
                    g.weight[o * g.n_in + off + k] = gb * e;
                }
            }
        }

        total.center_raw = vec![F::zero(); 2 * n];
        if !stop_gradient {
            let bands = self.encoding.bands_center;
            let mut g_mu = [F::zero(); 2];
            for i in 0..n {
                encode_backward(&cache.centers[2 * i..2 * i + 2], bands, &g_mu_enc[i * cd..(i + 1) * cd], &mut g_mu);
                let t0 = cache.center_raw[2 * i].tanh();
                let t1 = cache.center_raw[2 * i + 1].tanh();
                total.center_raw[2 * i] = g_mu[0] * F::FRAC_PI_4() * (F::one() - t0 * t0);
                total.center_raw[2 * i + 1] = g_mu[1] * F::PI() * (F::one() - t1 * t1);
            }
        }
        Ok(total)
    }

    /// Weight gradients of one row block (position-encoding columns left at
    /// zero) and, if asked, `dL/dγ(μ)` for those rows.
    fn backward_rows(&self, cache: &ForwardCache<F>, r0: usize, rows: usize, dy: &[F], want_input: bool) -> (Vec<Layer<F>>, Vec<F>) {
        let cd = self.encoding.center_dim();
        let w = HIDDEN_WIDTH;
        let mut g: Vec<Layer<F>> = self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        let h = |l: usize| &cache.hidden[l][r0 * w..(r0 + rows) * w];
        let mu = &cache.mu_enc[r0 * cd..(r0 + rows) * cd];
        let mut g_mu = vec![F::zero(); if want_input { rows * cd } else { 0 }];
        let mut tmp_mu = vec![F::zero(); if want_input { rows * cd } else { 0 }];

        let head = &self.layers[HIDDEN_LAYERS];
        dense::dyt_x(rows, w, OUTPUTS, dy, h(HIDDEN_LAYERS - 1), w, &mut g[HIDDEN_LAYERS].weight, w);
        add_row_sums(dy, OUTPUTS, &mut g[HIDDEN_LAYERS].bias);
        let mut dh = vec![F::zero(); rows * w];
        dense::dy_w(rows, w, OUTPUTS, dy, &head.weight, w, &mut dh, w);

        let mut dz = dh;
        let mut dprev = vec![F::zero(); rows * w];
        for l in (0..HIDDEN_LAYERS).rev() {
            let layer = &self.layers[l];
            for (d, &a) in dz.iter_mut().zip(h(l)) {
                if a <= F::zero() {
                    *d = F::zero();
                }
            }
            add_row_sums(&dz, w, &mut g[l].bias);
            let mut col = 0;
            if l > 0 {
                dense::dyt_x(rows, w, w, &dz, h(l - 1), w, &mut g[l].weight, layer.n_in);
                dense::dy_w(rows, w, w, &dz, &layer.weight, layer.n_in, &mut dprev, w);
                col = w;
            }
            if reads_input(l) {
                dense::dyt_x(rows, cd, w, &dz, mu, cd, &mut g[l].weight[col..], layer.n_in);
                if want_input {
                    dense::dy_w(rows, cd, w, &dz, &layer.weight[col..], layer.n_in, &mut tmp_mu, cd);
                    g_mu.iter_mut().zip(&tmp_mu).for_each(|(a, b)| *a += *b);
                }
            }
            if l > 0 {
                std::mem::swap(&mut dz, &mut dprev);
            }
        }
        (g, g_mu)
    }
}

fn add_row_sums<F: Real>(m: &[F], cols: usize, acc: &mut [F]) {
    for row in m.chunks_exact(cols) {
        acc.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
    }
}

impl DeformNet<f32> {
    /// Checkpoint section: `WRFD`, version, layer count, encoding bands, then
    /// `(n_in, n_out)` per layer, then each layer's row-major weights
    /// followed by its biases, all little-endian.
    pub fn write_section(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(SECTION_MAGIC);
        for v in [
            SECTION_VERSION,
            self.layers.len() as u32,
            self.encoding.bands_center as u32,
            self.encoding.bands_position as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.layers {
            out.extend_from_slice(&(l.n_in as u32).to_le_bytes());
            out.extend_from_slice(&(l.n_out as u32).to_le_bytes());
        }
        for l in &self.layers {
            for v in l.weight.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    /// Parses a section written by [`write_section`](Self::write_section);
    /// returns the network and the number of bytes consumed.
    pub fn read_section(bytes: &[u8]) -> Result<(Self, usize)> {
        let word = |i: usize| -> Result<u32> {
            bytes
                .get(i..i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| WrfError::Format("truncated network section".into()))
        };
        if bytes.len() < 4 || &bytes[..4] != SECTION_MAGIC {
            return Err(WrfError::Format("missing network section header".into()));
        }
        if word(4)? != SECTION_VERSION {
            return Err(WrfError::Format(format!("unsupported network section version {}", word(4)?)));
        }
        let n_layers = word(8)? as usize;
        let encoding = EncodingSpec { bands_center: word(12)? as usize, bands_position: word(16)? as usize };
        encoding.validate()?;
        let dims = layer_dims(&encoding);
        if n_layers != dims.len() {
            return Err(WrfError::Format(format!("expected {} layers, found {n_layers}", dims.len())));
        }
        let mut pos = 20;
        for &(i, o) in &dims {
            if word(pos)? as usize != i || word(pos + 4)? as usize != o {
                return Err(WrfError::Format("layer dimensions do not match the encoding".into()));
            }
            pos += 8;
        }
        let mut layers = Vec::with_capacity(dims.len());
        for &(i, o) in &dims {
            let take = |pos: &mut usize, count: usize| -> Result<Vec<f32>> {
                let end = *pos + 4 * count;
                let raw = bytes.get(*pos..end).ok_or_else(|| WrfError::Format("truncated network section".into()))?;
                *pos = end;
                Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            };
            let weight = take(&mut pos, i * o)?;
            let bias = take(&mut pos, o)?;
            layers.push(Layer { n_in: i, n_out: o, weight, bias });
        }
        Ok((Self { encoding, layers }, pos))
    }
}

/// Position-noise annealing: `γ · N(0, I₃) · (2/∛N_s) · (1 − i/τ)` for
/// iterations below `τ`, nothing afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub scale: f64,
    pub threshold: u64,
    pub n_samples: usize,
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.threshold == 0 {
            return Err(WrfError::InvalidArgument("anneal threshold must be positive".into()));
        }
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(WrfError::InvalidArgument(format!("anneal scale must be non-negative, got {}", self.scale)));
        }
        if self.n_samples == 0 {
            return Err(WrfError::InvalidArgument("anneal sample count must be positive".into()));
        }
        Ok(())
    }

    /// Standard deviation of the per-axis noise at `iteration`.
    pub fn magnitude(&self, iteration: u64) -> f64 {
        if iteration >= self.threshold {
            return 0.0;
        }
        let spacing = 2.0 / (self.n_samples as f64).cbrt();
        self.scale * spacing * (1.0 - iteration as f64 / self.threshold as f64)
    }
}

/// `position + n_i`; exactly `position` once the schedule has ended or when
/// the scale is zero.
pub fn smoothed_position<R: Rng + ?Sized>(position: [f64; 3], iteration: u64, schedule: &NoiseSchedule, rng: &mut R) -> [f64; 3] {
    let m = schedule.magnitude(iteration);
    if m == 0.0 {
        return position;
    }
    let mut out = position;
    for v in &mut out {
        let z: f64 = StandardNormal.sample(rng);
        *v += m * z;
    }
    out
}
