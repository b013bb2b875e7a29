//! Two-stage training: a coarse fit of the canonical primitives followed by
//! a fine stage that trains the deformation network against per-position
//! spectra.

mod adam;
mod checkpoint;
mod eval;
mod loss;

use std::fmt;
use std::ops::Range;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{optimizer_step, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use eval::{evaluate, median, write_metrics_csv, Aggregate, Evaluation};
pub use loss::{hybrid_loss, LossTerms};

use crate::deform::{smoothed_position, DeformGrads, DeformNet, EncodingSpec, NoiseSchedule};
use crate::spectrum::Spectrum;
use crate::splat::{init_random, rasterize, rasterize_backward, GaussianSet, RasterConfig, Residuals};
use crate::wavesim::{Dataset, PositionBounds};
use crate::{Result, WrfError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    /// `γ`; zero disables position smoothing.
    pub scale: f64,
    /// `τ`, in fine-stage iterations.
    pub threshold: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self { scale: 1.0, threshold: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_gaussian: f64,
    /// Multiplier on `lr_gaussian` for the Cholesky factors, which live in
    /// grid-cell units.
    pub cholesky_lr_scale: f64,
    pub lr_mlp: f64,
    pub lambda1: f64,
    pub coarse_iters: u64,
    pub fine_iters: u64,
    pub anneal: AnnealConfig,
    pub n_primitives: usize,
    pub encoding: EncodingSpec,
    /// Keep the canonical centers fixed during the fine stage and block the
    /// gradient through the center encoding.
    pub stop_gradient: bool,
    /// Mahalanobis cutoff of the rasterizer; `null` renders every kernel
    /// everywhere.
    pub cutoff: Option<f64>,
    pub tile_size: usize,
    pub seed: u64,
    /// Emit a log row every this many iterations.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_gaussian: 1e-2,
            cholesky_lr_scale: 10.0,
            lr_mlp: 8e-3,
            lambda1: 0.7,
            coarse_iters: 10_000,
            fine_iters: 100_000,
            anneal: AnnealConfig::default(),
            n_primitives: 10_000,
            encoding: EncodingSpec::default(),
            stop_gradient: true,
            cutoff: Some(3.0),
            tile_size: 16,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    /// The reduced budget used for desk-scale runs, with a lower network
    /// learning rate.
    pub fn desk() -> Self {
        Self { n_primitives: 1_000, fine_iters: 30_000, lr_mlp: 1e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WrfError::InvalidArgument(m));
        if !(0.0..=1.0).contains(&self.lambda1) {
            return bad(format!("lambda1 must lie in [0, 1], got {}", self.lambda1));
        }
        if !(self.lr_gaussian > 0.0) || !(self.lr_mlp > 0.0) || !(self.cholesky_lr_scale > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.n_primitives == 0 {
            return bad("n_primitives must be at least 1".into());
        }
        if self.tile_size == 0 {
            return bad("tile_size must be at least 1".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        if let Some(c) = self.cutoff {
            if !(c > 0.0) {
                return bad(format!("cutoff must be positive, got {c}"));
            }
        }
        if !(self.anneal.scale >= 0.0) || self.anneal.threshold == 0 {
            return bad("anneal needs a non-negative scale and a positive threshold".into());
        }
        self.encoding.validate()
    }

    pub fn raster(&self) -> RasterConfig {
        RasterConfig { cutoff: self.cutoff, tile_size: self.tile_size }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub stage: Stage,
    pub loss: f64,
    pub l1_term: f64,
    pub ssim_term: f64,
    pub wall_ms: f64,
}

/// Writes the training log as CSV with a header row.
pub fn write_log_csv<W: std::io::Write>(out: W, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "stage", "loss", "l1_term", "ssim_term", "wall_ms"]).map_err(csv_err)?;
    for r in rows {
        w.write_record(&[
            r.iteration.to_string(),
            r.stage.to_string(),
            r.loss.to_string(),
            r.l1_term.to_string(),
            r.ssim_term.to_string(),
            format!("{:.3}", r.wall_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> WrfError {
    WrfError::Io(std::io::Error::other(e))
}

/// Canonical primitives, deformation network and the position normalization
/// they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub set: GaussianSet<f32>,
    pub net: DeformNet<f32>,
    pub bounds: PositionBounds,
}

impl Model {
    pub fn residuals(&self, position: [f64; 3]) -> Result<Residuals<f32>> {
        let p = self.bounds.normalize(position);
        self.net.predict_residuals(&self.set, [p[0] as f32, p[1] as f32, p[2] as f32])
    }

    /// Renders the deformed primitives at a world-space position.
    pub fn render(&self, position: [f64; 3], raster: &RasterConfig) -> Result<Spectrum<f32>> {
        let r = self.residuals(position)?;
        rasterize(&self.set, Some(&r), raster)
    }
}

/// Scores one rendered spectrum against training target `sample` and returns
/// the gradient with respect to the rendering.
pub trait Objective: Sync {
    fn evaluate(&self, sample: usize, pred: &Spectrum<f32>) -> Result<(LossTerms, Vec<f32>)>;
}

/// The hybrid spectrum loss against a list of targets.
pub struct SpectrumObjective<'a> {
    pub targets: Vec<&'a Spectrum<f32>>,
    pub lambda1: f64,
}

impl Objective for SpectrumObjective<'_> {
    fn evaluate(&self, sample: usize, pred: &Spectrum<f32>) -> Result<(LossTerms, Vec<f32>)> {
        hybrid_loss(pred, self.targets[sample], self.lambda1)
    }
}

/// Unit-cube training positions paired with an objective indexed the same
/// way.
pub struct Problem<'a> {
    pub positions: Vec<[f64; 3]>,
    pub objective: &'a dyn Objective,
}

impl<'a> Problem<'a> {
    fn check(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(WrfError::EmptyDataset);
        }
        Ok(())
    }
}

/// Normalized training positions and hybrid-loss targets of a dataset.
pub fn spectrum_problem_parts(dataset: &Dataset, lambda1: f64) -> (Vec<[f64; 3]>, SpectrumObjective<'_>) {
    let bounds = dataset.manifest.bounds;
    let train: Vec<_> = dataset.train_samples().collect();
    let positions = train.iter().map(|s| bounds.normalize(s.position.map(f64::from))).collect();
    let targets = train.iter().map(|s| &s.spectrum).collect();
    (positions, SpectrumObjective { targets, lambda1 })
}

/// Independent random stream for one iteration of one stage, so a resumed
/// run draws exactly what an uninterrupted one would.
fn iteration_rng(seed: u64, stage: Stage, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = match stage {
        Stage::Coarse => 1u64,
        Stage::Fine => 2u64,
    };
    rng.set_stream((tag << 48) ^ iteration);
    rng
}

struct SetOptimizer {
    center_raw: AdamState<f32>,
    cholesky: AdamState<f32>,
    atten_logit: AdamState<f32>,
    response: AdamState<f32>,
}

impl SetOptimizer {
    fn new(n: usize) -> Self {
        Self {
            center_raw: AdamState::new(2 * n),
            cholesky: AdamState::new(3 * n),
            atten_logit: AdamState::new(n),
            response: AdamState::new(2 * n),
        }
    }
}

struct NetOptimizer {
    states: Vec<(AdamState<f32>, AdamState<f32>)>,
}

impl NetOptimizer {
    fn new(net: &DeformNet<f32>) -> Self {
        Self { states: net.layers.iter().map(|l| (AdamState::new(l.weight.len()), AdamState::new(l.bias.len()))).collect() }
    }

    fn step(&mut self, net: &mut DeformNet<f32>, grads: &DeformGrads<f32>, rate: f64) -> Result<()> {
        for ((layer, g), (sw, sb)) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.states) {
            optimizer_step(&mut layer.weight, &g.weight, sw, rate)?;
            optimizer_step(&mut layer.bias, &g.bias, sb, rate)?;
        }
        Ok(())
    }
}

fn should_log(cfg: &TrainConfig, local: u64, range: &Range<u64>) -> bool {
    (local + 1) % cfg.log_every == 0 || local + 1 == range.end
}

/// Coarse iterations `range` (stage-local indices): the canonical set is fit
/// with zero residuals, one uniformly drawn sample per iteration.
pub fn run_coarse(
    problem: &Problem<'_>,
    set: &mut GaussianSet<f32>,
    cfg: &TrainConfig,
    range: Range<u64>,
    on_log: &mut dyn FnMut(&LogRow),
) -> Result<()> {
    cfg.validate()?;
    problem.check()?;
    set.validate()?;
    let raster = cfg.raster();
    let mut opt = SetOptimizer::new(set.len());
    let start = Instant::now();
    for it in range.clone() {
        let idx = iteration_rng(cfg.seed, Stage::Coarse, it).random_range(0..problem.positions.len());
        let pred = rasterize(set, None, &raster)?;
        let (terms, upstream) = problem.objective.evaluate(idx, &pred)?;
        let g = rasterize_backward(set, None, &upstream, &raster)?;
        optimizer_step(&mut set.center_raw, &g.center_raw, &mut opt.center_raw, cfg.lr_gaussian)?;
        optimizer_step(&mut set.cholesky, &g.cholesky, &mut opt.cholesky, cfg.lr_gaussian * cfg.cholesky_lr_scale)?;
        optimizer_step(&mut set.atten_logit, &g.atten_logit, &mut opt.atten_logit, cfg.lr_gaussian)?;
        optimizer_step(&mut set.response, &g.response, &mut opt.response, cfg.lr_gaussian)?;
        set.project_cholesky();
        if should_log(cfg, it, &range) {
            on_log(&LogRow {
                iteration: it,
                stage: Stage::Coarse,
                loss: terms.loss,
                l1_term: terms.l1,
                ssim_term: terms.ssim,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(())
}

/// Fine iterations `range` (stage-local indices): positions are perturbed by
/// the anneal schedule, the network predicts residuals and both the network
/// and the non-center primitive fields are updated.
pub fn run_fine(
    problem: &Problem<'_>,
    set: &mut GaussianSet<f32>,
    net: &mut DeformNet<f32>,
    cfg: &TrainConfig,
    range: Range<u64>,
    on_log: &mut dyn FnMut(&LogRow),
) -> Result<()> {
    cfg.validate()?;
    problem.check()?;
    set.validate()?;
    if net.encoding != cfg.encoding {
        return Err(WrfError::InvalidArgument("network encoding differs from the configuration".into()));
    }
    let raster = cfg.raster();
    let schedule = NoiseSchedule {
        scale: cfg.anneal.scale,
        threshold: cfg.anneal.threshold,
        n_samples: problem.positions.len(),
    };
    let mut opt = SetOptimizer::new(set.len());
    let mut net_opt = NetOptimizer::new(net);
    let start = Instant::now();
    for it in range.clone() {
        let mut rng = iteration_rng(cfg.seed, Stage::Fine, it);
        let idx = rng.random_range(0..problem.positions.len());
        let p = smoothed_position(problem.positions[idx], it, &schedule, &mut rng);
        let (res, cache) = net.forward(set, [p[0] as f32, p[1] as f32, p[2] as f32])?;
        let pred = rasterize(set, Some(&res), &raster)?;
        let (terms, upstream) = problem.objective.evaluate(idx, &pred)?;
        let g = rasterize_backward(set, Some(&res), &upstream, &raster)?;
        let ng = net.backward(&cache, &g, cfg.stop_gradient)?;
        net_opt.step(net, &ng, cfg.lr_mlp)?;
        if !cfg.stop_gradient {
            let gc: Vec<f32> = g.center_raw.iter().zip(&ng.center_raw).map(|(a, b)| a + b).collect();
            optimizer_step(&mut set.center_raw, &gc, &mut opt.center_raw, cfg.lr_gaussian)?;
        }
        optimizer_step(&mut set.cholesky, &g.cholesky, &mut opt.cholesky, cfg.lr_gaussian * cfg.cholesky_lr_scale)?;
        optimizer_step(&mut set.atten_logit, &g.atten_logit, &mut opt.atten_logit, cfg.lr_gaussian)?;
        optimizer_step(&mut set.response, &g.response, &mut opt.response, cfg.lr_gaussian)?;
        set.project_cholesky();
        if should_log(cfg, it, &range) {
            on_log(&LogRow {
                iteration: cfg.coarse_iters + it,
                stage: Stage::Fine,
                loss: terms.loss,
                l1_term: terms.l1,
                ssim_term: terms.ssim,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(())
}

/// Coarse stage over a dataset's training split.
pub fn coarse_stage(dataset: &Dataset, set: GaussianSet<f32>, cfg: &TrainConfig) -> Result<GaussianSet<f32>> {
    let (positions, objective) = spectrum_problem_parts(dataset, cfg.lambda1);
    let problem = Problem { positions, objective: &objective };
    let mut set = set;
    run_coarse(&problem, &mut set, cfg, 0..cfg.coarse_iters, &mut |_| {})?;
    Ok(set)
}

/// Fine stage over a dataset's training split.
pub fn fine_stage(
    dataset: &Dataset,
    set: GaussianSet<f32>,
    net: DeformNet<f32>,
    cfg: &TrainConfig,
) -> Result<(GaussianSet<f32>, DeformNet<f32>)> {
    let (positions, objective) = spectrum_problem_parts(dataset, cfg.lambda1);
    let problem = Problem { positions, objective: &objective };
    let (mut set, mut net) = (set, net);
    run_fine(&problem, &mut set, &mut net, cfg, 0..cfg.fine_iters, &mut |_| {})?;
    Ok((set, net))
}

/// Fresh model for `cfg` on the dataset's grid: random primitives and a
/// network whose head is zero.
pub fn init_model(dataset: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    let set = init_random(cfg.n_primitives, dataset.grid(), cfg.seed)?;
    let net = DeformNet::new(cfg.encoding, cfg.seed.wrapping_add(1))?;
    Ok(Model { set, net, bounds: dataset.manifest.bounds })
}

/// Runs whatever part of the coarse + fine schedule `model` has not yet
/// completed, starting at global iteration `done`. Optimizer moments start
/// from zero.
pub fn continue_training(
    problem: &Problem<'_>,
    model: &mut Model,
    cfg: &TrainConfig,
    done: u64,
    on_log: &mut dyn FnMut(&LogRow),
) -> Result<u64> {
    let total = cfg.coarse_iters + cfg.fine_iters;
    if done < cfg.coarse_iters {
        run_coarse(problem, &mut model.set, cfg, done..cfg.coarse_iters, on_log)?;
    }
    let fine_start = done.saturating_sub(cfg.coarse_iters);
    if fine_start < cfg.fine_iters {
        run_fine(problem, &mut model.set, &mut model.net, cfg, fine_start..cfg.fine_iters, on_log)?;
    }
    Ok(total.max(done))
}

/// Full spectrum training on a dataset, optionally resuming a checkpoint
/// made on the same dataset.
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    on_log: &mut dyn FnMut(&LogRow),
) -> Result<Checkpoint> {
    cfg.validate()?;
    let hash = dataset.manifest.hash();
    let (mut model, done, rssi) = match resume {
        Some(ck) => {
            if ck.meta.manifest_hash != hash {
                return Err(WrfError::HashMismatch { expected: ck.meta.manifest_hash, found: hash });
            }
            if ck.model.set.grid != dataset.grid() {
                return Err(WrfError::ShapeMismatch("checkpoint grid differs from the dataset grid".into()));
            }
            (ck.model, ck.meta.iteration, ck.meta.rssi)
        }
        None => (init_model(dataset, cfg)?, 0, None),
    };
    let (positions, objective) = spectrum_problem_parts(dataset, cfg.lambda1);
    let problem = Problem { positions, objective: &objective };
    let iteration = continue_training(&problem, &mut model, cfg, done, on_log)?;
    Ok(Checkpoint {
        meta: CheckpointMeta::new(*cfg, iteration, hash, model.bounds, model.set.grid, rssi),
        model,
    })
}
