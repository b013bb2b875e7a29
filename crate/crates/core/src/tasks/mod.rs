//! Downstream heads: RSSI from the pooled magnitude of a coarse rendered
//! spectrum, and angle of arrival from the spectrum peak.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::spectrum::{AngularGrid, Spectrum};
use crate::splat::RasterConfig;
use crate::training::{
    continue_training, csv_err, init_model, median, Checkpoint, CheckpointMeta, LogRow, LossTerms, Model, Objective,
    Problem, TrainConfig,
};
use crate::wavesim::{Dataset, Sample};
use crate::{Real, Result, WrfError};

pub const RSSI_GRID: AngularGrid = AngularGrid { n_azimuth: 16, n_elevation: 16 };
pub const RSSI_PRIMITIVES: usize = 50;

/// `rssi_dbm = gain_db · pooled + offset_db`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RssiCalibration {
    pub gain_db: f64,
    pub offset_db: f64,
}

impl RssiCalibration {
    pub fn apply(&self, pooled: f64) -> f64 {
        self.gain_db * pooled + self.offset_db
    }
}

/// Mean magnitude over every cell.
pub fn pooled_magnitude<F: Real>(spec: &Spectrum<F>) -> f64 {
    let m = spec.magnitude();
    m.iter().map(|v| v.f64()).sum::<f64>() / m.len() as f64
}

/// Ordinary least-squares line through `(pooled, rssi)` pairs.
pub fn fit_calibration(pooled: &[f64], rssi_dbm: &[f64]) -> Result<RssiCalibration> {
    if pooled.len() != rssi_dbm.len() {
        return Err(WrfError::ShapeMismatch(format!("{} pooled values for {} labels", pooled.len(), rssi_dbm.len())));
    }
    if pooled.len() < 2 {
        return Err(WrfError::InvalidArgument("calibration needs at least two pairs".into()));
    }
    let n = pooled.len() as f64;
    let mx = pooled.iter().sum::<f64>() / n;
    let my = rssi_dbm.iter().sum::<f64>() / n;
    let sxx: f64 = pooled.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = pooled.iter().zip(rssi_dbm).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(WrfError::InvalidArgument("pooled values are all equal; the calibration is undetermined".into()));
    }
    let gain_db = sxy / sxx;
    Ok(RssiCalibration { gain_db, offset_db: my - gain_db * mx })
}

/// L1 between the pooled magnitude and a per-sample scalar target.
pub struct PooledObjective {
    pub targets: Vec<f64>,
}

impl Objective for PooledObjective {
    fn evaluate(&self, sample: usize, pred: &Spectrum<f32>) -> Result<(LossTerms, Vec<f32>)> {
        let pooled = pooled_magnitude(pred);
        let err = pooled - self.targets[sample];
        let cells = pred.grid().cells() as f64;
        let sign = if err > 0.0 {
            1.0
        } else if err < 0.0 {
            -1.0
        } else {
            0.0
        };
        let scale = (sign / cells) as f32;
        let grad = pred
            .values()
            .chunks_exact(2)
            .flat_map(|c| {
                let m = (c[0] * c[0] + c[1] * c[1]).sqrt();
                if m > 0.0 {
                    [scale * c[0] / m, scale * c[1] / m]
                } else {
                    [0.0, 0.0]
                }
            })
            .collect();
        Ok((LossTerms { loss: err.abs(), l1: err.abs(), ssim: 0.0 }, grad))
    }
}

/// A trained model plus its calibration head.
#[derive(Debug, Clone, PartialEq)]
pub struct RssiModel {
    pub model: Model,
    pub calibration: Option<RssiCalibration>,
    pub raster: RasterConfig,
}

impl RssiModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        check_rssi_shape(ck.model.set.grid, ck.model.set.len())?;
        Ok(Self { model: ck.model.clone(), calibration: ck.meta.rssi, raster: ck.meta.config.raster() })
    }

    pub fn pooled(&self, position: [f64; 3]) -> Result<f64> {
        Ok(pooled_magnitude(&self.model.render(position, &self.raster)?))
    }

    pub fn predict(&self, position: [f64; 3]) -> Result<f64> {
        let cal = self.calibration.ok_or(WrfError::Uncalibrated)?;
        Ok(cal.apply(self.pooled(position)?))
    }
}

fn check_rssi_shape(grid: AngularGrid, n: usize) -> Result<()> {
    if grid != RSSI_GRID {
        return Err(WrfError::ShapeMismatch(format!(
            "RSSI models use a 16x16 grid, got {}x{}",
            grid.n_elevation, grid.n_azimuth
        )));
    }
    if n != RSSI_PRIMITIVES {
        return Err(WrfError::InvalidArgument(format!("RSSI models use {RSSI_PRIMITIVES} primitives, got {n}")));
    }
    Ok(())
}

/// Trains the pooled magnitude at every training position to track the
/// min–max normalized RSSI label, then fits the calibration line on the same
/// training pairs.
pub fn train_rssi(dataset: &Dataset, cfg: &TrainConfig, on_log: &mut dyn FnMut(&LogRow)) -> Result<Checkpoint> {
    cfg.validate()?;
    check_rssi_shape(dataset.grid(), cfg.n_primitives)?;
    let m = &dataset.manifest;
    if m.rssi_dbm.len() != dataset.samples.len() {
        return Err(WrfError::Format("manifest carries no RSSI label per sample".into()));
    }
    if m.train.is_empty() {
        return Err(WrfError::EmptyDataset);
    }
    let labels: Vec<f64> = m.train.iter().map(|&i| m.rssi_dbm[i]).collect();
    let lo = labels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let objective = PooledObjective { targets: labels.iter().map(|r| (r - lo) / span).collect() };
    let positions = m.train.iter().map(|&i| m.bounds.normalize(dataset.samples[i].position.map(f64::from))).collect();
    let problem = Problem { positions, objective: &objective };

    let mut model = init_model(dataset, cfg)?;
    let iteration = continue_training(&problem, &mut model, cfg, 0, on_log)?;
    let raster = cfg.raster();
    let pooled: Vec<f64> = m
        .train
        .par_iter()
        .map(|&i| Ok(pooled_magnitude(&model.render(dataset.samples[i].position.map(f64::from), &raster)?)))
        .collect::<Result<_>>()?;
    let calibration = fit_calibration(&pooled, &labels)?;
    Ok(Checkpoint {
        meta: CheckpointMeta::new(*cfg, iteration, m.hash(), model.bounds, model.set.grid, Some(calibration)),
        model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RssiRow {
    pub position: [f64; 3],
    pub pred_dbm: f64,
    pub gt_dbm: f64,
    pub abs_err_db: f64,
}

/// Predictions for the given sample indices of `dataset`.
pub fn rssi_eval(model: &RssiModel, dataset: &Dataset, indices: &[usize]) -> Result<Vec<RssiRow>> {
    indices
        .par_iter()
        .map(|&i| {
            let s = dataset.samples.get(i).ok_or_else(|| WrfError::InvalidArgument(format!("no sample {i}")))?;
            let gt = *dataset.manifest.rssi_dbm.get(i).ok_or_else(|| WrfError::Format(format!("no RSSI label for {i}")))?;
            let position = s.position.map(f64::from);
            let pred = model.predict(position)?;
            Ok(RssiRow { position, pred_dbm: pred, gt_dbm: gt, abs_err_db: (pred - gt).abs() })
        })
        .collect()
}

pub fn median_abs_error(rows: &[RssiRow]) -> f64 {
    median(&rows.iter().map(|r| r.abs_err_db).collect::<Vec<_>>())
}

/// CSV with header `position_xyz,pred_dbm,gt_dbm,abs_err_db`; the position
/// is written as `x;y;z`.
pub fn write_rssi_csv<W: Write>(out: W, rows: &[RssiRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["position_xyz", "pred_dbm", "gt_dbm", "abs_err_db"]).map_err(csv_err)?;
    for r in rows {
        let p = format!("{};{};{}", r.position[0], r.position[1], r.position[2]);
        w.write_record(&[p, r.pred_dbm.to_string(), r.gt_dbm.to_string(), r.abs_err_db.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoAEstimate {
    /// Degrees in `[0, 360)`.
    pub azimuth: f64,
    /// Degrees in `[0, 90]`.
    pub elevation: f64,
    pub peak_value: f64,
    pub row: usize,
    pub col: usize,
}

/// Cell of largest magnitude; ties go to the lowest row-major index.
pub fn aoa_extract<F: Real>(spec: &Spectrum<F>) -> AoAEstimate {
    let grid = spec.grid();
    let mag = spec.magnitude();
    let mut best = 0;
    for (i, v) in mag.iter().enumerate() {
        if *v > mag[best] {
            best = i;
        }
    }
    let (row, col) = (best / grid.n_azimuth, best % grid.n_azimuth);
    AoAEstimate {
        azimuth: grid.azimuth(col).to_degrees(),
        elevation: grid.elevation(row).to_degrees(),
        peak_value: mag[best].f64(),
        row,
        col,
    }
}

/// Euclidean distance between two cells, in cells, with azimuth wrap.
pub fn cell_distance(grid: AngularGrid, a: &AoAEstimate, b: &AoAEstimate) -> f64 {
    let dr = a.row as f64 - b.row as f64;
    let n = grid.n_azimuth as f64;
    let dc = (a.col as f64 - b.col as f64).abs();
    let dc = dc.min(n - dc);
    (dr * dr + dc * dc).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoaRow {
    pub sample_id: usize,
    pub pred: AoAEstimate,
    pub gt: AoAEstimate,
    pub err_cells: f64,
}

/// Peak of the rendered spectrum against the peak of the stored one.
pub fn aoa_eval(model: &Model, samples: &[(usize, &Sample)], raster: &RasterConfig) -> Result<Vec<AoaRow>> {
    samples
        .par_iter()
        .map(|&(id, s)| {
            let rendered = model.render(s.position.map(f64::from), raster)?;
            let pred = aoa_extract(&rendered);
            let gt = aoa_extract(&s.spectrum);
            Ok(AoaRow { sample_id: id, pred, gt, err_cells: cell_distance(s.spectrum.grid(), &pred, &gt) })
        })
        .collect()
}

/// CSV with header `sample_id,pred_az,pred_el,gt_az,gt_el,err_cells`.
pub fn write_aoa_csv<W: Write>(out: W, rows: &[AoaRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "pred_az", "pred_el", "gt_az", "gt_el", "err_cells"]).map_err(csv_err)?;
    for r in rows {
        w.write_record(&[
            r.sample_id.to_string(),
            r.pred.azimuth.to_string(),
            r.pred.elevation.to_string(),
            r.gt.azimuth.to_string(),
            r.gt.elevation.to_string(),
            r.err_cells.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_of_uniform_magnitude() {
        let g = AngularGrid::new(16, 16).unwrap();
        let mut s = Spectrum::<f64>::zeros(g);
        for r in 0..16 {
            for c in 0..16 {
                let a = (r * 16 + c) as f64 * 0.1;
                s.set(r, c, 0.75 * a.cos(), 0.75 * a.sin());
            }
        }
        assert!((pooled_magnitude(&s) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn exact_line_has_zero_residual() {
        let x = [0.1, 0.4, 0.5, 0.9];
        let y: Vec<f64> = x.iter().map(|v| -20.0 * v - 50.0).collect();
        let cal = fit_calibration(&x, &y).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((cal.apply(*a) - b).abs() < 1e-12);
        }
        assert!(fit_calibration(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert!(fit_calibration(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn zero_spectrum_ties_to_origin() {
        let s = Spectrum::<f32>::zeros(AngularGrid::new(360, 90).unwrap());
        let e = aoa_extract(&s);
        assert_eq!((e.azimuth, e.elevation, e.row, e.col), (0.0, 0.0, 0, 0));
    }

    #[test]
    fn wrapped_cell_distance() {
        let g = AngularGrid::new(360, 90).unwrap();
        let at = |row, col| AoAEstimate { azimuth: 0.0, elevation: 0.0, peak_value: 0.0, row, col };
        assert_eq!(cell_distance(g, &at(0, 359), &at(0, 1)), 2.0);
        assert_eq!(cell_distance(g, &at(3, 0), &at(0, 4)), 5.0);
    }
}
