use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{csv_err, Model};
use crate::spectrum::MetricReport;
use crate::splat::RasterConfig;
use crate::wavesim::Sample;
use crate::{Result, WrfError};

/// Median PSNR and SSIM with mean L1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub median_psnr: f64,
    pub median_ssim: f64,
    pub mean_l1: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn from_reports(reports: &[MetricReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(WrfError::EmptyDataset);
        }
        let psnr: Vec<f64> = reports.iter().map(|r| r.psnr).collect();
        let ssim: Vec<f64> = reports.iter().map(|r| r.ssim).collect();
        Ok(Self {
            median_psnr: median(&psnr),
            median_ssim: median(&ssim),
            mean_l1: reports.iter().map(|r| r.l1).sum::<f64>() / reports.len() as f64,
            count: reports.len(),
        })
    }
}

/// Median with the midpoint rule for even counts; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `(sample id, metrics)` in input order.
    pub rows: Vec<(usize, MetricReport)>,
    pub aggregate: Aggregate,
}

/// Renders every sample at its exact position (no smoothing noise) and
/// scores it against the stored spectrum.
pub fn evaluate(model: &Model, samples: &[(usize, &Sample)], raster: &RasterConfig) -> Result<Evaluation> {
    let rows: Vec<(usize, MetricReport)> = samples
        .par_iter()
        .map(|&(id, s)| {
            let pred = model.render(s.position.map(f64::from), raster)?;
            Ok((id, MetricReport::compute(&pred, &s.spectrum)?))
        })
        .collect::<Result<_>>()?;
    let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| *r).collect();
    let aggregate = Aggregate::from_reports(&reports)?;
    Ok(Evaluation { rows, aggregate })
}

/// CSV with header `sample_id,psnr_db,ssim,l1`.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[(usize, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "psnr_db", "ssim", "l1"]).map_err(csv_err)?;
    for (id, r) in rows {
        w.write_record(&[id.to_string(), r.psnr.to_string(), r.ssim.to_string(), r.l1.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
