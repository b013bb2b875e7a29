//! PSNR, SSIM and L1 on two-channel spectra.
//!
//! SSIM uses the usual 11×11 Gaussian window (σ = 1.5) over valid window
//! positions only, scored per channel and averaged. Its analytic gradient is
//! provided for the training loss.

use serde::{Deserialize, Serialize};

use super::Spectrum;
use crate::{Real, Result, WrfError};

pub const PSNR_CAP_DB: f64 = 100.0;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const SSIM_PEAK: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
}

impl MetricReport {
    pub fn compute<F: Real>(pred: &Spectrum<F>, gt: &Spectrum<F>) -> Result<Self> {
        Ok(Self { psnr: psnr(pred, gt, 1.0)?, ssim: ssim(pred, gt)?, l1: l1(pred, gt)? })
    }
}

/// `10·log10(peak² / MSE)` over both channels, capped at [`PSNR_CAP_DB`].
pub fn psnr<F: Real>(pred: &Spectrum<F>, gt: &Spectrum<F>, peak: f64) -> Result<f64> {
    pred.check_same_grid(gt)?;
    if !(peak > 0.0) {
        return Err(WrfError::InvalidArgument(format!("psnr peak must be positive, got {peak}")));
    }
    let n = pred.values().len() as f64;
    let mse = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(a, b)| {
            let d = a.f64() - b.f64();
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean absolute difference over every sample of both channels.
pub fn l1<F: Real>(pred: &Spectrum<F>, gt: &Spectrum<F>) -> Result<f64> {
    pred.check_same_grid(gt)?;
    let n = pred.values().len() as f64;
    Ok(pred.values().iter().zip(gt.values()).map(|(a, b)| (a.f64() - b.f64()).abs()).sum::<f64>() / n)
}

pub fn ssim<F: Real>(pred: &Spectrum<F>, gt: &Spectrum<F>) -> Result<f64> {
    ssim_impl(pred, gt, false).map(|(v, _)| v)
}

/// SSIM and its gradient with respect to `pred` (interleaved like the
/// spectrum values).
pub fn ssim_with_grad<F: Real>(pred: &Spectrum<F>, gt: &Spectrum<F>) -> Result<(f64, Vec<F>)> {
    ssim_impl(pred, gt, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, wi) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *wi = (-x * x / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable correlation of an `h×w` map.
fn filter_valid<F: Real>(src: &[F], h: usize, w: usize, win: &[F; WINDOW]) -> Vec<F> {
    let (ho, wo) = (h + 1 - WINDOW, w + 1 - WINDOW);
    let mut tmp = vec![F::zero(); h * wo];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        let out = &mut tmp[r * wo..(r + 1) * wo];
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc = F::zero();
            for t in 0..WINDOW {
                acc += win[t] * row[c + t];
            }
            *o = acc;
        }
    }
    let mut out = vec![F::zero(); ho * wo];
    for r in 0..ho {
        let dst = &mut out[r * wo..(r + 1) * wo];
        for t in 0..WINDOW {
            let wt = win[t];
            let srow = &tmp[(r + t) * wo..(r + t + 1) * wo];
            for (d, s) in dst.iter_mut().zip(srow) {
                *d += wt * *s;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `(h-10)×(w-10)` map back to `h×w`.
fn filter_adjoint<F: Real>(src: &[F], h: usize, w: usize, win: &[F; WINDOW]) -> Vec<F> {
    let (ho, wo) = (h + 1 - WINDOW, w + 1 - WINDOW);
    let mut tmp = vec![F::zero(); h * wo];
    for r in 0..ho {
        let srow = &src[r * wo..(r + 1) * wo];
        for t in 0..WINDOW {
            let wt = win[t];
            let dst = &mut tmp[(r + t) * wo..(r + t + 1) * wo];
            for (d, s) in dst.iter_mut().zip(srow) {
                *d += wt * *s;
            }
        }
    }
    let mut out = vec![F::zero(); h * w];
    for r in 0..h {
        let trow = &tmp[r * wo..(r + 1) * wo];
        let orow = &mut out[r * w..(r + 1) * w];
        for (c, &v) in trow.iter().enumerate() {
            for t in 0..WINDOW {
                orow[c + t] += win[t] * v;
            }
        }
    }
    out
}

fn ssim_impl<F: Real>(pred: &Spectrum<F>, gt: &Spectrum<F>, want_grad: bool) -> Result<(f64, Option<Vec<F>>)> {
    pred.check_same_grid(gt)?;
    let grid = pred.grid();
    let (h, w) = (grid.n_elevation, grid.n_azimuth);
    if h < WINDOW || w < WINDOW {
        return Err(WrfError::ShapeMismatch(format!(
            "SSIM needs at least a {WINDOW}x{WINDOW} grid, got {h}x{w}"
        )));
    }
    let win64 = gaussian_window();
    let mut win = [F::zero(); WINDOW];
    for (d, s) in win.iter_mut().zip(win64) {
        *d = F::of(s);
    }
    let c1 = F::of((K1 * SSIM_PEAK).powi(2));
    let c2 = F::of((K2 * SSIM_PEAK).powi(2));
    let two = F::of(2.0);
    let n_valid = (h + 1 - WINDOW) * (w + 1 - WINDOW);
    // d(mean ssim)/dS_p for every valid window of either channel
    let scale = F::of(1.0 / (2 * n_valid) as f64);

    let mut total = 0.0f64;
    let mut grad = want_grad.then(|| vec![F::zero(); pred.values().len()]);
    for ch in 0..2 {
        let x: Vec<F> = pred.values().iter().skip(ch).step_by(2).copied().collect();
        let y: Vec<F> = gt.values().iter().skip(ch).step_by(2).copied().collect();
        let xx: Vec<F> = x.iter().map(|&v| v * v).collect();
        let yy: Vec<F> = y.iter().map(|&v| v * v).collect();
        let xy: Vec<F> = x.iter().zip(&y).map(|(&a, &b)| a * b).collect();
        let mx = filter_valid(&x, h, w, &win);
        let my = filter_valid(&y, h, w, &win);
        let exx = filter_valid(&xx, h, w, &win);
        let eyy = filter_valid(&yy, h, w, &win);
        let exy = filter_valid(&xy, h, w, &win);

        let mut d_mx = vec![F::zero(); if want_grad { n_valid } else { 0 }];
        let mut d_exx = d_mx.clone();
        let mut d_exy = d_mx.clone();
        let mut acc = 0.0f64;
        for p in 0..n_valid {
            let (ux, uy) = (mx[p], my[p]);
            let a1 = two * ux * uy + c1;
            let a2 = two * (exy[p] - ux * uy) + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = (exx[p] - ux * ux) + (eyy[p] - uy * uy) + c2;
            let den = b1 * b2;
            let s = a1 * a2 / den;
            acc += s.f64();
            if want_grad {
                d_mx[p] = scale * ((two * uy * (a2 - a1)) / den - s * (two * ux / b1 - two * ux / b2));
                d_exx[p] = scale * (-s / b2);
                d_exy[p] = scale * (two * a1 / den);
            }
        }
        total += acc / n_valid as f64;

        if let Some(g) = grad.as_mut() {
            let g_mx = filter_adjoint(&d_mx, h, w, &win);
            let g_exx = filter_adjoint(&d_exx, h, w, &win);
            let g_exy = filter_adjoint(&d_exy, h, w, &win);
            for i in 0..h * w {
                g[2 * i + ch] = g_mx[i] + two * x[i] * g_exx[i] + y[i] * g_exy[i];
            }
        }
    }
    Ok((total / 2.0, grad))
}
