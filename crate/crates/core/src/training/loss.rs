use crate::spectrum::{ssim_with_grad, Spectrum};
use crate::{Real, Result, WrfError};

/// Value of the hybrid objective and its two ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub loss: f64,
    /// Mean absolute error.
    pub l1: f64,
    /// `1 − SSIM`.
    pub ssim: f64,
}

/// `λ₁·L1 + (1 − λ₁)·(1 − SSIM)` and its gradient with respect to `pred`.
/// The L1 subgradient is zero where `pred == gt`.
pub fn hybrid_loss<F: Real>(pred: &Spectrum<F>, gt: &Spectrum<F>, lambda1: f64) -> Result<(LossTerms, Vec<F>)> {
    if !(0.0..=1.0).contains(&lambda1) {
        return Err(WrfError::InvalidArgument(format!("lambda1 must lie in [0, 1], got {lambda1}")));
    }
    let (s, g_ssim) = ssim_with_grad(pred, gt)?;
    let n = pred.values().len() as f64;
    let w_l1 = F::of(lambda1 / n);
    let w_ssim = F::of(1.0 - lambda1);
    let mut l1 = 0.0;
    let grad = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(&g_ssim)
        .map(|((&p, &g), &gs)| {
            let d = p - g;
            l1 += d.f64().abs();
            let sign = if d > F::zero() {
                F::one()
            } else if d < F::zero() {
                -F::one()
            } else {
                F::zero()
            };
            w_l1 * sign - w_ssim * gs
        })
        .collect();
    let l1 = l1 / n;
    let terms = LossTerms { loss: lambda1 * l1 + (1.0 - lambda1) * (1.0 - s), l1, ssim: 1.0 - s };
    Ok((terms, grad))
}
