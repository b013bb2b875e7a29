use crate::{Real, Result, WrfError};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moments plus the step count of one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F = f32> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self { m: vec![F::zero(); len], v: vec![F::zero(); len], step: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn optimizer_step<F: Real>(params: &mut [F], grads: &[F], state: &mut AdamState<F>, rate: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(WrfError::ShapeMismatch(format!(
            "Adam step over {} params with {} grads and {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::of(BETA1), F::of(BETA2));
    let c1 = F::of(1.0 / (1.0 - BETA1.powi(t)));
    let c2 = F::of(1.0 / (1.0 - BETA2.powi(t)));
    let lr = F::of(rate);
    let eps = F::of(EPS);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (F::one() - b1) * g;
        *v = b2 * *v + (F::one() - b2) * g * g;
        let m_hat = *m * c1;
        let v_hat = *v * c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params() {
        let mut p = vec![1.0f32, -2.0, 3.5];
        let mut s = AdamState::new(3);
        optimizer_step(&mut p, &[0.0; 3], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut x = vec![1.0f64];
        let mut s = AdamState::new(1);
        for _ in 0..200 {
            let g = [2.0 * x[0]];
            optimizer_step(&mut x, &g, &mut s, 0.1).unwrap();
        }
        assert!(x[0].abs() < 1e-2, "x = {}", x[0]);
    }

    #[test]
    fn first_step_moves_by_rate() {
        // bias correction makes the first step exactly lr·sign(g) up to eps
        let mut x = vec![0.0f64];
        let mut s = AdamState::new(1);
        optimizer_step(&mut x, &[3.0], &mut s, 0.01).unwrap();
        assert!((x[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::<f32>::new(2);
        assert!(optimizer_step(&mut [0.0f32; 2], &[0.0; 3], &mut s, 0.1).is_err());
    }
}
