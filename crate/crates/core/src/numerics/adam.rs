use crate::error::{Error, Result};
use crate::numerics::Real;

/// Per-parameter-block Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self::with_hyperparameters(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One bias-corrected Adam update of `params` in place. `block` names the
/// parameter block in error messages; nothing is modified on error.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: f64,
    block: &str,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::DimensionMismatch {
            context: "adam parameter block",
            expected: params.len(),
            actual: grads.len().min(state.first_moment.len()),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of parameter block `{block}` (element {i})"
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        let g = g.widen();
        let m_new = b1 * m.widen() + (1.0 - b1) * g;
        let v_new = b2 * v.widen() + (1.0 - b2) * g * g;
        *m = T::cast(m_new);
        *v = T::cast(v_new);
        let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + state.epsilon);
        *p = T::cast(p.widen() - update);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = [0.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1, "w").unwrap();
        assert!((p[0] + 0.1).abs() < 1e-6, "{}", p[0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = [0.25f32, -3.0, 7.5];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 0.01, "w").unwrap();
        assert_eq!(p, [0.25, -3.0, 7.5]);
    }

    #[test]
    fn two_steps_with_constant_gradient() {
        // m̂ = v̂ = g² / |g| ratio stays 1 for a constant gradient, so each
        // step moves by lr·g/(|g| + ε) ≈ lr in the direction of −sign(g).
        let mut p = [1.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[-2.0], &mut s, 0.05, "w").unwrap();
        let after_one = p[0];
        adam_step(&mut p, &[-2.0], &mut s, 0.05, "w").unwrap();
        assert!(after_one > 1.0 && p[0] > after_one);
        assert!((after_one - 1.05).abs() < 1e-6);
        assert!((p[0] - 1.10).abs() < 1e-6);
        assert_eq!(s.step_count, 2);
    }

    #[test]
    fn non_finite_gradient_names_the_block() {
        let mut p = [1.0f32, 2.0];
        let mut s = AdamState::new(2);
        let err = adam_step(&mut p, &[0.0, f32::NAN], &mut s, 0.1, "block3.coupling.w2")
            .unwrap_err()
            .to_string();
        assert!(err.contains("block3.coupling.w2"), "{err}");
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(s.step_count, 0);
    }
}
