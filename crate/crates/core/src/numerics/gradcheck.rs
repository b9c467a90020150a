/// Largest relative deviation between central differences of `f` at `x` and
/// `analytic`, measured as `|fd − analytic| / (|analytic| + h)`.
pub fn finite_diff_check<F>(mut f: F, x: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / (analytic[i].abs() + h));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = finite_diff_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-4);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_sum() {
        let err = finite_diff_check(|x| x.iter().sum(), &[0.1, -2.0, 5.0], &[1.0; 3], 1e-4);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let err = finite_diff_check(|x| x[0] * x[0], &[3.0], &[5.0], 1e-4);
        assert!(err > 0.1);
    }
}
