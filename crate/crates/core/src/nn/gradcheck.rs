//! Central-difference gradient checking.

/// Largest relative disagreement between the analytic gradient returned by
/// `f` and a central difference of its value with step `h`:
/// `max_i |g_i - fd_i| / (|g_i| + 1e-12)`.
pub fn finite_diff_check<F>(f: F, params: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let fd = central_differences(|x| f(x).0, params, h);
    analytic
        .iter()
        .zip(&fd)
        .map(|(a, d)| (a - d).abs() / (a.abs() + 1e-12))
        .fold(0.0, f64::max)
}

pub fn central_differences<F>(f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let q = |x: &[f64]| {
            let v = 3.0 * x[0] * x[0] + x[0] * x[1] - 2.0 * x[1] * x[1] + 0.5 * x[2];
            (v, vec![6.0 * x[0] + x[1], x[0] - 4.0 * x[1], 0.5])
        };
        let err = finite_diff_check(q, &[0.3, -1.2, 2.0], 1e-5);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn constant_has_zero_error() {
        let c = |x: &[f64]| (4.2, vec![0.0; x.len()]);
        assert_eq!(finite_diff_check(c, &[1.0, 2.0], 1e-5), 0.0);
    }

    #[test]
    fn detects_wrong_gradient() {
        let wrong = |x: &[f64]| (x[0] * x[0], vec![x[0]]);
        assert!(finite_diff_check(wrong, &[1.0], 1e-5) > 0.4);
    }
}
