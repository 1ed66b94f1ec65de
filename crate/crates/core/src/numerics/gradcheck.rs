use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Result<Tensor> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure { coord: i });
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative error `|a − b| / max(|a|, |b|, floor)` used throughout the gradient suites.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, DEFAULT_STEP).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-7);
        assert!((g.data()[1] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn constant_function() {
        let x = Tensor::vector(vec![0.3, -1.0, 4.0]);
        let g = finite_diff_grad(|_| 3.25, &x, DEFAULT_STEP).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn quadratic_is_exact() {
        // f(x) = 0.5 xᵀ A x + bᵀ x with small integer-ish coefficients
        let a = [[2.0, 0.5, 0.0], [0.5, 1.0, -1.0], [0.0, -1.0, 3.0]];
        let b = [1.0, -2.0, 0.5];
        let f = |t: &Tensor| {
            let x = t.data();
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * x[i] * a[i][j] * x[j];
                }
                s += b[i] * x[i];
            }
            s
        };
        let x = Tensor::vector(vec![0.25, -0.5, 1.0]);
        let g = finite_diff_grad(f, &x, DEFAULT_STEP).unwrap();
        for i in 0..3 {
            let exact: f64 = (0..3).map(|j| a[i][j] * x.data()[j]).sum::<f64>() + b[i];
            assert!((g.data()[i] - exact).abs() < 1e-9, "coord {i}");
        }
    }

    #[test]
    fn non_finite_is_reported() {
        let x = Tensor::vector(vec![0.0, 1.0]);
        let err = finite_diff_grad(|t| if t.data()[1] > 1.0 { f64::NAN } else { 0.0 }, &x, 1e-3).unwrap_err();
        assert!(matches!(err, Error::OracleFailure { coord: 1 }));
    }
}
