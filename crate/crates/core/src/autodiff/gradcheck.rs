//! Central finite differences, used as an independent gradient oracle.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate `i`.
pub fn finite_difference_grad<T, F>(mut f: F, x: &Tensor<T>, eps: T) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    let partials = finite_difference_at(&mut f, x, eps, &coords)?;
    Tensor::new(x.shape().to_vec(), partials)
}

/// Central differences for a subset of coordinates only.
pub fn finite_difference_at<T, F>(mut f: F, x: &Tensor<T>, eps: T, coords: &[usize]) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if !(eps > T::zero()) {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let mut probe = x.clone();
    let two_eps = eps + eps;
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let up = f(&probe)?;
            probe.data_mut()[i] = orig - eps;
            let down = f(&probe)?;
            probe.data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("objective at coordinate {i}")));
            }
            Ok((up - down) / two_eps)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error<T: Scalar>(a: T, b: T) -> T {
    (a - b).abs() / a.abs().max(b.abs()).max(T::lit(1e-8))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let g = finite_difference_grad(|t: &Tensor<f64>| Ok(t.data().iter().map(|v| v * v).sum()), &x, 1e-4)
            .unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-7);
        assert!((g.data()[1] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let x = Tensor::from_f64(&[3], &[0.3, -1.0, 7.0]).unwrap();
        let g = finite_difference_grad(|_: &Tensor<f64>| Ok(4.0), &x, 1e-4).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_step_and_non_finite_objective() {
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        assert!(finite_difference_grad(|_: &Tensor<f64>| Ok(0.0), &x, 0.0).is_err());
        let err = finite_difference_grad(|_: &Tensor<f64>| Ok(f64::NAN), &x, 1e-4).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
