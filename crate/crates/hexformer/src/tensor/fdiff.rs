//! Central finite differences — the independent gradient oracle.

use super::Tensor;
use crate::error::{HexError, Result};
use crate::scalar::Scalar;

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h per
/// coordinate. `f` must be pure and deterministic.
pub fn finite_diff_grad<T: Scalar>(
    f: &mut dyn FnMut(&Tensor<T>) -> Result<T>,
    x: &Tensor<T>,
    h: f64,
) -> Result<Tensor<T>> {
    if h <= 0.0 {
        return Err(HexError::Invalid(format!("finite_diff_grad: h = {h} must be > 0")));
    }
    let h = T::from_f64(h);
    let mut grad = vec![T::zero(); x.len()];
    let mut probe = x.detach();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(HexError::NonFinite {
                context: format!("finite_diff_grad: f at coordinate {i}"),
            });
        }
        grad[i] = (fp - fm) / (h + h);
    }
    Tensor::from_vec(grad, x.shape())
}

/// Max relative error between an analytic gradient and the oracle, scaled
/// by the largest gradient magnitude (floor 1).
pub fn max_rel_err<T: Scalar>(analytic: &[T], numeric: &[T]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.as_f64().abs())
        .fold(1.0f64, f64::max);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a.as_f64() - n.as_f64()).abs() / scale)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_vec(vec![1.0f64, 2.0], &[2]).unwrap();
        let g = finite_diff_grad(
            &mut |x| Ok(x.data().iter().map(|v| v * v).sum()),
            &x,
            1e-6,
        )
        .unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn zero_step_is_an_error() {
        let x = Tensor::from_vec(vec![1.0f64], &[1]).unwrap();
        assert!(finite_diff_grad(&mut |_| Ok(0.0), &x, 0.0).is_err());
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let x = Tensor::from_vec(vec![1.0f64], &[1]).unwrap();
        assert!(finite_diff_grad(&mut |_| Ok(f64::NAN), &x, 1e-6).is_err());
    }
}
