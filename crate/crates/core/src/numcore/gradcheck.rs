//! Central finite differences, used as an independent gradient oracle.

use super::tensor::Tensor;
use super::NumError;

/// Estimates `df/dx_i` as `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
///
/// The divisor is the distance between the two probe points as actually
/// represented in `f32`, so no error is introduced by rounding `x_i ± h`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f32) -> Result<Tensor, NumError>
where
    F: FnMut(&Tensor) -> Result<f64, NumError>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(NumError::InvalidArgument(format!(
            "finite-difference step {h}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        let (up, down) = (orig + h, orig - h);
        probe.data_mut()[i] = up;
        let plus = f(&probe)?;
        probe.data_mut()[i] = down;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumError::NonFinite("finite_diff_grad"));
        }
        grad.push(((plus - minus) / (up as f64 - down as f64)) as f32);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Elementwise relative error `|a - b| / max(|a|, |b|, floor)`, maximised over entries.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f32) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f32::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_vec(vec![0.25, -3.0, 8.0, 1.0, 1.0e-4]);
        let g =
            finite_diff_grad(|t| Ok(t.data().iter().map(|&v| v as f64).sum()), &x, 1e-3).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() <= 1e-6, "{v}");
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::from_vec(vec![3.0]);
        let g = finite_diff_grad(|t| Ok((t.data()[0] as f64).powi(2)), &x, 1e-3).unwrap();
        assert!((g.data()[0] - 6.0).abs() <= 1e-5, "{}", g.data()[0]);
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::from_vec(vec![1.0]);
        assert!(finite_diff_grad(|t| Ok(t.sum() as f64), &x, 0.0).is_err());
        assert!(finite_diff_grad(|t| Ok(t.sum() as f64), &x, -1.0).is_err());
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::from_vec(vec![1.0]);
        assert!(matches!(
            finite_diff_grad(|_| Ok(f64::NAN), &x, 1e-3),
            Err(NumError::NonFinite(_))
        ));
    }
}
