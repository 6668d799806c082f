use super::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_difference_grad<F>(f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> f64,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    Tensor::checked(x.shape().to_vec(), grad, "finite-difference gradient")
}

/// Largest elementwise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_and_half_norm() {
        let x = Tensor::matrix(2, 2, vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let g = finite_difference_grad(|t| t.sum(), &x, 1e-5).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
        let g = finite_difference_grad(
            |t| 0.5 * t.data().iter().map(|v| v * v).sum::<f64>(),
            &x,
            1e-4,
        )
        .unwrap();
        for (gv, xv) in g.data().iter().zip(x.data()) {
            assert!((gv - xv).abs() < 1e-8);
        }
        assert!(finite_difference_grad(|t| t.sum(), &x, 0.0).is_err());
    }
}
