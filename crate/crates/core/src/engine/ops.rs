//! Forward kernels and their vector-Jacobian products.

use std::f64::consts::{PI, SQRT_2};

use super::Tensor;
use crate::error::{Error, Result};

fn as_matrix(t: &Tensor, name: &str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "{name} must be a matrix, got {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `C = A·B` for `A: M×K`, `B: K×N`.
///
/// Reduction order is fixed: `C[i,j]` is accumulated from zero over `k = 0..K`
/// in ascending order, so results equal a naive triple loop bit for bit.
pub fn gemm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a, "gemm lhs")?;
    let (k2, n) = as_matrix(b, "gemm rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("gemm inner dims {m}x{k} · {k2}x{n}")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let b_row = &bd[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
    Tensor::checked(vec![m, n], c, "gemm output")
}

/// VJP of [`gemm`]: `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn gemm_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, _) = as_matrix(a, "gemm lhs")?;
    let (_, n) = as_matrix(b, "gemm rhs")?;
    if dc.shape() != [m, n] {
        return Err(Error::Shape(format!(
            "gemm upstream gradient {:?}, expected [{m}, {n}]",
            dc.shape()
        )));
    }
    Ok((gemm(dc, &b.transpose())?, gemm(&a.transpose(), dc)?))
}

fn broadcast_ok(a: &Tensor, b: &Tensor) -> Result<bool> {
    if a.shape() == b.shape() {
        return Ok(false);
    }
    if b.len() == a.cols() && b.cols() == a.cols() {
        return Ok(true);
    }
    Err(Error::Shape(format!(
        "cannot broadcast {:?} onto {:?}",
        b.shape(),
        a.shape()
    )))
}

/// Elementwise `a + b`. `b` may also be a single row broadcast over every row of `a`.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let row = broadcast_ok(a, b)?;
    let cols = a.cols();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, x)| x + if row { b.data()[i % cols] } else { b.data()[i] })
        .collect();
    Tensor::checked(a.shape().to_vec(), data, "add output")
}

/// VJP of [`add`]; a broadcast row receives the column sums of `dy`.
pub fn add_backward(dy: &Tensor, b_shape: &[usize]) -> Result<(Tensor, Tensor)> {
    if b_shape == dy.shape() {
        return Ok((dy.clone(), dy.clone()));
    }
    let cols = dy.cols();
    if b_shape.iter().product::<usize>() != cols {
        return Err(Error::Shape(format!(
            "add gradient {:?} vs rhs {b_shape:?}",
            dy.shape()
        )));
    }
    Ok((
        dy.clone(),
        Tensor::from_parts(b_shape.to_vec(), column_sums(dy)),
    ))
}

pub(crate) fn column_sums(t: &Tensor) -> Vec<f64> {
    let cols = t.cols();
    let mut sums = vec![0.0; cols];
    for r in 0..t.rows() {
        for (s, v) in sums.iter_mut().zip(t.row(r)) {
            *s += v;
        }
    }
    sums
}

/// Elementwise product of equally shaped tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "mul {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::checked(a.shape().to_vec(), data, "mul output")
}

pub fn mul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((mul(dy, b)?, mul(dy, a)?))
}

pub fn scale(a: &Tensor, s: f64) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x * s).collect();
    Tensor::checked(a.shape().to_vec(), data, "scale output")
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().map(|v| v.max(0.0)).collect(),
    )
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    same_shape(x, dy, "relu")?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

/// Exact GELU, `x·Φ(x)` with the Gaussian CDF written through `erf`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn gelu(x: &Tensor) -> Tensor {
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().map(|&v| gelu_scalar(v)).collect(),
    )
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    same_shape(x, dy, "gelu")?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| g * gelu_grad_scalar(v))
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op} gradient {:?} does not match input {:?}",
            b.shape(),
            a.shape()
        )));
    }
    Ok(())
}

/// Row-wise softmax over the innermost dimension, max-subtracted.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let cols = t.cols();
    let mut out = Vec::with_capacity(t.len());
    for r in 0..t.rows() {
        let row = t.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            out.push(e);
        }
        for v in &mut out[start..start + cols] {
            *v /= sum;
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

/// VJP of [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    same_shape(y, dy, "softmax")?;
    let cols = y.cols();
    let mut out = vec![0.0; y.len()];
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), dy.row(r));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for c in 0..cols {
            out[r * cols + c] = yr[c] * (gr[c] - dot);
        }
    }
    Ok(Tensor::from_parts(y.shape().to_vec(), out))
}

/// Saved statistics from [`layer_norm`] needed by its VJP.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-row layer normalization followed by the affine map `gamma·x̂ + beta`.
pub fn layer_norm(
    t: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    if eps <= 0.0 {
        return Err(Error::Config(format!(
            "layer norm eps must be positive, got {eps}"
        )));
    }
    let cols = t.cols();
    if gamma.len() != cols || beta.len() != cols {
        return Err(Error::Shape(format!(
            "layer norm affine params {:?}/{:?} for width {cols}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let n = cols as f64;
    let mut xhat = Vec::with_capacity(t.len());
    let mut inv_std = Vec::with_capacity(t.rows());
    for r in 0..t.rows() {
        let row = t.row(r);
        // Shift by the first element so constant rows centre to exactly zero.
        let shift = row[0];
        let mean = shift + row.iter().map(|v| v - shift).sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        xhat.extend(row.iter().map(|v| (v - mean) * inv));
    }
    let mut y = Vec::with_capacity(t.len());
    for (i, v) in xhat.iter().enumerate() {
        let c = i % cols;
        y.push(gamma.data()[c] * v + beta.data()[c]);
    }
    let normalized = Tensor::from_parts(t.shape().to_vec(), xhat);
    Ok((
        Tensor::checked(t.shape().to_vec(), y, "layer norm output")?,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// VJP of [`layer_norm`]: returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let xhat = &cache.normalized;
    same_shape(xhat, dy, "layer norm")?;
    let cols = xhat.cols();
    let n = cols as f64;
    let mut dx = vec![0.0; xhat.len()];
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    for r in 0..xhat.rows() {
        let (xr, gr) = (xhat.row(r), dy.row(r));
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for c in 0..cols {
            let d = gr[c] * gamma.data()[c];
            sum_d += d;
            sum_dx += d * xr[c];
            dgamma[c] += gr[c] * xr[c];
            dbeta[c] += gr[c];
        }
        let inv = cache.inv_std[r];
        for c in 0..cols {
            let d = gr[c] * gamma.data()[c];
            dx[r * cols + c] = inv / n * (n * d - sum_d - xr[c] * sum_dx);
        }
    }
    Ok((
        Tensor::checked(xhat.shape().to_vec(), dx, "layer norm gradient")?,
        Tensor::from_parts(gamma.shape().to_vec(), dgamma),
        Tensor::from_parts(gamma.shape().to_vec(), dbeta),
    ))
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn check_targets(logits: &Tensor, targets: &[usize], smoothing: f64) -> Result<()> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Config(format!(
            "label smoothing must be in [0, 1), got {smoothing}"
        )));
    }
    if targets.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} targets for {} rows of logits",
            targets.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::Contract(format!(
            "target class {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Mean label-smoothed negative log-likelihood. The smoothed target puts
/// `1 - ε + ε/V` on the true class and `ε/V` on every other class.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], smoothing: f64) -> Result<f64> {
    check_targets(logits, targets, smoothing)?;
    let v = logits.cols() as f64;
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let lp = log_softmax_row(logits.row(r));
        let uniform: f64 = lp.iter().sum::<f64>() / v;
        total += -(1.0 - smoothing) * lp[t] - smoothing * uniform;
    }
    let loss = total / targets.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            index: 0,
            context: "cross entropy loss",
        });
    }
    Ok(loss)
}

/// Gradient of [`cross_entropy`] with respect to the logits.
pub fn cross_entropy_backward(
    logits: &Tensor,
    targets: &[usize],
    smoothing: f64,
) -> Result<Tensor> {
    check_targets(logits, targets, smoothing)?;
    let cols = logits.cols();
    let rows = targets.len() as f64;
    let off = smoothing / cols as f64;
    let mut out = Vec::with_capacity(logits.len());
    for (r, &t) in targets.iter().enumerate() {
        let lp = log_softmax_row(logits.row(r));
        for (c, l) in lp.iter().enumerate() {
            let q = if c == t { 1.0 - smoothing + off } else { off };
            out.push((l.exp() - q) / rows);
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Index of the largest entry in each row (first one on ties).
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn gemm_identity_and_scalar() {
        let eye = m(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let b = m(3, 4, &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]);
        assert_eq!(gemm(&eye, &b).unwrap(), b);
        assert_eq!(
            gemm(&m(1, 1, &[2.]), &m(1, 1, &[3.])).unwrap().data(),
            &[6.]
        );
        assert!(matches!(gemm(&b, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn gemm_vjp_hand_case() {
        let a = m(2, 2, &[1., 2., 3., 4.]);
        let b = m(2, 2, &[5., 6., 7., 8.]);
        let dc = m(2, 2, &[1., 0., 0., 1.]);
        let (da, db) = gemm_backward(&a, &b, &dc).unwrap();
        // dA = dC·Bᵀ = Bᵀ, dB = Aᵀ·dC = Aᵀ
        assert_eq!(da.data(), &[5., 7., 6., 8.]);
        assert_eq!(db.data(), &[1., 3., 2., 4.]);
        let zero = Tensor::zeros(&[2, 2]);
        let (da, db) = gemm_backward(&a, &b, &zero).unwrap();
        assert_eq!(da.max_abs() + db.max_abs(), 0.0);
        assert!(gemm_backward(&a, &b, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn elementwise_basics() {
        let x = m(1, 3, &[-1., 0.5, 2.]);
        assert_eq!(add(&x, &Tensor::zeros(&[1, 3])).unwrap(), x);
        assert_eq!(relu(&x).data(), &[0., 0.5, 2.]);
        let rowb = Tensor::new(vec![3], vec![1., 1., 1.]).unwrap();
        let big = m(2, 3, &[0.; 6]);
        assert_eq!(add(&big, &rowb).unwrap().data(), &[1.; 6]);
        assert!(add(&big, &m(2, 2, &[0.; 4])).is_err());
        let (_, db) = add_backward(&m(2, 3, &[1.; 6]), &[3]).unwrap();
        assert_eq!(db.data(), &[2., 2., 2.]);
        assert_eq!(scale(&x, 2.0).unwrap().data(), &[-2., 1., 4.]);
        assert_eq!(mul(&x, &x).unwrap().data(), &[1., 0.25, 4.]);
    }

    #[test]
    fn softmax_simple_rows() {
        assert_eq!(softmax_rows(&m(1, 1, &[3.7])).data(), &[1.0]);
        let u = softmax_rows(&m(1, 4, &[2.0; 4]));
        assert_eq!(u.data(), &[0.25; 4]);
        let big = softmax_rows(&m(1, 2, &[1000.0, 1000.0]));
        assert_eq!(big.data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_constant_row_gives_beta() {
        let gamma = m(1, 3, &[1.5, -2.0, 0.3]);
        let beta = m(1, 3, &[0.1, 0.2, 0.3]);
        let (y, _) = layer_norm(
            &m(2, 3, &[0.1, 0.1, 0.1, -7.3, -7.3, -7.3]),
            &gamma,
            &beta,
            1e-5,
        )
        .unwrap();
        assert_eq!(y.data(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
        assert!(layer_norm(&m(1, 3, &[1., 2., 3.]), &gamma, &beta, 0.0).is_err());
    }

    #[test]
    fn cross_entropy_limits() {
        let mut logits = vec![0.0; 5];
        logits[2] = 40.0;
        let l = cross_entropy(&m(1, 5, &logits), &[2], 0.0).unwrap();
        assert!(l < 1e-6);
        let v = 7;
        let l = cross_entropy(&m(2, v, &[0.3; 14]), &[1, 6], 0.1).unwrap();
        assert!((l - (v as f64).ln()).abs() < 1e-12);
        assert!(matches!(
            cross_entropy(&m(1, 3, &[0.; 3]), &[3], 0.0),
            Err(Error::Contract(_))
        ));
        assert!(cross_entropy(&m(1, 3, &[0.; 3]), &[0], 1.0).is_err());
    }
}
