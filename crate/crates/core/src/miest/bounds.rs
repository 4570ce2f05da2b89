use nalgebra::{Cholesky, DMatrix};

use crate::diffcore::{lse, matmul, Tensor};
use crate::error::{Error, Result};

fn sq_norms(t: &Tensor) -> Vec<f64> {
    (0..t.rows()).map(|i| t.row_slice(i).iter().map(|v| v * v).sum()).collect()
}

fn check_pair(op: &'static str, z: &Tensor, h: &Tensor, sigma: f64) -> Result<()> {
    if z.dims() != h.dims() {
        return Err(Error::shape(op, format!("z {:?} vs h {:?}", z.shape(), h.shape())));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("{op} needs sigma > 0, got {sigma}")));
    }
    if !z.is_finite() || !h.is_finite() {
        return Err(Error::NonFinite(op.to_string()));
    }
    Ok(())
}

/// Rows `rows` of the matrix `log N(z_i; h_j, sigma^2 I)`. The diagonal is
/// computed from the difference directly; other entries use the expanded
/// squared distance.
fn log_pdf_rows(
    z: &Tensor,
    h: &Tensor,
    sigma: f64,
    rows: std::ops::Range<usize>,
    hn: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let (_, d) = z.dims();
    let s2 = sigma * sigma;
    let norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * s2).ln();
    let zb = Tensor::matrix(rows.len(), d, z.data()[rows.start * d..rows.end * d].to_vec())?;
    let cross = matmul(&zb, &h.transpose())?;
    let mut out = Vec::with_capacity(rows.len());
    for (r, i) in rows.enumerate() {
        let zi = z.row_slice(i);
        let zn: f64 = zi.iter().map(|v| v * v).sum();
        let mut row: Vec<f64> = cross
            .row_slice(r)
            .iter()
            .zip(hn)
            .map(|(&c, &n)| norm - (zn + n - 2.0 * c).max(0.0) / (2.0 * s2))
            .collect();
        let own: f64 = zi.iter().zip(h.row_slice(i)).map(|(a, b)| (a - b) * (a - b)).sum();
        row[i] = norm - own / (2.0 * s2);
        out.push(row);
    }
    Ok(out)
}

/// `K x K` matrix with entry `(i, j) = log N(z_i; h_j, sigma^2 I)`.
pub fn cond_log_pdf_matrix(z: &Tensor, h: &Tensor, sigma: f64) -> Result<Tensor> {
    check_pair("cond_log_pdf_matrix", z, h, sigma)?;
    let k = z.rows();
    let rows = log_pdf_rows(z, h, sigma, 0..k, &sq_norms(h))?;
    Tensor::matrix(k, k, rows.concat())
}

fn row_terms(row: &[f64], i: usize) -> (f64, f64) {
    let all = lse(row);
    let m = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v));
    let rest = if m == f64::NEG_INFINITY {
        m
    } else {
        m + row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| (v - m).exp())
            .sum::<f64>()
            .ln()
    };
    (row[i] - all, row[i] - rest)
}

/// Minibatch `(lower, upper)` bounds on `I(Z; X)` from the conditional
/// log-densities `logp(i, j) = log p(z_i | x_j)`.
pub fn minibatch_bounds(logp: &Tensor) -> Result<(f64, f64)> {
    let (k, c) = logp.dims();
    if k != c {
        return Err(Error::shape("minibatch_bounds", format!("matrix must be square, got {k}x{c}")));
    }
    if k < 2 {
        return Err(Error::invalid(format!("minibatch bounds need K >= 2, got {k}")));
    }
    if !logp.is_finite() {
        return Err(Error::NonFinite("minibatch_bounds".into()));
    }
    let (lo, up) = (0..k).fold((0.0, 0.0), |(lo, up), i| {
        let (a, b) = row_terms(logp.row_slice(i), i);
        (lo + a, up + b)
    });
    let kf = k as f64;
    Ok((lo / kf + kf.ln(), up / kf + (kf - 1.0).ln()))
}

/// Same as [`minibatch_bounds`] on [`cond_log_pdf_matrix`], without
/// holding the full matrix.
pub fn gaussian_minibatch_bounds(z: &Tensor, h: &Tensor, sigma: f64) -> Result<(f64, f64)> {
    check_pair("gaussian_minibatch_bounds", z, h, sigma)?;
    let k = z.rows();
    if k < 2 {
        return Err(Error::invalid(format!("minibatch bounds need K >= 2, got {k}")));
    }
    let hn = sq_norms(h);
    let (mut lo, mut up) = (0.0, 0.0);
    let block = 256;
    for start in (0..k).step_by(block) {
        let rows = log_pdf_rows(z, h, sigma, start..(start + block).min(k), &hn)?;
        for (r, row) in rows.iter().enumerate() {
            let (a, b) = row_terms(row, start + r);
            lo += a;
            up += b;
        }
    }
    let kf = k as f64;
    let (lo, up) = (lo / kf + kf.ln(), up / kf + (kf - 1.0).ln());
    if !lo.is_finite() || !up.is_finite() {
        return Err(Error::NonFinite("gaussian_minibatch_bounds".into()));
    }
    Ok((lo, up))
}

/// Bounds averaged over consecutive batches of `k` rows. With fewer than
/// `k` rows a single batch of all rows is used.
pub fn batched_gaussian_bounds(z: &Tensor, h: &Tensor, sigma: f64, k: usize) -> Result<(f64, f64, usize)> {
    if k < 2 {
        return Err(Error::invalid(format!("minibatch bounds need K >= 2, got {k}")));
    }
    let n = z.rows();
    let k = k.min(n);
    let batches = (n / k).max(1);
    let d = z.cols();
    let (mut lo, mut up) = (0.0, 0.0);
    for b in 0..batches {
        let take = |t: &Tensor| Tensor::matrix(k, d, t.data()[b * k * d..(b + 1) * k * d].to_vec());
        let (l, u) = gaussian_minibatch_bounds(&take(z)?, &take(h)?, sigma)?;
        lo += l;
        up += u;
    }
    Ok((lo / batches as f64, up / batches as f64, k))
}

/// Variational decoder `q(y | z)` used by the Barber-Agakov bound.
pub trait FutureDecoder {
    /// `log q(y_i | z_i)` for every row.
    fn log_q(&self, z: &Tensor, y: &Tensor) -> Result<Vec<f64>>;
}

/// `y ~ N(W^T [z, 1], C)` fitted by least squares, `C` the residual
/// covariance.
#[derive(Clone, Debug)]
pub struct LinearGaussianDecoder {
    /// `(dz + 1) x dy`, last row is the intercept.
    pub weights: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

fn design(z: &Tensor) -> DMatrix<f64> {
    let (n, d) = z.dims();
    DMatrix::from_fn(n, d + 1, |i, j| if j < d { z.get(i, j) } else { 1.0 })
}

fn as_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

impl LinearGaussianDecoder {
    pub fn fit(z: &Tensor, y: &Tensor) -> Result<Self> {
        if z.rows() != y.rows() {
            return Err(Error::shape("decoder_fit", format!("{} vs {} rows", z.rows(), y.rows())));
        }
        let n = z.rows();
        if n <= z.cols() + 1 {
            return Err(Error::invalid("decoder fit needs more rows than features"));
        }
        let x = design(z);
        let ym = as_dmatrix(y);
        let gram = x.transpose() * &x;
        let chol = Cholesky::new(gram).ok_or_else(|| Error::Singular("decoder normal equations".into()))?;
        let weights = chol.solve(&(x.transpose() * &ym));
        let resid = &ym - &x * &weights;
        let cov = resid.transpose() * &resid / n as f64;
        Ok(LinearGaussianDecoder { weights, cov })
    }
}

impl FutureDecoder for LinearGaussianDecoder {
    fn log_q(&self, z: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
        let dy = self.cov.nrows();
        if y.cols() != dy || z.cols() + 1 != self.weights.nrows() || z.rows() != y.rows() {
            return Err(Error::shape("decoder_log_q", "z/y do not match the fitted decoder"));
        }
        let chol = Cholesky::new(self.cov.clone()).ok_or_else(|| Error::Singular("decoder covariance".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let norm = -0.5 * (dy as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        let resid = as_dmatrix(y) - design(z) * &self.weights;
        let sol = chol.solve(&resid.transpose());
        Ok((0..z.rows())
            .map(|i| norm - 0.5 * resid.row(i).transpose().dot(&sol.column(i)))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaBound {
    /// `H(Y) + E log q(Y | Z)`.
    Bound(f64),
    /// Entropy unknown: only the cross-entropy `-E log q(Y | Z)` is
    /// available, which is useful as a training signal but not an estimate.
    CrossEntropyOnly(f64),
}

pub fn ba_future_bound(
    decoder: &dyn FutureDecoder,
    z: &Tensor,
    y: &Tensor,
    entropy_future: Option<f64>,
) -> Result<BaBound> {
    if z.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let lq = decoder.log_q(z, y)?;
    let mean = lq.iter().sum::<f64>() / lq.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite("ba_future_bound".into()));
    }
    Ok(match entropy_future {
        Some(h) => BaBound::Bound(h + mean),
        None => BaBound::CrossEntropyOnly(-mean),
    })
}
