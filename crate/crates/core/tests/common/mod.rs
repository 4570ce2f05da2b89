#![allow(dead_code)]

use std::collections::BTreeMap;

use predinfo::diffcore::{ParamSet, Tensor};

/// Central finite-difference gradient of `f` with respect to every entry of
/// every tensor in `params`.
pub fn numerical_gradients(
    params: &ParamSet,
    step: f64,
    mut f: impl FnMut(&ParamSet) -> f64,
) -> ParamSet {
    let mut work = params.clone();
    let mut out = BTreeMap::new();
    for (name, t) in params {
        let mut g = vec![0.0; t.len()];
        for i in 0..t.len() {
            let orig = t.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + step;
            let up = f(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig - step;
            let down = f(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            g[i] = (up - down) / (2.0 * step);
        }
        out.insert(name.clone(), Tensor::new(t.shape().to_vec(), g).unwrap());
    }
    out
}

/// Per-tensor relative error `|a - n| / max(|a|, |n|)` in the L2 norm,
/// with a small floor so exactly-zero gradients compare absolutely.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.sq_norm().sqrt().max(numeric.sq_norm().sqrt()).max(1e-8);
    diff / scale
}

/// Largest per-tensor relative error over the named set.
pub fn max_relative_error(analytic: &ParamSet, numeric: &ParamSet) -> (String, f64) {
    numeric
        .iter()
        .map(|(k, n)| (k.clone(), relative_error(&analytic[k], n)))
        .fold((String::new(), 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
}

// ---- dense linear algebra written independently of the library ----

pub type Mat = Vec<Vec<f64>>;

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            let aip = a[i][p];
            for j in 0..m {
                c[i][j] += aip * b[p][j];
            }
        }
    }
    c
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut w: Mat = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&x, &y| w[x][c].abs().total_cmp(&w[y][c].abs()))
            .unwrap();
        w.swap(c, piv);
        let d = w[c][c];
        assert!(d.abs() > 1e-300, "singular matrix");
        for v in w[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = w[r][c];
                if f != 0.0 {
                    for j in 0..2 * n {
                        w[r][j] -= f * w[c][j];
                    }
                }
            }
        }
    }
    w.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Householder QR of a square matrix.
fn householder_qr(a: &Mat) -> (Mat, Mat) {
    let n = a.len();
    let mut r = a.clone();
    let mut q: Mat = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for k in 0..n.saturating_sub(1) {
        let norm: f64 = (k..n).map(|i| r[i][k] * r[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (0..n).map(|i| if i < k { 0.0 } else { r[i][k] }).collect();
        v[k] -= alpha;
        let vn: f64 = v.iter().map(|x| x * x).sum();
        if vn == 0.0 {
            continue;
        }
        // r <- (I - 2 v v^T / vn) r ; q <- q (I - 2 v v^T / vn)
        for j in 0..n {
            let s: f64 = (k..n).map(|i| v[i] * r[i][j]).sum::<f64>() * 2.0 / vn;
            for i in k..n {
                r[i][j] -= s * v[i];
            }
        }
        for i in 0..n {
            let s: f64 = (k..n).map(|j| q[i][j] * v[j]).sum::<f64>() * 2.0 / vn;
            for j in k..n {
                q[i][j] -= s * v[j];
            }
        }
    }
    (q, r)
}

/// Eigenvalues (ascending) of a general real matrix known to have a real
/// spectrum, by shifted QR iteration with deflation.
pub fn qr_eigenvalues(m: &Mat) -> Vec<f64> {
    let mut a = m.clone();
    let scale = m.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    let mut n = a.len();
    let mut out = Vec::with_capacity(n);
    let mut iters = 0;
    while n > 1 {
        let off = (0..n - 1).map(|j| a[n - 1][j].abs()).fold(0.0, f64::max);
        if off < 1e-15 * scale {
            out.push(a[n - 1][n - 1]);
            n -= 1;
            a.truncate(n);
            for row in a.iter_mut() {
                row.truncate(n);
            }
            continue;
        }
        iters += 1;
        assert!(iters < 100_000, "QR iteration did not converge");
        // Wilkinson-style shift from the trailing 2x2 block when it has real roots
        let (p, q, r, s) = (a[n - 2][n - 2], a[n - 2][n - 1], a[n - 1][n - 2], a[n - 1][n - 1]);
        let half_tr = 0.5 * (p + s);
        let disc = 0.25 * (p - s) * (p - s) + q * r;
        let mu = if disc >= 0.0 {
            let (l1, l2) = (half_tr + disc.sqrt(), half_tr - disc.sqrt());
            if (l1 - s).abs() < (l2 - s).abs() { l1 } else { l2 }
        } else {
            s
        };
        let shifted: Mat = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] - if i == j { mu } else { 0.0 }).collect())
            .collect();
        let (qm, rm) = householder_qr(&shifted);
        a = mat_mul(&rm, &qm);
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += mu;
        }
    }
    out.push(a[0][0]);
    out.sort_by(f64::total_cmp);
    out
}

/// Random symmetric positive-definite joint covariance of size `n`.
pub fn random_spd(n: usize, rng: &mut impl rand::Rng) -> Mat {
    let g: Mat = (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut s = mat_mul(&g, &transpose(&g));
    for (i, row) in s.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
        row[i] += 0.05;
    }
    s
}

pub fn to_dmatrix(a: &Mat) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(a.len(), a[0].len(), |i, j| a[i][j])
}

pub fn block(a: &Mat, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Mat {
    a[rows].iter().map(|r| r[cols.clone()].to_vec()).collect()
}

pub fn joint_from_full(full: &Mat, dx: usize) -> predinfo::gib::GaussianJoint {
    let n = full.len();
    predinfo::gib::GaussianJoint::new(
        to_dmatrix(&block(full, 0..dx, 0..dx)),
        to_dmatrix(&block(full, dx..n, dx..n)),
        to_dmatrix(&block(full, 0..dx, dx..n)),
    )
    .unwrap()
}

/// Monte-Carlo second moments of concatenated (past, future) position
/// windows, one window per simulated trajectory, with standard errors.
/// Returns `(moment, standard_error)` as row-major `d x d`.
pub fn mc_window_moments(
    p: &predinfo::bho::BhoParams,
    spec: &predinfo::bho::WindowSpec,
    n_windows: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    use predinfo::bho::{simulate, split_windows, Init};
    let (tp, tf) = (spec.t_past, spec.t_future);
    let d = tp + tf;
    let mut s1 = vec![0.0; d * d];
    let mut s2 = vec![0.0; d * d];
    let chunk = 50_000;
    let mut done = 0;
    let mut k = 0u64;
    let mut z = vec![0.0; d];
    while done < n_windows {
        let n = chunk.min(n_windows - done);
        let b = simulate(p, n, spec.total_len, predinfo::rng::derive_seed(seed, k), Init::Stationary)
            .unwrap();
        let (past, fut) = split_windows(&b, spec).unwrap();
        for t in 0..n {
            z[..tp].copy_from_slice(&past[t * tp..(t + 1) * tp]);
            z[tp..].copy_from_slice(&fut[t * tf..(t + 1) * tf]);
            for i in 0..d {
                for j in i..d {
                    let v = z[i] * z[j];
                    s1[i * d + j] += v;
                    s2[i * d + j] += v * v;
                }
            }
        }
        done += n;
        k += 1;
    }
    let nf = n_windows as f64;
    let mut mean = vec![0.0; d * d];
    let mut se = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let m = s1[i * d + j] / nf;
            let var = (s2[i * d + j] / nf - m * m) * nf / (nf - 1.0);
            mean[i * d + j] = m;
            mean[j * d + i] = m;
            se[i * d + j] = (var / nf).sqrt();
            se[j * d + i] = se[i * d + j];
        }
    }
    (mean, se)
}

/// Windows of `n` stationary oscillator runs encoded by `z = A x_past + eps`
/// with `eps ~ N(0, I)`; rows of `A` that are zero are dropped.
pub fn encoder_batch(enc: &predinfo::gib::LinearEncoder, n: usize, seed: u64) -> predinfo::rnn::ReprBatch {
    use predinfo::bho::{simulate, split_windows, BhoParams, Init, WindowSpec};
    use predinfo::diffcore::{matmul, Tensor};
    let spec = WindowSpec { t_past: 18, t_future: 18, total_len: 36, split_index: 18 };
    let enc = enc.restrict(&enc.active_rows());
    let k = enc.a.nrows();
    let b = simulate(&BhoParams::paper(), n, spec.total_len, seed, Init::Stationary).unwrap();
    let (past, fut) = split_windows(&b, &spec).unwrap();
    let x_past = Tensor::matrix(n, 18, past).unwrap();
    let x_future = Tensor::matrix(n, 18, fut).unwrap();
    let at = Tensor::matrix(18, k, (0..18 * k).map(|e| enc.a[(e % k, e / k)]).collect()).unwrap();
    let h = matmul(&x_past, &at).unwrap();
    let mut rng = predinfo::rng::rng_from_seed(predinfo::rng::derive_seed(seed, 77));
    let noise = predinfo::rng::normals(&mut rng, n * k);
    let z = Tensor::matrix(n, k, h.data().iter().zip(&noise).map(|(a, b)| a + b).collect()).unwrap();
    predinfo::rnn::ReprBatch { x_past, x_future, h, z, sigma: 1.0 }
}

/// Sample mean of `log p(z | x) - log p(z)` for a batch from
/// [`encoder_batch`], with the exact Gaussian marginal of `z`.
pub fn pointwise_information(
    enc: &predinfo::gib::LinearEncoder,
    joint: &predinfo::gib::GaussianJoint,
    batch: &predinfo::rnn::ReprBatch,
) -> f64 {
    let enc = enc.restrict(&enc.active_rows());
    let k = enc.a.nrows();
    let cov = &enc.a * &joint.sigma_x * enc.a.transpose() + nalgebra::DMatrix::identity(k, k);
    let chol = nalgebra::Cholesky::new(cov).unwrap();
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let z = nalgebra::DVector::from_row_slice(batch.z.row_slice(i));
        let h = nalgebra::DVector::from_row_slice(batch.h.row_slice(i));
        let r = &z - &h;
        let cond = -0.5 * r.dot(&r);
        let marg = -0.5 * log_det - 0.5 * z.dot(&chol.solve(&z));
        total += cond - marg;
    }
    total / n as f64
}
