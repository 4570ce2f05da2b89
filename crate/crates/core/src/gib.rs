//! Analytic Gaussian information bottleneck.
//!
//! For jointly Gaussian `X`, `Y` the optimal bottleneck `T = A X + eps` is
//! built from the left eigenvectors of `Sigma_{X|Y} Sigma_X^{-1}` with the
//! smallest eigenvalues. Everything here is in nats.
//!
//! The eigenproblem is solved through its symmetric form: with
//! `Sigma_X = L L^T`, the matrix `L^{-1} Sigma_{X|Y} L^{-T}` has the same
//! spectrum, and an eigenvector `u` of it maps to the left eigenvector
//! `v = L^{-T} u`, normalised so that `v^T Sigma_X v = 1`.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this are treated as deterministic directions.
pub const LAMBDA_FLOOR: f64 = 1e-12;
/// Eigenvalues above `1 - UNINFORMATIVE_TOL` carry no information about `Y`.
pub const UNINFORMATIVE_TOL: f64 = 1e-9;
const RANGE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GaussianJoint {
    pub sigma_x: DMatrix<f64>,
    pub sigma_y: DMatrix<f64>,
    pub sigma_xy: DMatrix<f64>,
}

fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Singular(what.to_string()))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `log det` of a symmetric positive-definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let c = cholesky(m, "log_det_spd")?;
    Ok(2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Differential entropy of `N(mu, cov)`.
pub fn gaussian_entropy(cov: &DMatrix<f64>) -> Result<f64> {
    let d = cov.nrows() as f64;
    Ok(0.5 * (d * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + log_det_spd(cov)?))
}

impl GaussianJoint {
    pub fn new(
        sigma_x: DMatrix<f64>,
        sigma_y: DMatrix<f64>,
        sigma_xy: DMatrix<f64>,
    ) -> Result<Self> {
        if !sigma_x.is_square() || !sigma_y.is_square() {
            return Err(Error::shape("gaussian_joint", "covariances must be square"));
        }
        if sigma_xy.shape() != (sigma_x.nrows(), sigma_y.nrows()) {
            return Err(Error::shape(
                "gaussian_joint",
                format!(
                    "cross-covariance {:?} vs dims ({}, {})",
                    sigma_xy.shape(),
                    sigma_x.nrows(),
                    sigma_y.nrows()
                ),
            ));
        }
        for (m, name) in [(&sigma_x, "sigma_x"), (&sigma_y, "sigma_y")] {
            let asym = (m - m.transpose()).amax();
            if asym > 1e-9 * m.amax().max(1.0) {
                return Err(Error::invalid(format!("{name} is not symmetric")));
            }
            cholesky(m, name)?;
        }
        Ok(GaussianJoint {
            sigma_x,
            sigma_y,
            sigma_xy,
        })
    }

    pub fn dim_x(&self) -> usize {
        self.sigma_x.nrows()
    }

    pub fn dim_y(&self) -> usize {
        self.sigma_y.nrows()
    }

    /// `[[Sigma_X, Sigma_XY], [Sigma_XY^T, Sigma_Y]]`.
    pub fn full(&self) -> DMatrix<f64> {
        let (dx, dy) = (self.dim_x(), self.dim_y());
        let mut m = DMatrix::zeros(dx + dy, dx + dy);
        m.view_mut((0, 0), (dx, dx)).copy_from(&self.sigma_x);
        m.view_mut((dx, dx), (dy, dy)).copy_from(&self.sigma_y);
        m.view_mut((0, dx), (dx, dy)).copy_from(&self.sigma_xy);
        m.view_mut((dx, 0), (dy, dx)).copy_from(&self.sigma_xy.transpose());
        m
    }

    /// `I(X;Y) = -1/2 sum log lambda_i`, with deterministic directions
    /// floored at [`LAMBDA_FLOOR`].
    pub fn mutual_information(&self) -> Result<f64> {
        let s = ib_spectrum(self)?;
        Ok(-0.5
            * s.lambdas
                .iter()
                .map(|l| l.max(LAMBDA_FLOOR).min(1.0).ln())
                .sum::<f64>())
    }
}

/// `Sigma_{X|Y} = Sigma_X - Sigma_XY Sigma_Y^{-1} Sigma_XY^T`.
pub fn conditional_covariance(joint: &GaussianJoint) -> Result<DMatrix<f64>> {
    let cy = cholesky(&joint.sigma_y, "sigma_y")?;
    let solved = cy.solve(&joint.sigma_xy.transpose());
    Ok(symmetrize(&(&joint.sigma_x - &joint.sigma_xy * solved)))
}

#[derive(Clone, Debug)]
pub struct IbSpectrum {
    /// Ascending eigenvalues of `Sigma_{X|Y} Sigma_X^{-1}`, clamped at 0.
    pub lambdas: Vec<f64>,
    /// Row `i` is the left eigenvector `v_i^T`.
    pub vs: DMatrix<f64>,
    /// `r_i = v_i^T Sigma_X v_i`.
    pub rs: Vec<f64>,
}

impl IbSpectrum {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Directions whose eigenvalue is below [`LAMBDA_FLOOR`]: `X` determines
    /// them from `Y` exactly, so their information is unbounded.
    pub fn deterministic_directions(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.lambdas[i] < LAMBDA_FLOOR)
            .collect()
    }

    pub fn eigenvector(&self, i: usize) -> Vec<f64> {
        self.vs.row(i).iter().copied().collect()
    }
}

pub fn ib_spectrum(joint: &GaussianJoint) -> Result<IbSpectrum> {
    let cond = conditional_covariance(joint)?;
    let lx = cholesky(&joint.sigma_x, "sigma_x")?.l();
    // S = L^{-1} cond L^{-T}
    let half = lx
        .solve_lower_triangular(&cond)
        .ok_or_else(|| Error::Singular("sigma_x factor".into()))?;
    let s = lx
        .solve_lower_triangular(&half.transpose())
        .ok_or_else(|| Error::Singular("sigma_x factor".into()))?;
    let s = symmetrize(&s);
    let n = s.nrows();
    let eig = SymmetricEigen::try_new(s, 1e-15, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigen-solver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let lt = lx.transpose();
    let mut lambdas = Vec::with_capacity(n);
    let mut vs = DMatrix::zeros(n, n);
    let mut rs = Vec::with_capacity(n);
    for (row, &k) in order.iter().enumerate() {
        let lam = eig.eigenvalues[k];
        if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&lam) {
            return Err(Error::Eigen(format!(
                "eigenvalue {lam} outside [0, 1]; joint covariance is not PSD"
            )));
        }
        let u = eig.eigenvectors.column(k).into_owned();
        let v = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::Singular("sigma_x factor".into()))?;
        let r = (v.transpose() * &joint.sigma_x * &v)[(0, 0)];
        lambdas.push(lam.max(0.0));
        vs.row_mut(row).copy_from(&v.transpose());
        rs.push(r);
    }
    Ok(IbSpectrum { lambdas, vs, rs })
}

/// `T = A X + eps`, `eps ~ N(0, sigma_eps)`.
#[derive(Clone, Debug)]
pub struct LinearEncoder {
    pub a: DMatrix<f64>,
    pub sigma_eps: DMatrix<f64>,
}

impl LinearEncoder {
    pub fn new(a: DMatrix<f64>, sigma_eps: DMatrix<f64>) -> Result<Self> {
        if sigma_eps.shape() != (a.nrows(), a.nrows()) {
            return Err(Error::shape("linear_encoder", "sigma_eps must be D_T x D_T"));
        }
        cholesky(&sigma_eps, "sigma_eps")?;
        Ok(LinearEncoder { a, sigma_eps })
    }

    /// Rows with any nonzero coefficient.
    pub fn active_rows(&self) -> Vec<usize> {
        (0..self.a.nrows())
            .filter(|&i| self.a.row(i).iter().any(|&x| x != 0.0))
            .collect()
    }

    /// Keep only the given rows (and the matching block of `sigma_eps`).
    pub fn restrict(&self, rows: &[usize]) -> LinearEncoder {
        let a = self.a.select_rows(rows);
        let s = self.sigma_eps.select_rows(rows).select_columns(rows);
        LinearEncoder { a, sigma_eps: s }
    }
}

fn alpha_sq(lambda: f64, r: f64, beta_minus_one: f64) -> f64 {
    let lam = lambda.max(LAMBDA_FLOOR);
    // beta (1 - lambda) - 1 written to avoid cancellation for beta near 1
    let num = beta_minus_one * (1.0 - lam) - lam;
    (num / (lam * r)).max(0.0)
}

fn projection_from_excess(spectrum: &IbSpectrum, beta_minus_one: f64) -> Result<LinearEncoder> {
    let n = spectrum.len();
    if let Some(i) = spectrum.rs.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::invalid(format!("degenerate spectrum: r_{i} <= 0")));
    }
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let s = alpha_sq(spectrum.lambdas[i], spectrum.rs[i], beta_minus_one);
        if s > 0.0 {
            let alpha = s.sqrt();
            a.row_mut(i).copy_from(&(spectrum.vs.row(i) * alpha));
        }
    }
    Ok(LinearEncoder {
        a,
        sigma_eps: DMatrix::identity(n, n),
    })
}

/// Optimal bottleneck encoder for trade-off `beta`.
///
/// Row `i` is `alpha_i v_i^T` with
/// `alpha_i^2 = max((beta (1 - lambda_i) - 1) / (lambda_i r_i), 0)`.
pub fn optimal_projection(spectrum: &IbSpectrum, beta: f64) -> Result<LinearEncoder> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    projection_from_excess(spectrum, beta - 1.0)
}

/// `I(T;X)` of the optimal encoder, from the spectrum alone.
fn past_info_from_excess(spectrum: &IbSpectrum, beta_minus_one: f64) -> f64 {
    spectrum
        .lambdas
        .iter()
        .zip(&spectrum.rs)
        .map(|(&l, &r)| 0.5 * (alpha_sq(l, r, beta_minus_one) * r).ln_1p())
        .sum()
}

/// Optimal encoder whose past information equals `i_past`, found by
/// bisection on `log(beta - 1)`. Returns the encoder and its `beta`.
pub fn optimal_encoder_at(spectrum: &IbSpectrum, i_past: f64) -> Result<(LinearEncoder, f64)> {
    if !(i_past >= 0.0) {
        return Err(Error::invalid("target past information must be >= 0"));
    }
    if i_past == 0.0 {
        return Ok((projection_from_excess(spectrum, 0.0)?, 1.0));
    }
    let (mut lo, mut hi) = (-80.0f64, 80.0f64);
    if past_info_from_excess(spectrum, hi.exp()) < i_past {
        return Err(Error::invalid(format!(
            "past information {i_past} is not reachable by any finite beta"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if past_info_from_excess(spectrum, mid.exp()) < i_past {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let excess = hi.exp();
    Ok((projection_from_excess(spectrum, excess)?, 1.0 + excess))
}

/// Past-information values `c_N` at which the optimal encoder switches from
/// `N` to `N + 1` eigen-directions:
/// `c_N = 1/2 sum_{i<=N} log( (lambda_{N+1}/lambda_i) (1-lambda_i)/(1-lambda_{N+1}) )`.
///
/// Eigenvalues must be ascending and strictly inside `(0, 1)`.
pub fn critical_points(lambdas: &[f64]) -> Result<Vec<f64>> {
    if let Some(&l) = lambdas.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::invalid(format!(
            "critical points need eigenvalues in (0, 1), got {l}"
        )));
    }
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("eigenvalues must be ascending"));
    }
    let mut out = Vec::with_capacity(lambdas.len().saturating_sub(1));
    for n in 1..lambdas.len() {
        let next = lambdas[n];
        let c: f64 = lambdas[..n]
            .iter()
            .map(|&l| (next / l).ln() + ((1.0 - l) / (1.0 - next)).ln())
            .sum();
        out.push(0.5 * c);
    }
    Ok(out)
}

/// Piecewise analytic optimal frontier `I(T;Y)` as a function of `I(T;X)`.
#[derive(Clone, Debug)]
pub struct FrontierCurve {
    lambdas: Vec<f64>,
    critical: Vec<f64>,
    // prefix means of log(1 - lambda) and log(lambda)
    mean_log_comp: Vec<f64>,
    mean_log_lambda: Vec<f64>,
}

impl FrontierCurve {
    /// Build from ascending eigenvalues. Eigenvalues within
    /// [`UNINFORMATIVE_TOL`] of 1 never enter the encoder and are dropped;
    /// the rest are floored at [`LAMBDA_FLOOR`].
    pub fn from_eigenvalues(lambdas: &[f64]) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::invalid("empty spectrum"));
        }
        let informative: Vec<f64> = lambdas
            .iter()
            .filter(|&&l| l < 1.0 - UNINFORMATIVE_TOL)
            .map(|&l| l.max(LAMBDA_FLOOR))
            .collect();
        let critical = critical_points(&informative)?;
        let mut mean_log_comp = Vec::with_capacity(informative.len());
        let mut mean_log_lambda = Vec::with_capacity(informative.len());
        let (mut sc, mut sl) = (0.0, 0.0);
        for (k, &l) in informative.iter().enumerate() {
            sc += (-l).ln_1p();
            sl += l.ln();
            mean_log_comp.push(sc / (k + 1) as f64);
            mean_log_lambda.push(sl / (k + 1) as f64);
        }
        Ok(FrontierCurve {
            lambdas: informative,
            critical,
            mean_log_comp,
            mean_log_lambda,
        })
    }

    pub fn from_spectrum(spectrum: &IbSpectrum) -> Result<Self> {
        Self::from_eigenvalues(&spectrum.lambdas)
    }

    /// Informative eigenvalues used by the curve.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn critical_points(&self) -> &[f64] {
        &self.critical
    }

    /// `I(X;Y)`, the value approached as `I(T;X) -> infinity`.
    pub fn asymptote(&self) -> f64 {
        -0.5 * self.lambdas.iter().map(|l| l.ln()).sum::<f64>()
    }

    /// Number of eigen-directions in use at `i_past`.
    pub fn segment(&self, i_past: f64) -> usize {
        1 + self.critical.partition_point(|&c| c <= i_past)
    }

    /// Segment `n` formula evaluated at `i_past`, regardless of whether `n`
    /// is the optimal segment there.
    pub fn segment_value(&self, n: usize, i_past: f64) -> f64 {
        let nf = n as f64;
        let a = self.mean_log_comp[n - 1];
        let b = 2.0 * i_past / nf + self.mean_log_lambda[n - 1];
        let m = a.max(b);
        let log_sum = m + ((a - m).exp() + (b - m).exp()).ln();
        i_past - 0.5 * nf * log_sum
    }

    /// Slope `d I(T;Y) / d I(T;X)` of segment `n`.
    pub fn segment_slope(&self, n: usize, i_past: f64) -> f64 {
        let nf = n as f64;
        let x = 2.0 * i_past / nf + self.mean_log_lambda[n - 1] - self.mean_log_comp[n - 1];
        // 1 - sigmoid(x)
        if x >= 0.0 {
            let e = (-x).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + x.exp())
        }
    }

    pub fn value(&self, i_past: f64) -> Result<f64> {
        if !(i_past >= 0.0) {
            return Err(Error::invalid(format!("i_past must be >= 0, got {i_past}")));
        }
        if self.lambdas.is_empty() || i_past == 0.0 {
            return Ok(0.0);
        }
        Ok(self.segment_value(self.segment(i_past), i_past))
    }

    pub fn slope(&self, i_past: f64) -> Result<f64> {
        if !(i_past >= 0.0) {
            return Err(Error::invalid(format!("i_past must be >= 0, got {i_past}")));
        }
        if self.lambdas.is_empty() {
            return Ok(0.0);
        }
        Ok(self.segment_slope(self.segment(i_past), i_past))
    }

    /// `(i_past, i_future)` samples on an even grid over `[0, max_past]`.
    pub fn sample(&self, max_past: f64, n_points: usize) -> Result<Vec<(f64, f64)>> {
        let n = n_points.max(2);
        (0..n)
            .map(|k| {
                let x = max_past * k as f64 / (n - 1) as f64;
                Ok((x, self.value(x)?))
            })
            .collect()
    }
}

/// Optimal `I(T;Y)` at the given `I(T;X)`.
pub fn frontier_value(spectrum: &IbSpectrum, i_past: f64) -> Result<f64> {
    FrontierCurve::from_spectrum(spectrum)?.value(i_past)
}

/// Exact `(I(T;X), I(T;Y))` for a linear Gaussian encoder.
pub fn encoder_plane_point(joint: &GaussianJoint, enc: &LinearEncoder) -> Result<(f64, f64)> {
    if enc.a.ncols() != joint.dim_x() {
        return Err(Error::shape(
            "encoder_plane_point",
            format!("A has {} columns, X has {} dims", enc.a.ncols(), joint.dim_x()),
        ));
    }
    let a = &enc.a;
    let t_cov = symmetrize(&(a * &joint.sigma_x * a.transpose() + &enc.sigma_eps));
    let cond = conditional_covariance(joint)?;
    let t_given_y = symmetrize(&(a * cond * a.transpose() + &enc.sigma_eps));
    let ld_t = log_det_spd(&t_cov)?;
    let ld_eps = log_det_spd(&enc.sigma_eps)?;
    let ld_ty = log_det_spd(&t_given_y)?;
    Ok((0.5 * (ld_t - ld_eps), 0.5 * (ld_t - ld_ty)))
}
