//! Brownian harmonic oscillator, Euler-discretised:
//!
//! ```text
//! x' = x + v dt
//! v' = (1 - gamma dt) v - omega^2 x dt + xi sqrt(D dt)
//! ```

use nalgebra::{DMatrix, Matrix2, Matrix4, Vector4};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gib::GaussianJoint;
use crate::rng::{derive_seed, normal, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhoParams {
    pub omega: f64,
    pub gamma: f64,
    pub d: f64,
    pub dt: f64,
}

impl BhoParams {
    /// omega = 1.5 * 2 pi, gamma = 20, D = 1000, dt = 0.01667.
    pub fn paper() -> Self {
        BhoParams {
            omega: 1.5 * 2.0 * std::f64::consts::PI,
            gamma: 20.0,
            d: 1000.0,
            dt: 0.01667,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega, self.gamma, self.d, self.dt]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::invalid("oscillator parameters must be finite"));
        }
        if self.dt < 0.0 || self.omega < 0.0 || self.gamma < 0.0 || self.d < 0.0 {
            return Err(Error::invalid("oscillator parameters must be non-negative"));
        }
        if self.gamma * self.dt >= 1.0 {
            return Err(Error::invalid(format!(
                "gamma * dt = {} must be < 1",
                self.gamma * self.dt
            )));
        }
        Ok(())
    }
}

/// `(A, Q)` of the linear update `s' = A s + noise`, `noise ~ N(0, Q)`.
pub fn transition(p: &BhoParams) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    p.validate()?;
    let a = Matrix2::new(
        1.0,
        p.dt,
        -p.omega * p.omega * p.dt,
        1.0 - p.gamma * p.dt,
    );
    let q = Matrix2::new(0.0, 0.0, 0.0, p.d * p.dt);
    Ok((a, q))
}

/// Largest eigenvalue modulus of a real 2x2 matrix.
pub fn spectral_radius(a: &Matrix2<f64>) -> f64 {
    let half_tr = 0.5 * a.trace();
    let det = a.determinant();
    let disc = half_tr * half_tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (half_tr + s).abs().max((half_tr - s).abs())
    } else {
        det.sqrt()
    }
}

/// Solution of `S = A S A^T + Q` via `(I - A (x) A) vec S = vec Q`.
pub fn stationary_covariance(p: &BhoParams) -> Result<Matrix2<f64>> {
    let (a, q) = transition(p)?;
    let rho = spectral_radius(&a);
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let mut k = Matrix4::identity();
    for i in 0..2 {
        for j in 0..2 {
            for r in 0..2 {
                for c in 0..2 {
                    // column-major vec: index = row + 2 * col
                    k[(i + 2 * j, r + 2 * c)] -= a[(i, r)] * a[(j, c)];
                }
            }
        }
    }
    let vq = Vector4::new(q[(0, 0)], q[(1, 0)], q[(0, 1)], q[(1, 1)]);
    let vs = k
        .lu()
        .solve(&vq)
        .ok_or_else(|| Error::Singular("Lyapunov system".into()))?;
    let s = Matrix2::new(vs[0], vs[2], vs[1], vs[3]);
    let s = (s + s.transpose()) * 0.5;
    let resid = (s - a * s * a.transpose() - q).norm();
    if resid >= 1e-10 * (1.0 + q.norm()) {
        return Err(Error::Singular(format!("Lyapunov residual {resid:e}")));
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Stationary,
    Zero,
    Fixed { x: f64, v: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub n_traj: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub params: BhoParams,
    /// Row-major `n_traj x n_steps x 2` (position, velocity).
    pub data: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn state(&self, traj: usize, step: usize) -> (f64, f64) {
        let o = (traj * self.n_steps + step) * 2;
        (self.data[o], self.data[o + 1])
    }

    /// Position sequence of one trajectory.
    pub fn positions(&self, traj: usize) -> Vec<f64> {
        (0..self.n_steps).map(|t| self.state(traj, t).0).collect()
    }
}

fn sample_stationary<R: Rng + ?Sized>(chol: &[f64; 3], rng: &mut R) -> (f64, f64) {
    let (z0, z1) = (normal(rng), normal(rng));
    (chol[0] * z0, chol[1] * z0 + chol[2] * z1)
}

/// Simulate `n_traj` independent trajectories of `n_steps` states each; the
/// first state is the initial condition. Trajectory `i` uses its own stream
/// derived from `(seed, i)`, so output does not depend on thread count.
pub fn simulate(
    p: &BhoParams,
    n_traj: usize,
    n_steps: usize,
    seed: u64,
    init: Init,
) -> Result<TrajectoryBatch> {
    if n_traj == 0 || n_steps == 0 {
        return Err(Error::invalid("n_traj and n_steps must be >= 1"));
    }
    let (a, _) = transition(p)?;
    let chol = match init {
        Init::Stationary => {
            let s = stationary_covariance(p)?;
            let l00 = s[(0, 0)].max(0.0).sqrt();
            let l10 = if l00 > 0.0 { s[(1, 0)] / l00 } else { 0.0 };
            let l11 = (s[(1, 1)] - l10 * l10).max(0.0).sqrt();
            [l00, l10, l11]
        }
        _ => [0.0; 3],
    };
    let noise = (p.d * p.dt).sqrt();
    let mut data = vec![0.0; n_traj * n_steps * 2];
    data.par_chunks_mut(n_steps * 2)
        .enumerate()
        .for_each(|(i, out)| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let (mut x, mut v) = match init {
                Init::Stationary => sample_stationary(&chol, &mut rng),
                Init::Zero => (0.0, 0.0),
                Init::Fixed { x, v } => (x, v),
            };
            out[0] = x;
            out[1] = v;
            for t in 1..n_steps {
                let xi = normal(&mut rng);
                let nx = a[(0, 0)] * x + a[(0, 1)] * v;
                let nv = a[(1, 0)] * x + a[(1, 1)] * v + noise * xi;
                x = nx;
                v = nv;
                out[2 * t] = x;
                out[2 * t + 1] = v;
            }
        });
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("oscillator trajectory".into()));
    }
    Ok(TrajectoryBatch {
        n_traj,
        n_steps,
        seed,
        params: *p,
        data,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub t_past: usize,
    pub t_future: usize,
    pub total_len: usize,
    pub split_index: usize,
}

impl WindowSpec {
    /// 100-step sequences whose last 36 steps are split 18 past / 18 future.
    pub fn paper() -> Self {
        WindowSpec {
            t_past: 18,
            t_future: 18,
            total_len: 100,
            split_index: 82,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_past == 0 || self.t_future == 0 {
            return Err(Error::invalid("window lengths must be >= 1"));
        }
        if self.split_index < self.t_past || self.split_index + self.t_future > self.total_len {
            return Err(Error::invalid(format!("inconsistent window spec {self:?}")));
        }
        Ok(())
    }

    pub fn past_range(&self) -> std::ops::Range<usize> {
        self.split_index - self.t_past..self.split_index
    }

    pub fn future_range(&self) -> std::ops::Range<usize> {
        self.split_index..self.split_index + self.t_future
    }
}

/// Stationary position autocovariance `c(k) = (A^k S)[0][0]` for `k < n`.
pub fn position_autocovariance(p: &BhoParams, n: usize) -> Result<Vec<f64>> {
    let (a, _) = transition(p)?;
    let mut m = stationary_covariance(p)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(m[(0, 0)]);
        m = a * m;
    }
    Ok(out)
}

/// Exact joint covariance of the past and future position windows.
pub fn window_covariances(p: &BhoParams, spec: &WindowSpec) -> Result<GaussianJoint> {
    spec.validate()?;
    let (tp, tf) = (spec.t_past, spec.t_future);
    let c = position_autocovariance(p, tp + tf)?;
    let sx = DMatrix::from_fn(tp, tp, |i, j| c[i.abs_diff(j)]);
    let sy = DMatrix::from_fn(tf, tf, |i, j| c[i.abs_diff(j)]);
    // past index i sits at split - tp + i, future index j at split + j
    let sxy = DMatrix::from_fn(tp, tf, |i, j| c[tp - i + j]);
    GaussianJoint::new(sx, sy, sxy)
}

/// Past and future position windows of every trajectory, each row one
/// trajectory: `(n_traj x t_past, n_traj x t_future)` row-major.
pub fn split_windows(batch: &TrajectoryBatch, spec: &WindowSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    if batch.n_steps < spec.total_len {
        return Err(Error::invalid(format!(
            "trajectories have {} steps, window needs {}",
            batch.n_steps, spec.total_len
        )));
    }
    let mut past = Vec::with_capacity(batch.n_traj * spec.t_past);
    let mut fut = Vec::with_capacity(batch.n_traj * spec.t_future);
    for i in 0..batch.n_traj {
        past.extend(spec.past_range().map(|t| batch.state(i, t).0));
        fut.extend(spec.future_range().map(|t| batch.state(i, t).0));
    }
    Ok((past, fut))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_degenerate_and_paper() {
        let p = BhoParams { dt: 0.0, ..BhoParams::paper() };
        let (a, q) = transition(&p).unwrap();
        assert_eq!(a, Matrix2::identity());
        assert_eq!(q, Matrix2::zeros());

        let (a, q) = transition(&BhoParams::paper()).unwrap();
        let w2dt = (3.0 * std::f64::consts::PI).powi(2) * 0.01667;
        assert_eq!(a[(0, 1)], 0.01667);
        assert!((a[(1, 0)] + w2dt).abs() < 1e-12);
        assert!((a[(1, 0)] + 1.48074).abs() < 1e-5);
        assert!((a[(1, 1)] - 0.6666).abs() < 1e-12);
        assert!((q[(1, 1)] - 16.67).abs() < 1e-12);

        let p = BhoParams { omega: 0.0, gamma: 0.0, d: 1.0, dt: 0.1 };
        let (a, _) = transition(&p).unwrap();
        assert_eq!(a, Matrix2::new(1.0, 0.1, 0.0, 1.0));
    }

    #[test]
    fn invalid_params() {
        let p = BhoParams { gamma: 100.0, ..BhoParams::paper() };
        assert!(transition(&p).is_err());
        let p = BhoParams { omega: 0.0, gamma: 0.0, d: 1.0, dt: 0.1 };
        assert!(matches!(stationary_covariance(&p), Err(Error::Unstable(_))));
        assert!(simulate(&p, 1, 10, 0, Init::Stationary).is_err());
        assert!(simulate(&p, 1, 10, 0, Init::Zero).is_ok());
    }

    #[test]
    fn lyapunov_residual() {
        let p = BhoParams::paper();
        let (a, q) = transition(&p).unwrap();
        let s = stationary_covariance(&p).unwrap();
        assert!((s - a * s * a.transpose() - q).norm() < 1e-10);
        assert_eq!(s, s.transpose());
        assert!(s[(0, 0)] > 0.0 && s.determinant() > 0.0);
        let s0 = stationary_covariance(&BhoParams { d: 0.0, ..p }).unwrap();
        assert_eq!(s0, Matrix2::zeros());
    }

    #[test]
    fn one_deterministic_step() {
        let p = BhoParams { d: 0.0, ..BhoParams::paper() };
        let b = simulate(&p, 1, 2, 0, Init::Fixed { x: 1.0, v: 0.0 }).unwrap();
        let (x1, v1) = b.state(0, 1);
        assert_eq!(x1, 1.0);
        assert_eq!(v1, -p.omega * p.omega * p.dt);
        let z = simulate(&p, 3, 20, 5, Init::Zero).unwrap();
        assert!(z.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn toeplitz_windows() {
        let j = window_covariances(&BhoParams::paper(), &WindowSpec::paper()).unwrap();
        let s = stationary_covariance(&BhoParams::paper()).unwrap();
        for i in 0..18 {
            assert_eq!(j.sigma_x[(i, i)], s[(0, 0)]);
            assert_eq!(j.sigma_y[(i, i)], s[(0, 0)]);
        }
        assert_eq!(j.sigma_x, j.sigma_x.transpose());
        // lag-1 cross covariance between the last past and first future step
        assert_eq!(j.sigma_xy[(17, 0)], j.sigma_x[(0, 1)]);
    }

    #[test]
    fn bad_window_spec() {
        let w = WindowSpec { t_past: 10, t_future: 5, total_len: 12, split_index: 8 };
        assert!(w.validate().is_err());
    }
}
