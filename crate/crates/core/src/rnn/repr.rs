use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use super::model::{column_block, decode, noisy_readout, RnnModel, State, StepGraph, DEC_W};
use crate::bho::WindowSpec;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::normal;

/// Windows and representations of a batch of sequences at the split.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprBatch {
    /// `n x (t_past * d)`
    pub x_past: Tensor,
    /// `n x (t_future * d)`
    pub x_future: Tensor,
    /// Deterministic hidden state after the last past step, `n x H`.
    pub h: Tensor,
    /// `h + sigma * eps`.
    pub z: Tensor,
    pub sigma: f64,
}

impl ReprBatch {
    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.rows() == 0
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> ReprBatch {
        let take = |t: &Tensor| {
            let c = t.cols();
            Tensor::matrix(n, c, t.data()[..n * c].to_vec()).expect("prefix")
        };
        ReprBatch {
            x_past: take(&self.x_past),
            x_future: take(&self.x_future),
            h: take(&self.h),
            z: take(&self.z),
            sigma: self.sigma,
        }
    }
}

/// Deterministic state after feeding the first `steps` inputs of `x`.
pub fn run_to(model: &RnnModel, x: &Tensor, steps: usize) -> Result<State> {
    let d = model.config.input_dim;
    if steps == 0 || steps * d > x.cols() {
        return Err(Error::shape("run_to", format!("cannot run {steps} steps over {} columns", x.cols())));
    }
    let sg = StepGraph::new(model.config.cell);
    let mut state = State::zeros(&model.config, x.rows());
    for t in 0..steps {
        state = sg.step(&model.params, &state, &column_block(x, t * d, d))?;
    }
    Ok(state)
}

/// Run each sequence (`n x T*d`) up to the split and read out `z` with
/// `eval_sigma`, independent of the noise level the model was trained with.
pub fn collect_representations<R: Rng + ?Sized>(
    model: &RnnModel,
    seqs: &Tensor,
    spec: &WindowSpec,
    eval_sigma: f64,
    rng: &mut R,
) -> Result<ReprBatch> {
    spec.validate()?;
    let d = model.config.input_dim;
    let steps = seqs.cols() / d;
    if seqs.cols() % d != 0 || steps < spec.split_index + spec.t_future {
        return Err(Error::invalid(format!(
            "sequences of {steps} steps do not cover split {} + future {}",
            spec.split_index, spec.t_future
        )));
    }
    let state = run_to(model, seqs, spec.split_index)?;
    let z = noisy_readout(&state.h, eval_sigma, rng)?;
    let past = spec.past_range();
    let fut = spec.future_range();
    Ok(ReprBatch {
        x_past: column_block(seqs, past.start * d, spec.t_past * d),
        x_future: column_block(seqs, fut.start * d, spec.t_future * d),
        h: state.h,
        z,
        sigma: eval_sigma,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenNoise {
    pub hidden_sigma: f64,
    pub output_sigma: f64,
}

/// Continue `prefix` (`T0 x d`, flattened) for `n_steps` using the
/// model's own noise levels.
pub fn generate<R: Rng + ?Sized>(model: &RnnModel, prefix: &[f64], n_steps: usize, rng: &mut R) -> Result<Vec<f64>> {
    let noise = GenNoise {
        hidden_sigma: model.config.noise_sigma,
        output_sigma: model.config.output_sigma,
    };
    generate_with(model, prefix, n_steps, noise, rng)
}

/// Autoregressive sampling: `z ~ N(h, s_h^2)`, `x ~ N(decode(z), s_o^2)`,
/// each sample fed back as the next input.
pub fn generate_with<R: Rng + ?Sized>(
    model: &RnnModel,
    prefix: &[f64],
    n_steps: usize,
    noise: GenNoise,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = model.config.input_dim;
    if prefix.is_empty() || prefix.len() % d != 0 {
        return Err(Error::invalid("prefix must hold at least one full input vector"));
    }
    if !(noise.hidden_sigma >= 0.0 && noise.output_sigma >= 0.0) {
        return Err(Error::invalid("generation noise levels must be >= 0"));
    }
    let sg = StepGraph::new(model.config.cell);
    let mut state = State::zeros(&model.config, 1);
    for x in prefix.chunks(d) {
        state = sg.step(&model.params, &state, &Tensor::matrix(1, d, x.to_vec())?)?;
    }
    let mut out = Vec::with_capacity(n_steps * d);
    for step in 0..n_steps {
        let z = noisy_readout(&state.h, noise.hidden_sigma, rng)?;
        let mean = decode(model, &z)?;
        let x: Vec<f64> = mean
            .data()
            .iter()
            .map(|&m| if noise.output_sigma > 0.0 { m + noise.output_sigma * normal(rng) } else { m })
            .collect();
        out.extend_from_slice(&x);
        if step + 1 < n_steps {
            state = sg.step(&model.params, &state, &Tensor::matrix(1, d, x)?)?;
        }
    }
    Ok(out)
}

/// `log p(x_2..x_T | x_1)` with the readout noise integrated out exactly:
/// each step is `N(x_{t+1}; h_t W + b, s_o^2 I + sigma^2 W^T W)`.
pub fn sequence_log_likelihood(model: &RnnModel, seq: &[f64]) -> Result<f64> {
    let cfg = &model.config;
    let d = cfg.input_dim;
    if seq.len() % d != 0 || seq.len() < 2 * d {
        return Err(Error::invalid("sequence needs at least two full steps"));
    }
    let steps = seq.len() / d;
    let w = model.param(DEC_W)?;
    let wm = DMatrix::from_row_slice(w.rows(), w.cols(), w.data());
    let cov = wm.transpose() * &wm * (cfg.noise_sigma * cfg.noise_sigma)
        + DMatrix::identity(d, d) * (cfg.output_sigma * cfg.output_sigma);
    let chol = Cholesky::new(cov).ok_or_else(|| Error::Singular("predictive covariance".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);

    let x = Tensor::matrix(1, seq.len(), seq.to_vec())?;
    let sg = StepGraph::new(cfg.cell);
    let mut state = State::zeros(cfg, 1);
    let mut total = 0.0;
    for t in 0..steps - 1 {
        state = sg.step(&model.params, &state, &column_block(&x, t * d, d))?;
        let mean = decode(model, &state.h)?;
        let r = DVector::from_iterator(d, (0..d).map(|i| seq[(t + 1) * d + i] - mean.data()[i]));
        let sol = chol.solve(&r);
        total += norm - 0.5 * r.dot(&sol);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("sequence log-likelihood".into()));
    }
    Ok(total)
}
