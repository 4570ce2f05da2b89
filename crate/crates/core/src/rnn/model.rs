use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cell::{self, CellKind};
use crate::diffcore::{init_tensor, matmul, Graph, GraphBuilder, InitScheme, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal, rng_from_seed};

/// Architecture and noise settings. The hidden activation is always tanh,
/// which bounds `h` and therefore caps `I(Z; X_past)` for `noise_sigma > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub noise_sigma: f64,
    pub output_sigma: f64,
    pub dropout_keep: f64,
    pub seed: u64,
}

impl RnnConfig {
    pub fn new(cell: CellKind, input_dim: usize, hidden_dim: usize) -> Self {
        RnnConfig {
            cell,
            input_dim,
            hidden_dim,
            noise_sigma: 0.0,
            output_sigma: 0.1,
            dropout_keep: 1.0,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("input_dim and hidden_dim must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.output_sigma > 0.0) || !self.output_sigma.is_finite() {
            return Err(Error::invalid(format!("output_sigma must be > 0, got {}", self.output_sigma)));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::invalid(format!("dropout_keep must be in (0, 1], got {}", self.dropout_keep)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnModel {
    pub config: RnnConfig,
    pub params: ParamSet,
}

pub const DEC_W: &str = "dec.w";
pub const DEC_B: &str = "dec.b";

/// Expected `(name, shape)` of every cell and decoder parameter.
pub fn param_shapes(cfg: &RnnConfig) -> Vec<(String, Vec<usize>)> {
    let (d, h) = (cfg.input_dim, cfg.hidden_dim);
    let mut out = Vec::new();
    for g in cfg.cell.gates() {
        out.push((cell::wx(g), vec![d, h]));
        out.push((cell::wh(g), vec![h, h]));
        out.push((cell::bias(g), vec![h]));
    }
    out.push((DEC_W.to_string(), vec![h, d]));
    out.push((DEC_B.to_string(), vec![d]));
    out
}

impl RnnModel {
    /// Glorot-uniform weights and zero biases, drawn from `config.seed`.
    pub fn new(config: RnnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(derive_seed(config.seed, 0));
        let mut params = ParamSet::new();
        for (name, shape) in param_shapes(&config) {
            let scheme = if shape.len() == 1 {
                InitScheme::Zeros
            } else {
                InitScheme::GlorotUniform
            };
            params.insert(name, init_tensor(&shape, scheme, &mut rng)?);
        }
        Ok(RnnModel { config, params })
    }

    /// Every parameter zero.
    pub fn zeros(config: RnnConfig) -> Result<Self> {
        config.validate()?;
        let params = param_shapes(&config)
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(&s)))
            .collect();
        Ok(RnnModel { config, params })
    }

    /// Build from explicit tensors, checking names and shapes.
    pub fn from_params(config: RnnConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        for (name, shape) in param_shapes(&config) {
            match params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::shape(
                        "rnn_model",
                        format!("`{name}` has shape {:?}, expected {shape:?}", t.shape()),
                    ))
                }
                None => return Err(Error::shape("rnn_model", format!("missing `{name}`"))),
            }
        }
        if let Some((n, _)) = params.iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::NonFinite(format!("parameter `{n}`")));
        }
        Ok(RnnModel { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingLeaf(name.to_string()))
    }
}

/// Recurrent state for a batch: `h` is `B x H`, `c` only for LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub h: Tensor,
    pub c: Option<Tensor>,
}

impl State {
    pub fn zeros(cfg: &RnnConfig, batch: usize) -> Self {
        let h = Tensor::zeros(&[batch, cfg.hidden_dim]);
        let c = cfg.cell.has_cell_state().then(|| h.clone());
        State { h, c }
    }
}

/// Single-step graph reused across time steps during inference.
pub(crate) struct StepGraph {
    graph: Graph,
    h_out: usize,
    c_out: Option<usize>,
}

impl StepGraph {
    pub(crate) fn new(kind: CellKind) -> Self {
        let mut gb = GraphBuilder::new();
        let x = gb.leaf("x");
        let h = gb.leaf("h");
        let c = kind.has_cell_state().then(|| gb.leaf("c"));
        let (h2, c2) = cell::step(&mut gb, kind, x, h, c);
        let out = match c2 {
            Some(c2) => gb.concat(vec![h2, c2], crate::diffcore::Axis::Cols),
            None => h2,
        };
        StepGraph {
            graph: gb.build(out),
            h_out: h2,
            c_out: c2,
        }
    }

    pub(crate) fn step(&self, params: &ParamSet, state: &State, x: &Tensor) -> Result<State> {
        let mut extra: BTreeMap<String, Tensor> = BTreeMap::new();
        extra.insert("x".into(), x.clone());
        extra.insert("h".into(), state.h.clone());
        if let Some(c) = &state.c {
            extra.insert("c".into(), c.clone());
        }
        let v = self.graph.evaluate(&(&extra, params))?;
        Ok(State {
            h: v.get(self.h_out).clone(),
            c: self.c_out.map(|id| v.get(id).clone()),
        })
    }
}

fn check_input(model: &RnnModel, state: &State, x: &Tensor) -> Result<()> {
    let cfg = &model.config;
    if x.cols() != cfg.input_dim || state.h.cols() != cfg.hidden_dim || x.rows() != state.h.rows() {
        return Err(Error::shape(
            "cell_step",
            format!(
                "x {:?}, h {:?} for input_dim {} hidden_dim {}",
                x.dims(),
                state.h.dims(),
                cfg.input_dim,
                cfg.hidden_dim
            ),
        ));
    }
    if cfg.cell.has_cell_state() != state.c.is_some() {
        return Err(Error::shape("cell_step", "cell state presence does not match cell kind"));
    }
    Ok(())
}

/// One deterministic recurrent step for a batch of inputs `x` (`B x d`).
pub fn cell_step(model: &RnnModel, state: &State, x: &Tensor) -> Result<State> {
    check_input(model, state, x)?;
    StepGraph::new(model.config.cell).step(&model.params, state, x)
}

/// Deterministic hidden states after each of the first `steps` inputs of
/// `x` (`B x T*d`). Returns one state per step.
pub fn run_hidden(model: &RnnModel, x: &Tensor, steps: usize) -> Result<Vec<State>> {
    let d = model.config.input_dim;
    let (b, cols) = x.dims();
    if cols % d != 0 || steps * d > cols {
        return Err(Error::shape(
            "run_hidden",
            format!("{cols} columns cannot hold {steps} steps of dim {d}"),
        ));
    }
    let sg = StepGraph::new(model.config.cell);
    let mut state = State::zeros(&model.config, b);
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = column_block(x, t * d, d);
        check_input(model, &state, &xt)?;
        state = sg.step(&model.params, &state, &xt)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Columns `start..start+len` of a matrix.
pub(crate) fn column_block(x: &Tensor, start: usize, len: usize) -> Tensor {
    let (r, _) = x.dims();
    let mut data = Vec::with_capacity(r * len);
    for i in 0..r {
        data.extend_from_slice(&x.row_slice(i)[start..start + len]);
    }
    Tensor::matrix(r, len, data).expect("consistent block")
}

/// `z = h + sigma * eps`.
pub fn noisy_readout<R: Rng + ?Sized>(h: &Tensor, sigma: f64, rng: &mut R) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(h.clone());
    }
    let data = h.data().iter().map(|&m| m + sigma * normal(rng)).collect();
    Tensor::new(h.shape().to_vec(), data)
}

/// Row-wise `log N(z; h, sigma^2 I)`.
pub fn readout_log_density(z: &Tensor, h: &Tensor, sigma: f64) -> Result<Vec<f64>> {
    gaussian_rows(z, h, sigma)
}

pub(crate) fn gaussian_rows(x: &Tensor, mean: &Tensor, sigma: f64) -> Result<Vec<f64>> {
    if !x.same_dims(mean) {
        return Err(Error::shape("gaussian_log_density", format!("{:?} vs {:?}", x.dims(), mean.dims())));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid("density needs sigma > 0"));
    }
    let (r, c) = x.dims();
    let norm = -0.5 * c as f64 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
    Ok((0..r)
        .map(|i| {
            let sq: f64 = x
                .row_slice(i)
                .iter()
                .zip(mean.row_slice(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            norm - 0.5 * sq / (sigma * sigma)
        })
        .collect())
}

/// Decoder mean `z W + b` for a batch `z` (`B x H`).
pub fn decode(model: &RnnModel, z: &Tensor) -> Result<Tensor> {
    let w = model.param(DEC_W)?;
    let b = model.param(DEC_B)?;
    let mut m = matmul(z, w)?;
    let d = b.len();
    for (i, v) in m.data_mut().iter_mut().enumerate() {
        *v += b.data()[i % d];
    }
    Ok(m)
}

/// Row-wise `log N(x_next; decode(z), sigma_o^2 I)`.
pub fn decoder_log_density(model: &RnnModel, z: &Tensor, x_next: &Tensor) -> Result<Vec<f64>> {
    let mean = decode(model, z)?;
    gaussian_rows(x_next, &mean, model.config.output_sigma)
}
