use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cell;
use super::model::{RnnConfig, RnnModel, DEC_B, DEC_W};
use crate::diffcore::{init_tensor, Axis, Graph, GraphBuilder, InitScheme, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::normal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    /// Gaussian next-step negative log-likelihood.
    Mle,
    /// Contrastive prediction of the inputs `1..=horizon` steps ahead.
    Cpc { horizon: usize },
}

const INPUT_LEAVES: [&str; 5] = ["x", "h0", "c0", "eps", "mask"];

pub(crate) fn is_input_leaf(name: &str) -> bool {
    INPUT_LEAVES.contains(&name)
}

pub const CPC_WU: &str = "cpc.wu";

pub fn cpc_offset_param(k: usize) -> String {
    format!("cpc.w{k:02}")
}

/// Embedding width of the contrastive readouts; equal to the hidden width.
pub fn cpc_param_shapes(cfg: &RnnConfig, horizon: usize) -> Vec<(String, Vec<usize>)> {
    let e = cfg.hidden_dim;
    let mut out = vec![(CPC_WU.to_string(), vec![cfg.input_dim, e])];
    for k in 1..=horizon {
        out.push((cpc_offset_param(k), vec![cfg.hidden_dim, e]));
    }
    out
}

/// Add any missing contrastive readout weights (Glorot uniform).
pub fn ensure_cpc_params<R: Rng + ?Sized>(model: &mut RnnModel, horizon: usize, rng: &mut R) -> Result<()> {
    for (name, shape) in cpc_param_shapes(&model.config, horizon) {
        match model.params.get(&name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(_) => return Err(Error::shape("cpc", format!("`{name}` has the wrong shape"))),
            None => {
                let t = init_tensor(&shape, InitScheme::GlorotUniform, rng)?;
                model.params.insert(name, t);
            }
        }
    }
    Ok(())
}

/// Per-batch random inputs of a loss evaluation. `eps` is already scaled
/// by sigma; `mask` already carries the inverted-dropout factor.
#[derive(Clone, Debug, PartialEq)]
pub struct LossInputs {
    pub x: Tensor,
    pub eps: Option<Tensor>,
    pub mask: Option<Tensor>,
}

impl LossInputs {
    pub fn deterministic(x: Tensor) -> Self {
        LossInputs { x, eps: None, mask: None }
    }

    /// Training-mode inputs: readout noise when `train_noise` and sigma > 0,
    /// a dropout mask when `dropout_keep < 1`.
    pub fn sample<R: Rng + ?Sized>(cfg: &RnnConfig, x: Tensor, train_noise: bool, rng: &mut R) -> Self {
        let b = x.rows();
        let t = x.cols() / cfg.input_dim;
        let n = b * t * cfg.hidden_dim;
        let sigma = cfg.noise_sigma;
        let eps = (train_noise && sigma > 0.0).then(|| {
            let data = (0..n).map(|_| sigma * normal(rng)).collect();
            Tensor::matrix(b, t * cfg.hidden_dim, data).expect("sized")
        });
        let keep = cfg.dropout_keep;
        let mask = (keep < 1.0).then(|| {
            let data = (0..n)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            Tensor::matrix(b, t * cfg.hidden_dim, data).expect("sized")
        });
        LossInputs { x, eps, mask }
    }
}

/// Unrolled training objective for sequences of a fixed length.
pub struct LossGraph {
    graph: Graph,
    cfg: RnnConfig,
    objective: Objective,
    seq_len: usize,
    noisy: bool,
    dropout: bool,
    offset_nodes: Vec<NodeId>,
}

fn sum_all(gb: &mut GraphBuilder, xs: &[NodeId]) -> NodeId {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = gb.add(acc, x);
    }
    acc
}

impl LossGraph {
    pub fn new(
        cfg: &RnnConfig,
        objective: Objective,
        seq_len: usize,
        noisy: bool,
        dropout: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        match objective {
            Objective::Mle if seq_len < 2 => {
                return Err(Error::invalid("likelihood training needs sequences of length >= 2"))
            }
            Objective::Cpc { horizon } if horizon == 0 || seq_len <= horizon => {
                return Err(Error::invalid(format!(
                    "contrastive horizon {horizon} needs 1 <= horizon < sequence length {seq_len}"
                )))
            }
            _ => {}
        }
        let (d, hd) = (cfg.input_dim, cfg.hidden_dim);
        let mut gb = GraphBuilder::new();
        let x = gb.leaf("x");
        let mut h = gb.leaf("h0");
        let mut c = cfg.cell.has_cell_state().then(|| gb.leaf("c0"));
        let eps = noisy.then(|| gb.leaf("eps"));
        let mask = dropout.then(|| gb.leaf("mask"));

        let xs: Vec<NodeId> = (0..seq_len).map(|t| gb.slice(x, Axis::Cols, t * d, d)).collect();
        let mut readouts = Vec::with_capacity(seq_len - 1);
        for (t, &xt) in xs.iter().enumerate().take(seq_len - 1) {
            let (h2, c2) = cell::step(&mut gb, cfg.cell, xt, h, c);
            h = h2;
            c = c2;
            let mut r = h;
            if let Some(m) = mask {
                let mt = gb.slice(m, Axis::Cols, t * hd, hd);
                r = gb.mul(r, mt);
            }
            if let Some(e) = eps {
                let et = gb.slice(e, Axis::Cols, t * hd, hd);
                r = gb.add(r, et);
            }
            readouts.push(r);
        }

        let mut offset_nodes = Vec::new();
        let loss = match objective {
            Objective::Mle => {
                let w = gb.leaf(DEC_W);
                let b = gb.leaf(DEC_B);
                let terms: Vec<NodeId> = readouts
                    .iter()
                    .enumerate()
                    .map(|(t, &r)| {
                        let mean = gb.affine(r, w, b);
                        let ld = gb.gaussian_log_density(xs[t + 1], mean, cfg.output_sigma);
                        gb.mean(ld)
                    })
                    .collect();
                let total = sum_all(&mut gb, &terms);
                gb.scale(total, -1.0 / terms.len() as f64)
            }
            Objective::Cpc { horizon } => {
                let wu = gb.leaf(CPC_WU);
                let targets: Vec<NodeId> = xs.iter().map(|&xt| gb.matmul(xt, wu)).collect();
                for k in 1..=horizon {
                    let wk = gb.leaf(&cpc_offset_param(k));
                    let terms: Vec<NodeId> = (0..seq_len - k)
                        .map(|t| {
                            let a = gb.matmul(readouts[t], wk);
                            let s = gb.matmul_t(a, targets[t + k]);
                            let lse = gb.logsumexp(s, Axis::Cols);
                            let ml = gb.mean(lse);
                            let dg = gb.diag(s);
                            let md = gb.mean(dg);
                            gb.sub(ml, md)
                        })
                        .collect();
                    let total = sum_all(&mut gb, &terms);
                    let ce = gb.scale(total, 1.0 / terms.len() as f64);
                    offset_nodes.push(ce);
                }
                let total = sum_all(&mut gb, &offset_nodes);
                gb.scale(total, 1.0 / horizon as f64)
            }
        };
        Ok(LossGraph {
            graph: gb.build(loss),
            cfg: cfg.clone(),
            objective,
            seq_len,
            noisy,
            dropout,
            offset_nodes,
        })
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Names of the parameters the loss depends on.
    pub fn param_names(&self) -> Vec<String> {
        self.graph
            .leaf_names()
            .filter(|n| !is_input_leaf(n))
            .map(str::to_string)
            .collect()
    }

    fn input_leaves(&self, inputs: &LossInputs) -> Result<BTreeMap<String, Tensor>> {
        let (b, cols) = inputs.x.dims();
        if cols != self.seq_len * self.cfg.input_dim {
            return Err(Error::shape(
                "rnn_loss",
                format!(
                    "batch has {cols} columns, expected {} steps of dim {}",
                    self.seq_len, self.cfg.input_dim
                ),
            ));
        }
        if matches!(self.objective, Objective::Cpc { .. }) && b < 2 {
            return Err(Error::invalid("contrastive loss needs a batch of at least 2"));
        }
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), inputs.x.clone());
        let zeros = Tensor::zeros(&[b, self.cfg.hidden_dim]);
        if self.cfg.cell.has_cell_state() {
            m.insert("c0".to_string(), zeros.clone());
        }
        m.insert("h0".to_string(), zeros);
        let want = [b, self.seq_len * self.cfg.hidden_dim];
        for (name, on, t) in [
            ("eps", self.noisy, &inputs.eps),
            ("mask", self.dropout, &inputs.mask),
        ] {
            match (on, t) {
                (true, Some(t)) if t.shape() == want => {
                    m.insert(name.to_string(), t.clone());
                }
                (true, Some(t)) => {
                    return Err(Error::shape("rnn_loss", format!("`{name}` {:?}, expected {want:?}", t.shape())))
                }
                (true, None) => return Err(Error::MissingLeaf(name.to_string())),
                (false, _) => {}
            }
        }
        Ok(m)
    }

    pub fn loss(&self, params: &ParamSet, inputs: &LossInputs) -> Result<f64> {
        let leaves = self.input_leaves(inputs)?;
        self.graph.evaluate(&(&leaves, params))?.output().item()
    }

    /// Loss and gradients with respect to the parameters it depends on.
    pub fn loss_and_grads(&self, params: &ParamSet, inputs: &LossInputs) -> Result<(f64, ParamSet)> {
        let leaves = self.input_leaves(inputs)?;
        self.graph
            .value_and_gradients(&(&leaves, params), |n| !is_input_leaf(n))
    }

    /// Contrastive cross-entropy per offset `k = 1..=horizon`;
    /// `log B - ce_k` is the InfoNCE estimate at that offset.
    pub fn offset_cross_entropies(&self, params: &ParamSet, inputs: &LossInputs) -> Result<Vec<f64>> {
        if self.offset_nodes.is_empty() {
            return Err(Error::invalid("offset estimates need the contrastive objective"));
        }
        let leaves = self.input_leaves(inputs)?;
        let v = self.graph.evaluate(&(&leaves, params))?;
        self.offset_nodes.iter().map(|&id| v.get(id).item()).collect()
    }
}

fn seq_len_of(model: &RnnModel, batch: &Tensor) -> Result<usize> {
    let d = model.config.input_dim;
    if batch.cols() % d != 0 {
        return Err(Error::shape("rnn_loss", format!("{} columns for input_dim {d}", batch.cols())));
    }
    Ok(batch.cols() / d)
}

/// Mean per-step Gaussian NLL of a batch (`B x T*d`), training mode.
pub fn mle_loss<R: Rng + ?Sized>(model: &RnnModel, batch: &Tensor, train_noise: bool, rng: &mut R) -> Result<f64> {
    let t = seq_len_of(model, batch)?;
    let inputs = LossInputs::sample(&model.config, batch.clone(), train_noise, rng);
    let g = LossGraph::new(&model.config, Objective::Mle, t, inputs.eps.is_some(), inputs.mask.is_some())?;
    g.loss(&model.params, &inputs)
}

/// Contrastive loss, `mean_k (log B - I_NCE(k))`.
pub fn cpc_loss<R: Rng + ?Sized>(
    model: &RnnModel,
    batch: &Tensor,
    horizon: usize,
    train_noise: bool,
    rng: &mut R,
) -> Result<f64> {
    let t = seq_len_of(model, batch)?;
    let inputs = LossInputs::sample(&model.config, batch.clone(), train_noise, rng);
    let g = LossGraph::new(
        &model.config,
        Objective::Cpc { horizon },
        t,
        inputs.eps.is_some(),
        inputs.mask.is_some(),
    )?;
    g.loss(&model.params, &inputs)
}

/// InfoNCE estimate per offset on a batch, evaluated deterministically.
pub fn cpc_offset_infonce(model: &RnnModel, batch: &Tensor, horizon: usize) -> Result<Vec<f64>> {
    let t = seq_len_of(model, batch)?;
    let g = LossGraph::new(&model.config, Objective::Cpc { horizon }, t, false, false)?;
    let log_b = (batch.rows() as f64).ln();
    Ok(g.offset_cross_entropies(&model.params, &LossInputs::deterministic(batch.clone()))?
        .into_iter()
        .map(|ce| log_b - ce)
        .collect())
}
