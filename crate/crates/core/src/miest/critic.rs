use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scores::{infonce, js, nwj, SCORE_CLAMP};
use crate::diffcore::{
    init_tensor, Axis, Graph, GraphBuilder, InitScheme, LrSchedule, NodeId, Optimizer, OptimizerKind, ParamSet,
    Tensor,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

/// Tower layout shared by both sides of the critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub layers: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl CriticConfig {
    /// `[256, 256, 32]` with relu, relu, linear.
    pub fn paper() -> Self {
        CriticConfig {
            layers: vec![256, 256, 32],
            activations: vec![Activation::Relu, Activation::Relu, Activation::None],
        }
    }

    /// Same depth at a quarter of the width.
    pub fn desk() -> Self {
        CriticConfig {
            layers: vec![64, 64, 16],
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.len() != self.activations.len() {
            return Err(Error::invalid("critic needs one activation per layer and at least one layer"));
        }
        if self.layers.contains(&0) {
            return Err(Error::invalid("critic layer widths must be >= 1"));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layers.last().expect("validated")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticObjective {
    InfoNce,
    Nwj,
    Js,
}

impl CriticObjective {
    /// The MI estimate this objective reports for a score matrix.
    pub fn estimate(self, scores: &Tensor) -> Result<f64> {
        match self {
            CriticObjective::InfoNce => infonce(scores),
            CriticObjective::Nwj => nwj(scores),
            CriticObjective::Js => js(scores),
        }
    }
}

/// Per-column affine normalisation fitted on training inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(t: &Tensor) -> Self {
        let (n, d) = t.dims();
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(t.row_slice(i)) {
                *m += v / n as f64;
            }
        }
        for i in 0..n {
            for ((s, m), v) in var.iter_mut().zip(&mean).zip(t.row_slice(i)) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        let scale = var.iter().map(|v| if v.sqrt() > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        let d = self.mean.len();
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k % d]) * self.scale[k % d])
            .collect();
        Tensor::matrix(t.rows(), d, data).expect("same shape")
    }
}

/// `f(x, z) = g(x) . k(z)` with independent MLP towers.
#[derive(Clone, Debug)]
pub struct SeparableCritic {
    pub config: CriticConfig,
    pub x_dim: usize,
    pub z_dim: usize,
    pub x_norm: Standardizer,
    pub z_norm: Standardizer,
    pub params: ParamSet,
}

fn param_name(tower: &str, kind: &str, layer: usize) -> String {
    format!("{tower}.{kind}{layer}")
}

fn tower(gb: &mut GraphBuilder, cfg: &CriticConfig, name: &str, input: NodeId) -> NodeId {
    let mut h = input;
    for (l, act) in cfg.activations.iter().enumerate() {
        let w = gb.leaf(&param_name(name, "w", l));
        let b = gb.leaf(&param_name(name, "b", l));
        h = gb.affine(h, w, b);
        h = match act {
            Activation::Relu => gb.relu(h),
            Activation::Tanh => gb.tanh(h),
            Activation::None => h,
        };
    }
    h
}

/// Score node: row `i` is `z_i` against every `x_j`.
fn score_node(gb: &mut GraphBuilder, cfg: &CriticConfig) -> NodeId {
    let x = gb.leaf("x");
    let z = gb.leaf("z");
    let ex = tower(gb, cfg, "x", x);
    let ez = tower(gb, cfg, "z", z);
    gb.matmul_t(ez, ex)
}

/// Mean of the off-diagonal entries of a `k x k` node.
fn offdiag_mean(gb: &mut GraphBuilder, m: NodeId, k: usize) -> NodeId {
    let all = gb.sum(m);
    let d = gb.diag(m);
    let dsum = gb.sum(d);
    let off = gb.sub(all, dsum);
    gb.scale(off, 1.0 / (k * (k - 1)) as f64)
}

fn loss_graph(cfg: &CriticConfig, objective: CriticObjective, k: usize) -> Graph {
    let mut gb = GraphBuilder::new();
    let s = score_node(&mut gb, cfg);
    let diag = gb.diag(s);
    let loss = match objective {
        CriticObjective::InfoNce => {
            let rows = gb.logsumexp(s, Axis::Cols);
            let a = gb.mean(rows);
            let b = gb.mean(diag);
            gb.sub(a, b)
        }
        CriticObjective::Nwj => {
            let c = gb.clamp(s, -SCORE_CLAMP, SCORE_CLAMP);
            let e = gb.exp(c);
            let off = offdiag_mean(&mut gb, e, k);
            let off = gb.scale(off, (-1.0f64).exp());
            let b = gb.mean(diag);
            gb.sub(off, b)
        }
        CriticObjective::Js => {
            let neg = gb.scale(diag, -1.0);
            let pos = gb.softplus(neg);
            let pos = gb.mean(pos);
            let sp = gb.softplus(s);
            let off = offdiag_mean(&mut gb, sp, k);
            gb.add(pos, off)
        }
    };
    gb.build(loss)
}

impl SeparableCritic {
    /// Glorot-uniform weights and He-normal biases. Standardizers start as
    /// the identity; [`train_critic`] fits them on the training split.
    pub fn new<R: Rng + ?Sized>(config: CriticConfig, x_dim: usize, z_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if x_dim == 0 || z_dim == 0 {
            return Err(Error::invalid("critic input dims must be >= 1"));
        }
        let mut params = ParamSet::new();
        for (name, d_in) in [("x", x_dim), ("z", z_dim)] {
            let mut fan_in = d_in;
            for (l, &w) in config.layers.iter().enumerate() {
                params.insert(param_name(name, "w", l), init_tensor(&[fan_in, w], InitScheme::GlorotUniform, rng)?);
                params.insert(param_name(name, "b", l), init_tensor(&[w], InitScheme::HeNormal, rng)?);
                fan_in = w;
            }
        }
        let ident = |d| Standardizer {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        };
        Ok(SeparableCritic {
            x_norm: ident(x_dim),
            z_norm: ident(z_dim),
            config,
            x_dim,
            z_dim,
            params,
        })
    }

    fn check_inputs(&self, x: &Tensor, z: &Tensor) -> Result<()> {
        if x.cols() != self.x_dim || z.cols() != self.z_dim || x.rows() != z.rows() {
            return Err(Error::shape(
                "critic",
                format!("x {:?}, z {:?} for dims ({}, {})", x.shape(), z.shape(), self.x_dim, self.z_dim),
            ));
        }
        Ok(())
    }

    fn inputs(&self, x: &Tensor, z: &Tensor) -> ParamSet {
        let mut m = ParamSet::new();
        m.insert("x".into(), self.x_norm.apply(x));
        m.insert("z".into(), self.z_norm.apply(z));
        m
    }

    /// `K x K` scores with entry `(i, j) = f(x_j, z_i)`.
    pub fn scores(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        self.check_inputs(x, z)?;
        let mut gb = GraphBuilder::new();
        let s = score_node(&mut gb, &self.config);
        let g = gb.build(s);
        let inputs = self.inputs(x, z);
        let v = g.evaluate(&(&self.params, &inputs))?;
        let out = v.output().clone();
        if !out.is_finite() {
            return Err(Error::NonFinite("critic scores".into()));
        }
        Ok(out)
    }

    /// Training loss of `objective` on one batch, with parameter gradients.
    /// InfoNCE reports `log K - I_NCE`, NWJ `-I_NWJ`, JS the discriminator
    /// loss.
    pub fn loss_and_grads(&self, x: &Tensor, z: &Tensor, objective: CriticObjective) -> Result<(f64, ParamSet)> {
        self.check_inputs(x, z)?;
        if x.rows() < 2 {
            return Err(Error::invalid("critic loss needs at least two pairs"));
        }
        let g = loss_graph(&self.config, objective, x.rows());
        let inputs = self.inputs(x, z);
        g.value_and_gradients(&(&self.params, &inputs), |n| self.params.contains_key(n))
    }
}

/// Paired samples `(x_i, z_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub x: Tensor,
    pub z: Tensor,
}

impl PairSet {
    pub fn new(x: Tensor, z: Tensor) -> Result<Self> {
        if x.rows() != z.rows() {
            return Err(Error::shape("pair_set", format!("{} x rows vs {} z rows", x.rows(), z.rows())));
        }
        Ok(PairSet { x, z })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    fn gather(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let pick = |t: &Tensor| {
            let data = idx.iter().flat_map(|&i| t.row_slice(i).iter().copied()).collect();
            Tensor::matrix(idx.len(), t.cols(), data).expect("gathered rows")
        };
        (pick(&self.x), pick(&self.z))
    }

    fn range(&self, start: usize, len: usize) -> (Tensor, Tensor) {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather(&idx)
    }
}

/// Estimate averaged over consecutive batches of `batch` pairs; a set
/// smaller than `batch` is scored as one batch.
pub fn evaluate_critic(critic: &SeparableCritic, pairs: &PairSet, objective: CriticObjective, batch: usize) -> Result<f64> {
    let n = pairs.len();
    if n < 2 || batch < 2 {
        return Err(Error::invalid("critic evaluation needs at least two pairs"));
    }
    let k = batch.min(n);
    let chunks = n / k;
    let mut total = 0.0;
    for c in 0..chunks {
        let (x, z) = pairs.range(c * k, k);
        total += objective.estimate(&critic.scores(&x, &z)?)?;
    }
    Ok(total / chunks as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub max_steps: u64,
    pub patience: u64,
    pub drop_threshold: f64,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub lr: f64,
    pub eval_every: u64,
}

impl EarlyStopConfig {
    pub fn paper() -> Self {
        EarlyStopConfig {
            max_steps: 200_000,
            patience: 10_000,
            drop_threshold: 3.0,
            train_batch: 256,
            eval_batch: 2048,
            lr: 1e-3,
            eval_every: 500,
        }
    }

    /// 4000 steps, patience 1500, validated every 250 steps.
    pub fn desk() -> Self {
        EarlyStopConfig {
            max_steps: 4000,
            patience: 1500,
            eval_every: 250,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || self.patience == 0 || self.eval_every == 0 {
            return Err(Error::invalid("max_steps, patience and eval_every must be >= 1"));
        }
        if self.train_batch < 2 || self.eval_batch < 2 {
            return Err(Error::invalid("critic batches must hold at least two pairs"));
        }
        if !(self.drop_threshold > 0.0) || !(self.lr > 0.0) {
            return Err(Error::invalid("drop_threshold and lr must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    Patience,
    Drop,
}

/// Validation-curve stopping rule. A step stops the run when the value has
/// not improved on the best for `patience` steps, when it falls
/// `drop_threshold` or more below the best, or at `max_steps`.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    max_steps: u64,
    patience: u64,
    drop_threshold: f64,
    best: Option<(u64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub improved: bool,
    pub stop: Option<StopReason>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopOutcome {
    pub stop_step: u64,
    pub best_step: u64,
    pub best_value: f64,
    pub reason: StopReason,
}

impl EarlyStopper {
    pub fn new(cfg: &EarlyStopConfig) -> Self {
        EarlyStopper {
            max_steps: cfg.max_steps,
            patience: cfg.patience,
            drop_threshold: cfg.drop_threshold,
            best: None,
        }
    }

    pub fn best(&self) -> Option<(u64, f64)> {
        self.best
    }

    pub fn observe(&mut self, step: u64, value: f64) -> Observation {
        let improved = value.is_finite() && self.best.is_none_or(|(_, b)| value > b);
        if improved {
            self.best = Some((step, value));
        }
        let stop = match self.best {
            _ if !value.is_finite() => Some(StopReason::Drop),
            Some((_, b)) if b - value >= self.drop_threshold => Some(StopReason::Drop),
            Some((s, _)) if step - s >= self.patience => Some(StopReason::Patience),
            _ if step >= self.max_steps => Some(StopReason::MaxSteps),
            _ => None,
        };
        Observation { improved, stop }
    }

    /// Run the rule over a recorded `(step, value)` curve. A curve that
    /// never triggers a stop ends at its last point with `MaxSteps`.
    pub fn replay(cfg: &EarlyStopConfig, curve: &[(u64, f64)]) -> Option<StopOutcome> {
        let mut es = EarlyStopper::new(cfg);
        let mut last = None;
        for &(step, v) in curve {
            let obs = es.observe(step, v);
            last = Some(step);
            if let Some(reason) = obs.stop {
                let (best_step, best_value) = es.best?;
                return Some(StopOutcome { stop_step: step, best_step, best_value, reason });
            }
        }
        let (best_step, best_value) = es.best?;
        Some(StopOutcome {
            stop_step: last?,
            best_step,
            best_value,
            reason: StopReason::MaxSteps,
        })
    }
}

#[derive(Clone, Debug)]
pub struct CriticFit {
    /// Parameters from the validation-best evaluation.
    pub critic: SeparableCritic,
    pub outcome: StopOutcome,
    /// `(step, validation estimate)` at every evaluation.
    pub history: Vec<(u64, f64)>,
}

/// Adam on minibatches of `train`, validated every `eval_every` steps with
/// the objective's own estimate on `val`.
pub fn train_critic<R: Rng + ?Sized>(
    train: &PairSet,
    val: &PairSet,
    objective: CriticObjective,
    config: &CriticConfig,
    es: &EarlyStopConfig,
    rng: &mut R,
) -> Result<CriticFit> {
    es.validate()?;
    if val.len() < 2 {
        return Err(Error::invalid("validation set needs at least two pairs"));
    }
    if train.len() < 2 {
        return Err(Error::invalid("training set needs at least two pairs"));
    }
    if train.x.cols() != val.x.cols() || train.z.cols() != val.z.cols() {
        return Err(Error::shape("train_critic", "train and validation widths differ"));
    }
    let mut critic = SeparableCritic::new(config.clone(), train.x.cols(), train.z.cols(), rng)?;
    critic.x_norm = Standardizer::fit(&train.x);
    critic.z_norm = Standardizer::fit(&train.z);

    let k = es.train_batch.min(train.len());
    let graph = loss_graph(config, objective, k);
    let mut opt = Optimizer::new(OptimizerKind::adam(), LrSchedule::constant(es.lr));
    let mut stopper = EarlyStopper::new(es);
    let mut history = Vec::new();
    let mut best_params = critic.params.clone();

    let mut step = 0u64;
    let reason = loop {
        if step % es.eval_every == 0 || step == es.max_steps {
            let v = evaluate_critic(&critic, val, objective, es.eval_batch).unwrap_or(f64::NAN);
            history.push((step, v));
            let obs = stopper.observe(step, v);
            if obs.improved {
                best_params = critic.params.clone();
            }
            if let Some(r) = obs.stop {
                break r;
            }
        }
        let idx = sample(rng, train.len(), k).into_vec();
        let (x, z) = train.gather(&idx);
        let inputs = critic.inputs(&x, &z);
        let (loss, grads) = graph.value_and_gradients(&(&critic.params, &inputs), |n| critic.params.contains_key(n))?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        opt.step(&mut critic.params, &grads)?;
        step += 1;
    };
    let (best_step, best_value) = stopper
        .best()
        .ok_or_else(|| Error::NonFinite("critic validation estimate".into()))?;
    critic.params = best_params;
    Ok(CriticFit {
        critic,
        outcome: StopOutcome {
            stop_step: step,
            best_step,
            best_value,
            reason,
        },
        history,
    })
}
