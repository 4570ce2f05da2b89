use std::path::PathBuf;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::loss::{ensure_cpc_params, LossGraph, LossInputs, Objective};
use super::model::RnnModel;
use crate::bho::{simulate, BhoParams, Init};
use crate::diffcore::{clip_global_norm, LrSchedule, Optimizer, OptimizerKind, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

/// Supplier of training batches, each `B x T*d`.
pub trait BatchSource {
    fn input_dim(&self) -> usize;
    fn seq_len(&self) -> usize;
    fn next_batch(&mut self, batch: usize, rng: &mut SimRng) -> Result<Tensor>;
}

/// Fresh stationary oscillator position sequences for every batch.
#[derive(Clone, Debug)]
pub struct BhoSource {
    pub params: BhoParams,
    pub seq_len: usize,
}

impl BatchSource for BhoSource {
    fn input_dim(&self) -> usize {
        1
    }

    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn next_batch(&mut self, batch: usize, rng: &mut SimRng) -> Result<Tensor> {
        let b = simulate(&self.params, batch, self.seq_len, rng.next_u64(), Init::Stationary)?;
        let data = (0..batch).flat_map(|i| b.positions(i)).collect();
        Tensor::matrix(batch, self.seq_len, data)
    }
}

/// Random fixed-length crops of stored sequences.
#[derive(Clone, Debug)]
pub struct SequencePool {
    seqs: Vec<Vec<f64>>,
    input_dim: usize,
    window: usize,
}

impl SequencePool {
    /// `seqs` are flattened `T_i x input_dim`; sequences shorter than
    /// `window` steps are skipped.
    pub fn new(seqs: Vec<Vec<f64>>, input_dim: usize, window: usize) -> Result<Self> {
        if input_dim == 0 || window == 0 {
            return Err(Error::invalid("input_dim and window must be >= 1"));
        }
        if let Some(s) = seqs.iter().find(|s| s.len() % input_dim != 0) {
            return Err(Error::shape("sequence_pool", format!("length {} not a multiple of {input_dim}", s.len())));
        }
        let seqs: Vec<Vec<f64>> = seqs.into_iter().filter(|s| s.len() >= window * input_dim).collect();
        if seqs.is_empty() {
            return Err(Error::invalid(format!("no sequence has at least {window} steps")));
        }
        Ok(SequencePool { seqs, input_dim, window })
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }
}

impl BatchSource for SequencePool {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn seq_len(&self) -> usize {
        self.window
    }

    fn next_batch(&mut self, batch: usize, rng: &mut SimRng) -> Result<Tensor> {
        let d = self.input_dim;
        let mut data = Vec::with_capacity(batch * self.window * d);
        for _ in 0..batch {
            let s = &self.seqs[rng.random_range(0..self.seqs.len())];
            let steps = s.len() / d;
            let start = rng.random_range(0..=steps - self.window);
            data.extend_from_slice(&s[start * d..(start + self.window) * d]);
        }
        Tensor::matrix(batch, self.window * d, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub batch: usize,
    pub steps: u64,
    pub optimizer: OptimizerKind,
    pub clip: f64,
    pub schedule: LrSchedule,
    pub train_noise: bool,
    pub seed: u64,
    pub checkpoint_every: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Batch 32, 20000 momentum steps, clip 5, lr 1e-4 decayed by 0.9
    /// every 2000 steps.
    pub fn paper() -> Self {
        TrainConfig {
            objective: Objective::Mle,
            batch: 32,
            steps: 20_000,
            optimizer: OptimizerKind::momentum(),
            clip: 5.0,
            schedule: LrSchedule::staircase(1e-4, 0.9, 2000),
            train_noise: true,
            seed: 0,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }

    /// 2000 steps with a tenfold larger initial learning rate, decayed on
    /// the same relative schedule (every 200 steps).
    pub fn desk() -> Self {
        TrainConfig {
            steps: 2000,
            schedule: LrSchedule::staircase(1e-3, 0.9, 200),
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.steps == 0 {
            return Err(Error::invalid("batch and steps must be >= 1"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("clip must be positive"));
        }
        if !(self.schedule.initial >= 0.0) {
            return Err(Error::invalid("learning rate must be >= 0"));
        }
        if let Objective::Cpc { horizon } = self.objective {
            if horizon == 0 {
                return Err(Error::invalid("contrastive horizon must be >= 1"));
            }
            if self.batch < 2 {
                return Err(Error::invalid("contrastive training needs batch >= 2"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: RnnModel,
    /// Training loss at every step.
    pub losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

/// Optimise `model` on batches from `source`. Deterministic given the
/// model seed and `tc.seed`.
pub fn train(mut model: RnnModel, source: &mut dyn BatchSource, tc: &TrainConfig) -> Result<TrainResult> {
    tc.validate()?;
    if source.input_dim() != model.config.input_dim {
        return Err(Error::shape(
            "train",
            format!("source dim {} vs model input_dim {}", source.input_dim(), model.config.input_dim),
        ));
    }
    let mut rng = rng_from_seed(derive_seed(tc.seed, 1));
    if let Objective::Cpc { horizon } = tc.objective {
        let mut init_rng = rng_from_seed(derive_seed(model.config.seed, 2));
        ensure_cpc_params(&mut model, horizon, &mut init_rng)?;
    }
    let noisy = tc.train_noise && model.config.noise_sigma > 0.0;
    let dropout = model.config.dropout_keep < 1.0;
    let graph = LossGraph::new(&model.config, tc.objective, source.seq_len(), noisy, dropout)?;
    let names = graph.param_names();
    let mut trainable: ParamSet = names
        .iter()
        .map(|n| Ok((n.clone(), model.param(n)?.clone())))
        .collect::<Result<_>>()?;
    let mut opt = Optimizer::new(tc.optimizer, tc.schedule);
    let mut losses = Vec::with_capacity(tc.steps as usize);
    let mut checkpoints = Vec::new();

    for step in 0..tc.steps {
        let x = source.next_batch(tc.batch, &mut rng)?;
        let inputs = LossInputs::sample(&model.config, x, tc.train_noise, &mut rng);
        let (loss, grads) = match graph.loss_and_grads(&trainable, &inputs) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::Divergence { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let (clipped, _) = clip_global_norm(&grads, tc.clip)
            .map_err(|_| Error::Divergence { step, loss })?;
        opt.step(&mut trainable, &clipped)?;
        losses.push(loss);

        if let (Some(every), Some(dir)) = (tc.checkpoint_every, &tc.checkpoint_dir) {
            if every > 0 && (step + 1) % every == 0 {
                for (n, t) in &trainable {
                    model.params.insert(n.clone(), t.clone());
                }
                let path = dir.join(format!("ckpt_{:06}.bin", step + 1));
                save_checkpoint(&model, &path)?;
                checkpoints.push(path);
            }
        }
    }
    for (n, t) in trainable {
        model.params.insert(n, t);
    }
    Ok(TrainResult { model, losses, checkpoints })
}
