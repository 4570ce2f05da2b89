use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter (or gradient) tensors, ordered by name.
pub type ParamSet = BTreeMap<String, Tensor>;

/// Global L2 norm over every tensor in the set.
pub fn global_norm(grads: &ParamSet) -> f64 {
    grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescale all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the clipped set and the norm before clipping.
pub fn clip_global_norm(grads: &ParamSet, max_norm: f64) -> Result<(ParamSet, f64)> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid(format!("max_norm must be positive, got {max_norm}")));
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient `{name}`")));
    }
    let norm = global_norm(grads);
    if norm <= max_norm {
        return Ok((grads.clone(), norm));
    }
    let s = max_norm / norm;
    let clipped = grads
        .iter()
        .map(|(k, g)| (k.clone(), g.map(|x| x * s)))
        .collect();
    Ok((clipped, norm))
}

/// Staircase exponential decay: `lr0 * decay_rate^floor(step / decay_steps)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial: lr,
            decay_rate: 1.0,
            decay_steps: 1,
        }
    }

    pub fn staircase(initial: f64, decay_rate: f64, decay_steps: u64) -> Self {
        LrSchedule {
            initial,
            decay_rate,
            decay_steps,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        let k = step / self.decay_steps.max(1);
        self.initial * self.decay_rate.powi(k as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Classical (heavy-ball) momentum.
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn momentum() -> Self {
        OptimizerKind::Momentum { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer with per-parameter slots.
///
/// Momentum keeps one velocity slot; Adam keeps first and second moments.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    schedule: LrSchedule,
    slots: BTreeMap<String, Vec<Tensor>>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, schedule: LrSchedule) -> Self {
        Optimizer {
            kind,
            schedule,
            slots: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.schedule.at(self.step)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Apply one update. Every parameter must have a same-shaped gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::shape("optimizer", format!("no gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("`{name}`: param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        let lr = self.schedule.at(self.step);
        let t = self.step + 1;
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let n_slots = match self.kind {
                OptimizerKind::Momentum { .. } => 1,
                OptimizerKind::Adam { .. } => 2,
            };
            let slots = self
                .slots
                .entry(name.clone())
                .or_insert_with(|| vec![Tensor::zeros(p.shape()); n_slots]);
            match self.kind {
                OptimizerKind::Momentum { momentum } => {
                    let v = slots[0].data_mut();
                    for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v).zip(g.data()) {
                        *vv = momentum * *vv + gv;
                        *pv -= lr * *vv;
                    }
                }
                OptimizerKind::Adam {
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    let c1 = 1.0 - beta1.powi(t as i32);
                    let c2 = 1.0 - beta2.powi(t as i32);
                    let (m_slot, v_slot) = slots.split_at_mut(1);
                    let m = m_slot[0].data_mut();
                    let v = v_slot[0].data_mut();
                    for (((pv, mv), vv), gv) in
                        p.data_mut().iter_mut().zip(m).zip(v).zip(g.data())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let mh = *mv / c1;
                        let vh = *vv / c2;
                        *pv -= lr * mh / (vh.sqrt() + epsilon);
                    }
                }
            }
        }
        self.step = t;
        Ok(())
    }
}
