use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bounds::batched_gaussian_bounds;
use super::critic::{evaluate_critic, train_critic, CriticConfig, CriticObjective, EarlyStopConfig, PairSet};
use crate::error::{Error, Result};
use crate::rnn::ReprBatch;

/// One representation placed on the information plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoPlanePoint {
    pub model_id: String,
    pub cell: String,
    pub train_noise_sigma: f64,
    pub eval_noise_sigma: f64,
    pub seed: u64,
    pub i_past_lower: f64,
    pub i_past_upper: f64,
    pub i_future_nce: f64,
    pub critic_stop_step: u64,
}

impl InfoPlanePoint {
    /// `I_past` is unbounded for a deterministic readout.
    pub fn is_unbounded(&self) -> bool {
        self.i_past_upper.is_infinite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PastEstimator {
    /// Minibatch bounds from the known Gaussian readout conditional.
    MinibatchBounds,
    /// A second critic on `(x_past, z)`; lower and upper both report its
    /// InfoNCE estimate.
    InfoNce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneConfig {
    /// Batch size `K` of the minibatch bounds.
    pub bound_batch: usize,
    pub critic: CriticConfig,
    pub stop: EarlyStopConfig,
    pub past: PastEstimator,
}

impl PlaneConfig {
    pub fn paper() -> Self {
        PlaneConfig {
            bound_batch: 4096,
            critic: CriticConfig::paper(),
            stop: EarlyStopConfig::paper(),
            past: PastEstimator::MinibatchBounds,
        }
    }

    pub fn desk() -> Self {
        PlaneConfig {
            critic: CriticConfig::desk(),
            stop: EarlyStopConfig::desk(),
            ..Self::paper()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointMeta {
    pub model_id: String,
    pub cell: String,
    pub train_noise_sigma: f64,
    pub seed: u64,
}

fn check_batch(name: &str, b: &ReprBatch, sigma: f64) -> Result<()> {
    if b.len() < 2 {
        return Err(Error::invalid(format!("{name} split needs at least two rows")));
    }
    if b.sigma != sigma {
        return Err(Error::invalid(format!("{name} split has sigma {} but test has {sigma}", b.sigma)));
    }
    Ok(())
}

/// Past information from the bounds (or a past critic) on `test`, future
/// information from an InfoNCE critic trained on `train`, early-stopped on
/// `val` and evaluated on `test`.
pub fn estimate_plane_point<R: Rng + ?Sized>(
    train: &ReprBatch,
    val: &ReprBatch,
    test: &ReprBatch,
    cfg: &PlaneConfig,
    meta: &PointMeta,
    rng: &mut R,
) -> Result<InfoPlanePoint> {
    let sigma = test.sigma;
    check_batch("train", train, sigma)?;
    check_batch("validation", val, sigma)?;
    check_batch("test", test, sigma)?;

    let pairs = |b: &ReprBatch, past: bool| {
        PairSet::new(if past { b.x_past.clone() } else { b.x_future.clone() }, b.z.clone())
    };
    let fit = train_critic(
        &pairs(train, false)?,
        &pairs(val, false)?,
        CriticObjective::InfoNce,
        &cfg.critic,
        &cfg.stop,
        rng,
    )?;
    let i_future = evaluate_critic(&fit.critic, &pairs(test, false)?, CriticObjective::InfoNce, cfg.stop.eval_batch)?;

    let (lower, upper) = match cfg.past {
        PastEstimator::MinibatchBounds if sigma == 0.0 => {
            let k = cfg.bound_batch.min(test.len()) as f64;
            (k.ln(), f64::INFINITY)
        }
        PastEstimator::MinibatchBounds => {
            let (lo, up, _) = batched_gaussian_bounds(&test.z, &test.h, sigma, cfg.bound_batch)?;
            (lo, up)
        }
        PastEstimator::InfoNce => {
            let past = train_critic(
                &pairs(train, true)?,
                &pairs(val, true)?,
                CriticObjective::InfoNce,
                &cfg.critic,
                &cfg.stop,
                rng,
            )?;
            let v = evaluate_critic(&past.critic, &pairs(test, true)?, CriticObjective::InfoNce, cfg.stop.eval_batch)?;
            (v, v)
        }
    };
    Ok(InfoPlanePoint {
        model_id: meta.model_id.clone(),
        cell: meta.cell.clone(),
        train_noise_sigma: meta.train_noise_sigma,
        eval_noise_sigma: sigma,
        seed: meta.seed,
        i_past_lower: lower,
        i_past_upper: upper,
        i_future_nce: i_future,
        critic_stop_step: fit.outcome.stop_step,
    })
}
