use rayon::prelude::*;

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rnn::{sequence_log_likelihood, train, RnnModel, SequencePool, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    /// `log p(x | C = k)`.
    pub log_likelihoods: Vec<f64>,
    pub probs: Vec<f64>,
    pub argmax: usize,
}

/// Normalise `log p(x | k) + log p(k)` into a posterior. `prior` must sum
/// to one; `None` means uniform.
pub fn posterior_from_log_likelihoods(log_lik: &[f64], prior: Option<&[f64]>) -> Result<Posterior> {
    let n = log_lik.len();
    if n == 0 {
        return Err(Error::invalid("no classes"));
    }
    let log_prior: Vec<f64> = match prior {
        None => vec![-(n as f64).ln(); n],
        Some(p) => {
            if p.len() != n {
                return Err(Error::shape("naive_bayes", format!("{} priors for {n} classes", p.len())));
            }
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("prior must be non-negative and sum to 1, sums to {sum}")));
            }
            p.iter().map(|v| v.ln()).collect()
        }
    };
    if log_lik.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("class log-likelihood".into()));
    }
    let joint: Vec<f64> = log_lik.iter().zip(&log_prior).map(|(a, b)| a + b).collect();
    let top = joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::NonFinite("class evidence".into()));
    }
    let w: Vec<f64> = joint.iter().map(|j| (j - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let probs: Vec<f64> = w.iter().map(|v| v / total).collect();
    let argmax = joint
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > joint[best] { i } else { best });
    Ok(Posterior {
        log_likelihoods: log_lik.to_vec(),
        probs,
        argmax,
    })
}

/// Posterior over classes from class-conditional models, using each
/// model's exact sequence log-likelihood.
pub fn naive_bayes(models: &[RnnModel], x: &[f64], prior: Option<&[f64]>) -> Result<Posterior> {
    let d = models
        .first()
        .ok_or_else(|| Error::invalid("no class models"))?
        .config
        .input_dim;
    if models.iter().any(|m| m.config.input_dim != d) {
        return Err(Error::invalid("class models disagree on input_dim"));
    }
    let ll: Vec<f64> = models
        .iter()
        .map(|m| sequence_log_likelihood(m, x))
        .collect::<Result<_>>()?;
    posterior_from_log_likelihoods(&ll, prior)
}

/// One model per label, trained on that label's training sequences.
/// `make` builds the untrained model for a class index.
pub fn train_class_models(
    ds: &Dataset,
    window: usize,
    tc: &TrainConfig,
    make: &(dyn Fn(usize) -> Result<RnnModel> + Sync),
) -> Result<Vec<(String, RnnModel)>> {
    let labels = ds.labels();
    if labels.len() < 2 {
        return Err(Error::invalid("classification needs at least two labels"));
    }
    labels
        .par_iter()
        .enumerate()
        .map(|(k, label)| {
            let seqs: Vec<Vec<f64>> = ds
                .split(Split::Train)
                .filter(|r| r.label.as_deref() == Some(label))
                .map(|r| r.values.clone())
                .collect();
            let mut pool = SequencePool::new(seqs, ds.dim, window)?;
            let out = train(make(k)?, &mut pool, tc)?;
            Ok((label.clone(), out.model))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyReport {
    /// `(true label, predicted label, posterior)` per test record.
    pub predictions: Vec<(String, String, Posterior)>,
    pub accuracy: f64,
}

/// Uniform-prior classification of every labelled record in `split`.
pub fn classify_split(models: &[(String, RnnModel)], ds: &Dataset, split: Split) -> Result<ClassifyReport> {
    let nets: Vec<RnnModel> = models.iter().map(|(_, m)| m.clone()).collect();
    let preds: Vec<(String, String, Posterior)> = ds
        .split(split)
        .filter_map(|r| r.label.clone().map(|l| (l, r)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(label, r)| {
            let p = naive_bayes(&nets, &r.values, None)?;
            Ok((label.clone(), models[p.argmax].0.clone(), p))
        })
        .collect::<Result<_>>()?;
    if preds.is_empty() {
        return Err(Error::invalid(format!("no labelled records in split `{split}`")));
    }
    let correct = preds.iter().filter(|(t, p, _)| t == p).count();
    Ok(ClassifyReport {
        accuracy: correct as f64 / preds.len() as f64,
        predictions: preds,
    })
}
