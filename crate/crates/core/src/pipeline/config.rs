//! Flat `key = value` sweep configuration. Lines starting with `#` are
//! comments. Lists are comma-separated.
//!
//! | key | value |
//! |-----|-------|
//! | `sigmas` | noise levels, or `logspace(lo_exp, hi_exp, n)` |
//! | `cells` | `vanilla`, `gru`, `lstm` |
//! | `seeds` | model seeds |
//! | `modes` | `train_with_noise`, `posthoc_noise` |
//! | `source` | `bho` or a dataset path |
//! | `t_past`, `t_future`, `total_len`, `split_index` | window |
//! | `scale` | `desk` or `paper` |
//! | `hidden_dim`, `train_steps`, `batch` | model and training |
//! | `objective` | `mle` or `cpc:<horizon>` |
//! | `n_est_train`, `n_est_val`, `n_est_test` | estimation set sizes (oscillator source) |
//! | `critic_steps` | critic step cap |
//! | `past_estimator` | `minibatch_bounds` or `infonce` |
//! | `data_seed` | seed for generated estimation data |

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bho::WindowSpec;
use crate::error::{Error, Result};
use crate::miest::{PastEstimator, PlaneConfig};
use crate::rnn::{CellKind, Objective, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Noise active during training and evaluation.
    TrainWithNoise,
    /// Trained deterministically, noise injected at evaluation only.
    PosthocNoise,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::TrainWithNoise => "train_with_noise",
            Mode::PosthocNoise => "posthoc_noise",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_with_noise" => Ok(Mode::TrainWithNoise),
            "posthoc_noise" | "posthoc" => Ok(Mode::PosthocNoise),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Bho,
    Dataset(PathBuf),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Bho => f.write_str("bho"),
            Source::Dataset(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub sigmas: Vec<f64>,
    pub cells: Vec<CellKind>,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub source: Source,
    pub spec: WindowSpec,
    pub scale: Scale,
    pub hidden_dim: usize,
    pub train_steps: u64,
    pub batch: usize,
    pub objective: Objective,
    pub n_est_train: usize,
    pub n_est_val: usize,
    pub n_est_test: usize,
    pub critic_steps: u64,
    pub past_estimator: PastEstimator,
    pub data_seed: u64,
}

/// `n` values with base-10 exponents evenly spaced over `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![10f64.powf(lo)],
        _ => (0..n)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

impl SweepConfig {
    /// Sixteen noise levels from 1e-3 to 10^0.5, all cells, three seeds,
    /// both modes, oscillator data.
    pub fn desk() -> Self {
        SweepConfig {
            sigmas: logspace(-3.0, 0.5, 16),
            cells: vec![CellKind::Vanilla, CellKind::Gru, CellKind::Lstm],
            seeds: vec![0, 1, 2],
            modes: vec![Mode::TrainWithNoise, Mode::PosthocNoise],
            source: Source::Bho,
            spec: WindowSpec::paper(),
            scale: Scale::Desk,
            hidden_dim: 16,
            train_steps: TrainConfig::desk().steps,
            batch: 32,
            objective: Objective::Mle,
            n_est_train: 16_384,
            n_est_val: 2048,
            n_est_test: 4096,
            critic_steps: PlaneConfig::desk().stop.max_steps,
            past_estimator: PastEstimator::MinibatchBounds,
            data_seed: 0,
        }
    }

    pub fn paper() -> Self {
        SweepConfig {
            scale: Scale::Paper,
            hidden_dim: 32,
            train_steps: TrainConfig::paper().steps,
            n_est_train: 65_536,
            critic_steps: PlaneConfig::paper().stop.max_steps,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.cells.is_empty() || self.seeds.is_empty() || self.modes.is_empty() {
            return Err(Error::invalid("sigmas, cells, seeds and modes must all be non-empty"));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("noise levels must be positive, got {s}")));
        }
        self.spec.validate()?;
        if self.hidden_dim == 0 || self.train_steps == 0 || self.batch == 0 || self.critic_steps == 0 {
            return Err(Error::invalid("hidden_dim, train_steps, batch and critic_steps must be >= 1"));
        }
        if self.n_est_train < 2 || self.n_est_val < 2 || self.n_est_test < 2 {
            return Err(Error::invalid("estimation splits need at least two sequences each"));
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let base = match self.scale {
            Scale::Desk => TrainConfig::desk(),
            Scale::Paper => TrainConfig::paper(),
        };
        TrainConfig {
            objective: self.objective,
            batch: self.batch,
            steps: self.train_steps,
            seed,
            ..base
        }
    }

    pub fn plane_config(&self) -> PlaneConfig {
        let mut p = match self.scale {
            Scale::Desk => PlaneConfig::desk(),
            Scale::Paper => PlaneConfig::paper(),
        };
        p.stop.max_steps = self.critic_steps;
        p.past = self.past_estimator;
        p
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got `{line}`"),
            })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(self)
    }

    /// Parse a config file; `scale` (if present) selects the base preset.
    pub fn parse(text: &str) -> Result<Self> {
        let paper = text.lines().any(|l| {
            l.split_once('=')
                .is_some_and(|(k, v)| k.trim() == "scale" && v.trim() == "paper")
        });
        let base = if paper { Self::paper() } else { Self::desk() };
        let cfg = base.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn list<T: FromStr>(v: &str) -> Result<Vec<T>> {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::invalid(format!("bad list item `{s}`"))))
                .collect()
        }
        fn one<T: FromStr>(v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::invalid(format!("bad value `{v}`")))
        }
        match key {
            "sigmas" => {
                self.sigmas = if let Some(args) = value.strip_prefix("logspace(").and_then(|s| s.strip_suffix(')')) {
                    let parts: Vec<&str> = args.split(',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(Error::invalid("logspace takes (lo_exp, hi_exp, n)"));
                    }
                    logspace(one(parts[0])?, one(parts[1])?, one(parts[2])?)
                } else {
                    list(value)?
                }
            }
            "cells" => self.cells = list(value)?,
            "seeds" => self.seeds = list(value)?,
            "modes" => self.modes = list(value)?,
            "source" => {
                self.source = if value == "bho" {
                    Source::Bho
                } else {
                    Source::Dataset(PathBuf::from(value))
                }
            }
            "t_past" => self.spec.t_past = one(value)?,
            "t_future" => self.spec.t_future = one(value)?,
            "total_len" => self.spec.total_len = one(value)?,
            "split_index" => self.spec.split_index = one(value)?,
            "scale" => {
                self.scale = match value {
                    "desk" => Scale::Desk,
                    "paper" => Scale::Paper,
                    other => return Err(Error::invalid(format!("unknown scale `{other}`"))),
                }
            }
            "hidden_dim" => self.hidden_dim = one(value)?,
            "train_steps" => self.train_steps = one(value)?,
            "batch" => self.batch = one(value)?,
            "objective" => {
                self.objective = match value.split_once(':') {
                    None if value == "mle" => Objective::Mle,
                    Some(("cpc", h)) => Objective::Cpc { horizon: one(h)? },
                    _ => return Err(Error::invalid(format!("unknown objective `{value}`"))),
                }
            }
            "n_est_train" => self.n_est_train = one(value)?,
            "n_est_val" => self.n_est_val = one(value)?,
            "n_est_test" => self.n_est_test = one(value)?,
            "critic_steps" => self.critic_steps = one(value)?,
            "past_estimator" => {
                self.past_estimator = match value {
                    "minibatch_bounds" => PastEstimator::MinibatchBounds,
                    "infonce" => PastEstimator::InfoNce,
                    other => return Err(Error::invalid(format!("unknown past estimator `{other}`"))),
                }
            }
            "data_seed" => self.data_seed = one(value)?,
            other => return Err(Error::invalid(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// The resolved configuration in the same `key = value` form.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(", ");
        let objective = match self.objective {
            Objective::Mle => "mle".to_string(),
            Objective::Cpc { horizon } => format!("cpc:{horizon}"),
        };
        let lines = [
            ("sigmas", join(self.sigmas.iter().map(|s| format!("{s:?}")).collect())),
            ("cells", join(self.cells.iter().map(|c| c.to_string()).collect())),
            ("seeds", join(self.seeds.iter().map(|s| s.to_string()).collect())),
            ("modes", join(self.modes.iter().map(|m| m.to_string()).collect())),
            ("source", self.source.to_string()),
            ("t_past", self.spec.t_past.to_string()),
            ("t_future", self.spec.t_future.to_string()),
            ("total_len", self.spec.total_len.to_string()),
            ("split_index", self.spec.split_index.to_string()),
            (
                "scale",
                match self.scale {
                    Scale::Desk => "desk".into(),
                    Scale::Paper => "paper".into(),
                },
            ),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("train_steps", self.train_steps.to_string()),
            ("batch", self.batch.to_string()),
            ("objective", objective),
            ("n_est_train", self.n_est_train.to_string()),
            ("n_est_val", self.n_est_val.to_string()),
            ("n_est_test", self.n_est_test.to_string()),
            ("critic_steps", self.critic_steps.to_string()),
            (
                "past_estimator",
                match self.past_estimator {
                    PastEstimator::MinibatchBounds => "minibatch_bounds".into(),
                    PastEstimator::InfoNce => "infonce".into(),
                },
            ),
            ("data_seed", self.data_seed.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
