use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Mode, Source, SweepConfig};
use super::dataset::{ingest, Dataset, Split};
use crate::bho::{simulate, window_covariances, BhoParams, Init, WindowSpec};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::gib::{ib_spectrum, FrontierCurve};
use crate::miest::{estimate_plane_point, InfoPlanePoint, PlaneConfig, PointMeta};
use crate::rng::{derive_seed, rng_from_seed};
use crate::rnn::{collect_representations, train, BhoSource, CellKind, RnnConfig, RnnModel, SequencePool};

/// An [`InfoPlanePoint`] with the run it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model_id: String,
    pub cell: String,
    pub train_noise_sigma: f64,
    pub eval_noise_sigma: f64,
    pub seed: u64,
    pub i_past_lower: f64,
    pub i_past_upper: f64,
    pub i_future_nce: f64,
    pub critic_stop_step: u64,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub dataset_id: Option<String>,
}

impl SweepRow {
    pub fn new(p: InfoPlanePoint, mode: Option<Mode>, dataset_id: Option<String>) -> Self {
        SweepRow {
            model_id: p.model_id,
            cell: p.cell,
            train_noise_sigma: p.train_noise_sigma,
            eval_noise_sigma: p.eval_noise_sigma,
            seed: p.seed,
            i_past_lower: p.i_past_lower,
            i_past_upper: p.i_past_upper,
            i_future_nce: p.i_future_nce,
            critic_stop_step: p.critic_stop_step,
            mode,
            dataset_id,
        }
    }
}

pub fn write_points_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_points_csv<R: std::io::Read>(r: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(csv_err))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, msg: e.to_string() }
}

pub fn write_frontier_csv<W: std::io::Write>(points: &[(f64, f64)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["i_past", "i_future"]).map_err(csv_err)?;
    for (x, y) in points {
        wr.write_record([format!("{x:?}"), format!("{y:?}")]).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_frontier_csv<R: std::io::Read>(r: R) -> Result<Vec<(f64, f64)>> {
    csv::Reader::from_reader(r)
        .deserialize::<(f64, f64)>()
        .map(|row| row.map_err(csv_err))
        .collect()
}

/// Analytic frontier of the oscillator windows, sampled up to 1.5x the
/// last critical point (at least 5 nats).
pub fn bho_frontier(p: &BhoParams, spec: &WindowSpec, n_points: usize) -> Result<Vec<(f64, f64)>> {
    let joint = window_covariances(p, spec)?;
    let curve = FrontierCurve::from_spectrum(&ib_spectrum(&joint)?)?;
    let max = curve.critical_points().last().map_or(5.0, |c| (1.5 * c).max(5.0));
    curve.sample(max, n_points)
}

/// Rows violating `i_future <= i_past_upper + slack`.
pub fn dpi_violations(rows: &[SweepRow], slack: f64) -> Vec<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| !(r.i_future_nce <= r.i_past_upper + slack))
        .map(|(i, _)| i)
        .collect()
}

/// Sequences (`n x total_len*d`) for the three estimation splits.
#[derive(Clone, Debug)]
pub struct EstimationData {
    pub input_dim: usize,
    pub train: Tensor,
    pub val: Tensor,
    pub test: Tensor,
}

pub fn bho_estimation_data(
    p: &BhoParams,
    spec: &WindowSpec,
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<EstimationData> {
    let (a, b, c) = sizes;
    let make = |n: usize, stream: u64| -> Result<Tensor> {
        let batch = simulate(p, n, spec.total_len, derive_seed(seed, stream), Init::Stationary)?;
        Tensor::matrix(n, spec.total_len, (0..n).flat_map(|i| batch.positions(i)).collect())
    };
    Ok(EstimationData {
        input_dim: 1,
        train: make(a, 0)?,
        val: make(b, 1)?,
        test: make(c, 2)?,
    })
}

/// The last `spec.total_len` steps of every record in each split.
pub fn dataset_estimation_data(ds: &Dataset, spec: &WindowSpec) -> Result<EstimationData> {
    let d = ds.dim;
    let width = spec.total_len * d;
    let take = |s: Split| -> Result<Tensor> {
        let rows: Vec<&[f64]> = ds
            .split(s)
            .map(|r| {
                if r.values.len() < width {
                    Err(Error::invalid(format!("record shorter than {} steps", spec.total_len)))
                } else {
                    Ok(&r.values[r.values.len() - width..])
                }
            })
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Err(Error::invalid(format!("split `{s}` is empty")));
        }
        Tensor::matrix(rows.len(), width, rows.concat())
    };
    Ok(EstimationData {
        input_dim: d,
        train: take(Split::Train)?,
        val: take(Split::Val)?,
        test: take(Split::Test)?,
    })
}

/// Representations of `model` with readout noise `sigma` on every split,
/// then one plane point.
pub fn plane_point_for_model(
    model: &RnnModel,
    data: &EstimationData,
    spec: &WindowSpec,
    sigma: f64,
    cfg: &PlaneConfig,
    meta: &PointMeta,
    seed: u64,
) -> Result<InfoPlanePoint> {
    let mut rng = rng_from_seed(seed);
    let tr = collect_representations(model, &data.train, spec, sigma, &mut rng)?;
    let va = collect_representations(model, &data.val, spec, sigma, &mut rng)?;
    let te = collect_representations(model, &data.test, spec, sigma, &mut rng)?;
    estimate_plane_point(&tr, &va, &te, cfg, meta, &mut rng)
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// `(model_id, error)` for runs that failed.
    pub failures: Vec<(String, String)>,
    pub frontier: Option<Vec<(f64, f64)>>,
}

/// Estimation data and training sequences for one data seed. Oscillator
/// training draws fresh sequences, so `train_seqs` is `None` there.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: EstimationData,
    pub train_seqs: Option<Vec<Vec<f64>>>,
    pub dataset_id: String,
}

pub fn prepare(cfg: &SweepConfig, seed: u64) -> Result<Prepared> {
    match &cfg.source {
        Source::Bho => Ok(Prepared {
            data: bho_estimation_data(
                &BhoParams::paper(),
                &cfg.spec,
                (cfg.n_est_train, cfg.n_est_val, cfg.n_est_test),
                derive_seed(cfg.data_seed, seed),
            )?,
            train_seqs: None,
            dataset_id: "bho".into(),
        }),
        Source::Dataset(path) => {
            let (ds, _) = ingest(path, cfg.spec.total_len)?;
            let train_seqs = ds.split(Split::Train).map(|r| r.values.clone()).collect();
            Ok(Prepared {
                data: dataset_estimation_data(&ds, &cfg.spec)?,
                train_seqs: Some(train_seqs),
                dataset_id: path.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned()),
            })
        }
    }
}

/// Train one model of the sweep's architecture with readout noise `sigma`.
pub fn train_model(cfg: &SweepConfig, prep: &Prepared, cell: CellKind, sigma: f64, seed: u64) -> Result<RnnModel> {
    let rc = RnnConfig::new(cell, prep.data.input_dim, cfg.hidden_dim)
        .with_noise(sigma)
        .with_seed(derive_seed(seed, 100));
    let model = RnnModel::new(rc)?;
    let tc = cfg.train_config(derive_seed(seed, 101));
    let out = match &prep.train_seqs {
        None => {
            let mut src = BhoSource {
                params: BhoParams::paper(),
                seq_len: cfg.spec.total_len,
            };
            train(model, &mut src, &tc)?
        }
        Some(seqs) => {
            let mut pool = SequencePool::new(seqs.clone(), prep.data.input_dim, cfg.spec.total_len)?;
            train(model, &mut pool, &tc)?
        }
    };
    Ok(out.model)
}

fn model_id(cell: CellKind, mode: Mode, seed: u64, sigma: f64) -> String {
    format!("{cell}-{mode}-s{seed}-n{sigma:e}")
}

struct Job {
    cell: CellKind,
    cell_idx: usize,
    sigma: f64,
    sigma_idx: usize,
    seed: u64,
    mode: Mode,
}

/// Train and evaluate every `(cell, sigma, seed, mode)` combination. Jobs
/// run in the rayon pool; each owns seeds derived from its coordinates, so
/// rows do not depend on scheduling. A failed job is reported in
/// `failures` and the sweep continues.
pub fn run_sweep(cfg: &SweepConfig, out_dir: Option<&Path>) -> Result<SweepOutput> {
    cfg.validate()?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), cfg.to_text())?;
        std::fs::write(dir.join("meta.txt"), format!("started_unix = {started}\n"))?;
    }
    let plane = cfg.plane_config();

    let prepared: Vec<Result<Prepared>> = cfg.seeds.par_iter().map(|&s| prepare(cfg, s)).collect();
    let prepared: Vec<Prepared> = prepared.into_iter().collect::<Result<_>>()?;

    // one deterministic model per (cell, seed) serves every posthoc sigma
    let posthoc: Vec<((usize, usize), Result<RnnModel>)> = if cfg.modes.contains(&Mode::PosthocNoise) {
        let keys: Vec<(usize, usize)> = (0..cfg.cells.len())
            .flat_map(|c| (0..cfg.seeds.len()).map(move |s| (c, s)))
            .collect();
        keys.par_iter()
            .map(|&(c, s)| {
                let seed = cfg.seeds[s];
                ((c, s), train_model(cfg, &prepared[s], cfg.cells[c], 0.0, derive_seed(seed, c as u64)))
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut jobs = Vec::new();
    for (cell_idx, &cell) in cfg.cells.iter().enumerate() {
        for &mode in &cfg.modes {
            for (sigma_idx, &sigma) in cfg.sigmas.iter().enumerate() {
                for &seed in &cfg.seeds {
                    jobs.push(Job { cell, cell_idx, sigma, sigma_idx, seed, mode });
                }
            }
        }
    }

    let results: Vec<(String, Result<SweepRow>)> = jobs
        .par_iter()
        .map(|job| {
            let id = model_id(job.cell, job.mode, job.seed, job.sigma);
            let s = cfg.seeds.iter().position(|&x| x == job.seed).expect("seed from list");
            let prep = &prepared[s];
            let cell_seed = derive_seed(job.seed, job.cell_idx as u64);
            let run = || -> Result<SweepRow> {
                let trained;
                let model = match job.mode {
                    Mode::TrainWithNoise => {
                        trained = train_model(cfg, prep, job.cell, job.sigma, derive_seed(cell_seed, 1000 + job.sigma_idx as u64))?;
                        &trained
                    }
                    Mode::PosthocNoise => match &posthoc.iter().find(|(k, _)| *k == (job.cell_idx, s)).expect("trained").1 {
                        Ok(m) => m,
                        Err(e) => return Err(Error::invalid(format!("deterministic model failed: {e}"))),
                    },
                };
                let meta = PointMeta {
                    model_id: id.clone(),
                    cell: job.cell.to_string(),
                    train_noise_sigma: model.config.noise_sigma,
                    seed: job.seed,
                };
                let eval_seed = derive_seed(derive_seed(cell_seed, 2000 + job.sigma_idx as u64), job.mode as u64);
                let p = plane_point_for_model(model, &prep.data, &cfg.spec, job.sigma, &plane, &meta, eval_seed)?;
                Ok(SweepRow::new(p, Some(job.mode), Some(prep.dataset_id.clone())))
            };
            (id.clone(), run())
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    let frontier = match cfg.source {
        Source::Bho => Some(bho_frontier(&BhoParams::paper(), &cfg.spec, 400)?),
        Source::Dataset(_) => None,
    };
    if let Some(dir) = out_dir {
        write_points_csv(&rows, std::fs::File::create(dir.join("points.csv"))?)?;
        if let Some(f) = &frontier {
            write_frontier_csv(f, std::fs::File::create(dir.join("frontier.csv"))?)?;
        }
        let fail_text: String = failures.iter().map(|(id, e)| format!("{id}\t{e}\n")).collect();
        std::fs::write(dir.join("failures.txt"), fail_text)?;
    }
    Ok(SweepOutput { rows, failures, frontier })
}
