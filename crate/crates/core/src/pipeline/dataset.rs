//! Line-delimited sequence files. Each line holds TAB-separated fields:
//!
//! ```text
//! split <TAB> label <TAB> v_1,...,v_d <TAB> v_1,...,v_d ...
//! ```
//!
//! `split` is `train`, `val` or `test`; `label` may be empty. Every step
//! after the label is one comma-separated vector of the same dimension.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bho::TrajectoryBatch;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub split: Split,
    pub label: Option<String>,
    /// `steps x dim`, row-major.
    pub values: Vec<f64>,
}

impl Record {
    pub fn steps(&self, dim: usize) -> usize {
        self.values.len() / dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub records: Vec<Record>,
}

/// Counts from [`ingest`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub accepted: usize,
    /// Records with fewer steps than required.
    pub too_short: usize,
}

fn parse_line(line: &str, lineno: usize, dim: &mut Option<usize>) -> Result<Record> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let mut fields = line.split('\t');
    let split: Split = fields
        .next()
        .unwrap_or("")
        .trim()
        .parse()
        .map_err(|e: Error| err(e.to_string()))?;
    let label = fields.next().ok_or_else(|| err("missing label field".into()))?;
    let label = (!label.is_empty()).then(|| label.to_string());
    let mut values = Vec::new();
    let mut steps = 0;
    for f in fields {
        let before = values.len();
        for v in f.split(',') {
            let x: f64 = v.trim().parse().map_err(|_| err(format!("bad number `{v}`")))?;
            if !x.is_finite() {
                return Err(err(format!("non-finite value `{v}`")));
            }
            values.push(x);
        }
        let d = values.len() - before;
        match *dim {
            None => *dim = Some(d),
            Some(prev) if prev != d => return Err(err(format!("vector of dimension {d}, expected {prev}"))),
            _ => {}
        }
        steps += 1;
    }
    if steps == 0 {
        return Err(err("record has no steps".into()));
    }
    Ok(Record { split, label, values })
}

/// Parse every record without length filtering.
pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut dim = None;
    let mut records = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line(&line, i + 1, &mut dim)?);
    }
    let dim = dim.ok_or_else(|| Error::invalid("dataset has no records"))?;
    Ok(Dataset { dim, records })
}

/// Load a dataset, dropping records shorter than `min_steps`. Every split
/// must keep at least one record.
pub fn ingest(path: &Path, min_steps: usize) -> Result<(Dataset, IngestReport)> {
    let f = std::fs::File::open(path)?;
    let ds = read_dataset(std::io::BufReader::new(f))?;
    let (ds, report) = ds.filter_short(min_steps);
    for s in Split::ALL {
        if ds.split(s).next().is_none() {
            return Err(Error::invalid(format!("split `{s}` is empty after filtering")));
        }
    }
    Ok((ds, report))
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    for r in &ds.records {
        write!(w, "{}\t{}", r.split, r.label.as_deref().unwrap_or(""))?;
        for step in r.values.chunks(ds.dim) {
            w.write_all(b"\t")?;
            for (k, v) in step.iter().enumerate() {
                if k > 0 {
                    w.write_all(b",")?;
                }
                // shortest representation that parses back to the same value
                write!(w, "{v:?}")?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export(ds: &Dataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_dataset(ds, std::io::BufWriter::new(std::fs::File::create(path)?))
}

impl Dataset {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == s)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn filter_short(self, min_steps: usize) -> (Dataset, IngestReport) {
        let dim = self.dim;
        let (keep, drop): (Vec<Record>, Vec<Record>) =
            self.records.into_iter().partition(|r| r.steps(dim) >= min_steps);
        let report = IngestReport {
            accepted: keep.len(),
            too_short: drop.len(),
        };
        (Dataset { dim, records: keep }, report)
    }

    /// Distinct labels in order of first appearance.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if let Some(l) = &r.label {
                if !out.contains(l) {
                    out.push(l.clone());
                }
            }
        }
        out
    }

    /// Position sequences of a trajectory batch. The first `n_train`
    /// trajectories go to train, the next `n_val` to val, the rest to test.
    pub fn from_trajectories(batch: &TrajectoryBatch, n_train: usize, n_val: usize, label: Option<&str>) -> Self {
        let records = (0..batch.n_traj)
            .map(|i| Record {
                split: if i < n_train {
                    Split::Train
                } else if i < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                },
                label: label.map(str::to_string),
                values: batch.positions(i),
            })
            .collect();
        Dataset { dim: 1, records }
    }
}

/// Append `copies` rescaled versions of every record. Each copy multiplies
/// all values of a sequence by one factor `1 + e`, `e ~ N(0, factor_std^2)`.
pub fn augment_scale<R: Rng + ?Sized>(ds: &Dataset, factor_std: f64, copies: usize, rng: &mut R) -> Result<Dataset> {
    if !(factor_std >= 0.0) {
        return Err(Error::invalid(format!("factor_std must be finite and >= 0, got {factor_std}")));
    }
    let noise = Normal::new(0.0, factor_std)
        .map_err(|_| Error::invalid(format!("factor_std must be finite and >= 0, got {factor_std}")))?;
    let mut records = ds.records.clone();
    records.reserve(ds.records.len() * copies);
    for r in &ds.records {
        for _ in 0..copies {
            let f = 1.0 + noise.sample(rng);
            records.push(Record {
                values: r.values.iter().map(|v| v * f).collect(),
                ..r.clone()
            });
        }
    }
    Ok(Dataset { dim: ds.dim, records })
}
