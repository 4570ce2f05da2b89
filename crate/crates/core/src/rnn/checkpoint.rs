//! Checkpoint layout:
//!
//! ```text
//! PREDINFO-CKPT 1\n
//! {"config": {...}, "tensors": [{"name": ..., "shape": [...]}, ...]}\n
//! <little-endian f64 data of each tensor, in header order>
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{param_shapes, RnnConfig, RnnModel};
use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "PREDINFO-CKPT 1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RnnConfig,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(model: &RnnModel, mut w: W) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        tensors: model
            .params
            .iter()
            .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() })
            .collect(),
    };
    writeln!(w, "{MAGIC}")?;
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for t in model.params.values() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<RnnModel> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Parse { line: 1, msg: "not a checkpoint file".into() });
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Parse { line: 2, msg: e.to_string() })?;
    let mut params = ParamSet::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Parse { line: 3, msg: format!("truncated data for `{}`", e.name) })?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(e.name, Tensor::new(e.shape, data)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Parse { line: 3, msg: format!("{} trailing bytes", rest.len()) });
    }
    // cell/decoder shapes are checked; extra tensors (contrastive readouts) are kept
    let cfg = header.config;
    let core: ParamSet = param_shapes(&cfg)
        .into_iter()
        .filter_map(|(n, _)| params.get(&n).map(|t| (n, t.clone())))
        .collect();
    RnnModel::from_params(cfg.clone(), core)?;
    Ok(RnnModel { config: cfg, params })
}

pub fn save_checkpoint(model: &RnnModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let f = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load_checkpoint(path: &Path) -> Result<RnnModel> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
