//! Binary checkpoints: `MMCK`, a u16 version, a u32 header length, a JSON
//! header (config plus tensor table), then little-endian f32 payloads in
//! table order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::model::Model;
use crate::{ModelError, Result};

pub const MAGIC: &[u8; 4] = b"MMCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    /// Free-form training metadata (steps run, final loss, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn encoder_tensors(m: &Model) -> Vec<(String, Array2<f64>)> {
    let e = &m.encoder;
    vec![
        ("encoder.w1".into(), e.w1.clone()),
        ("encoder.b1".into(), e.b1.clone().insert_axis(ndarray::Axis(0))),
        ("encoder.w2".into(), e.w2.clone()),
        ("encoder.b2".into(), e.b2.clone().insert_axis(ndarray::Axis(0))),
    ]
}

fn all_tensors(m: &Model) -> Vec<(String, Array2<f64>)> {
    let mut v: Vec<_> = m
        .store
        .ids()
        .map(|id| (m.store.name(id).to_string(), m.store.get(id).clone()))
        .collect();
    v.extend(encoder_tensors(m));
    v
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &Model, meta: serde_json::Value) -> Result<()> {
    let tensors = all_tensors(model);
    let header = CheckpointHeader {
        config: model.config.clone(),
        tensors: tensors
            .iter()
            .map(|(n, a)| TensorEntry {
                name: n.clone(),
                rows: a.nrows(),
                cols: a.ncols(),
            })
            .collect(),
        meta,
    };
    let hj = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(hj.len() as u32).to_le_bytes())?;
    w.write_all(&hj)?;
    let mut buf = Vec::new();
    for (_, a) in &tensors {
        buf.clear();
        for &x in a.iter() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_checkpoint<P: AsRef<Path>>(path: P, model: &Model, meta: serde_json::Value) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_checkpoint(&mut f, model, meta)?;
    f.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(Model, CheckpointHeader)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let hlen = u32::from_le_bytes(b4) as usize;
    let mut hj = vec![0u8; hlen];
    r.read_exact(&mut hj)?;
    let header: CheckpointHeader = serde_json::from_slice(&hj)?;
    let mut model = Model::new(header.config.clone())?;
    let expected: std::collections::BTreeSet<String> = all_tensors(&model).into_iter().map(|(n, _)| n).collect();
    let listed: std::collections::BTreeSet<String> = header.tensors.iter().map(|t| t.name.clone()).collect();
    if listed.len() != header.tensors.len() {
        return Err(bad("duplicate tensor names"));
    }
    if let Some(missing) = expected.difference(&listed).next() {
        return Err(bad(format!("missing tensor {missing}")));
    }
    for t in &header.tensors {
        let mut raw = vec![0u8; t.rows * t.cols * 4];
        r.read_exact(&mut raw)?;
        let vals: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let arr = Array2::from_shape_vec((t.rows, t.cols), vals).map_err(|e| bad(e.to_string()))?;
        let target: &mut Array2<f64> = match model.store.find(&t.name) {
            Some(id) => model.store.get_mut(id),
            None => {
                let e = &mut model.encoder;
                match t.name.as_str() {
                    "encoder.w1" => &mut e.w1,
                    "encoder.w2" => &mut e.w2,
                    "encoder.b1" | "encoder.b2" => {
                        let v = if t.name == "encoder.b1" { &mut e.b1 } else { &mut e.b2 };
                        if arr.nrows() != 1 || arr.ncols() != v.len() {
                            return Err(bad(format!("shape mismatch for {}", t.name)));
                        }
                        v.assign(&arr.row(0));
                        continue;
                    }
                    other => return Err(bad(format!("unknown tensor {other}"))),
                }
            }
        };
        if target.dim() != arr.dim() {
            return Err(bad(format!("shape mismatch for {}", t.name)));
        }
        *target = arr;
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok((model, header))
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(Model, CheckpointHeader)> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    read_checkpoint(&mut f)
}
