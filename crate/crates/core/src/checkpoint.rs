//! Checkpoint container.
//!
//! Layout: the 8 magic bytes `BCMEM001`, a little-endian `u32` header length,
//! a JSON header, then raw little-endian `f64` tensor data. Each tensor record
//! carries its `byte_offset` from the start of the data section; tensors are
//! stored back to back in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Bcmem;
use crate::nn::Tensor2D;
use crate::quad_reg::QuadLossMode;

pub const MAGIC: &[u8; 8] = b"BCMEM001";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub tensors: Vec<TensorRecord>,
    /// Verbatim echo of the configuration that produced the weights.
    pub config: serde_json::Value,
    pub loss_mode: QuadLossMode,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub val_loss: Option<f64>,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Bcmem,
}

pub fn encode(
    model: &Bcmem,
    config: serde_json::Value,
    loss_mode: QuadLossMode,
    best_epoch: Option<usize>,
    val_loss: Option<f64>,
) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (name, t) in model.named_tensors() {
        tensors.push(TensorRecord {
            name,
            shape: vec![t.rows(), t.cols()],
            dtype: "f64".into(),
            byte_offset: payload.len() as u64,
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        tensors,
        config,
        loss_mode,
        best_epoch,
        val_loss,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing BCMEM001 magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("header runs past end of file".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let data = &bytes[header_end..];

    let mut expected_end = 0u64;
    let mut tensors = std::collections::HashMap::new();
    for rec in &header.tensors {
        if rec.dtype != "f64" || rec.shape.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "tensor {} has unsupported dtype/shape",
                rec.name
            )));
        }
        let (rows, cols) = (rec.shape[0], rec.shape[1]);
        let start = rec.byte_offset as usize;
        let end = start + rows * cols * 8;
        if end > data.len() {
            return Err(Error::Checkpoint(format!("tensor {} is truncated", rec.name)));
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.insert(rec.name.clone(), Tensor2D::from_vec(rows, cols, values)?);
        expected_end = expected_end.max(end as u64);
    }
    if expected_end as usize != data.len() {
        return Err(Error::Checkpoint("unexpected trailing data".into()));
    }

    let mut model = Bcmem::new(0);
    model.load_tensors(|name| tensors.remove(name))?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unknown tensor {extra}")));
    }
    Ok(Checkpoint { header, model })
}

pub fn save(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_preserves_every_tensor() {
        let mut model = Bcmem::new(4);
        model.head_bias.value.data_mut()[2] = -0.125;
        let bytes = encode(&model, json!({"seed": 4}), QuadLossMode::Probe, Some(3), Some(0.5)).unwrap();
        assert_eq!(&bytes[..8], b"BCMEM001");
        let ck = decode(&bytes).unwrap();
        assert_eq!(ck.header.loss_mode, QuadLossMode::Probe);
        assert_eq!(ck.header.config["seed"], 4);
        assert_eq!(ck.header.best_epoch, Some(3));
        assert!(ck.header.tensors.iter().all(|r| r.dtype == "f64"));
        let before: Vec<_> = model.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let after: Vec<_> = ck.model.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        assert_eq!(before, after);
        // re-encoding is byte-identical
        let again = encode(&ck.model, json!({"seed": 4}), QuadLossMode::Probe, Some(3), Some(0.5)).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn header_layout() {
        let model = Bcmem::new(1);
        let bytes = encode(&model, json!({}), QuadLossMode::Cube, None, None).unwrap();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        assert_eq!(header["loss_mode"], "cube");
        let first = &header["tensors"][0];
        assert_eq!(first["name"], "encoder.0.weight");
        assert_eq!(first["shape"], json!([512, 784]));
        assert_eq!(first["byte_offset"], 0);
        let second = &header["tensors"][1];
        assert_eq!(second["byte_offset"], 512 * 784 * 8);
        let data_start = 12 + len;
        let w0 = f64::from_le_bytes(bytes[data_start..data_start + 8].try_into().unwrap());
        assert_eq!(w0, model.encoder.named_tensors("e")[0].1.data()[0]);
    }

    #[test]
    fn rejects_corruption() {
        let model = Bcmem::new(1);
        let bytes = encode(&model, json!({}), QuadLossMode::Cube, None, None).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(Error::Checkpoint(_))));
        assert!(matches!(decode(&bytes[..bytes.len() - 8]), Err(Error::Checkpoint(_))));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode(&longer), Err(Error::Checkpoint(_))));
        let mut bad_len = bytes;
        bad_len[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&bad_len), Err(Error::Checkpoint(_))));
    }
}
