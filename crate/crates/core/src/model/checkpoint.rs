//! Single-file checkpoint: `VGXM`, format version, a length-prefixed JSON
//! header (config, vocabulary, tensor names and shapes), then every tensor
//! as little-endian f32 in declared order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::Layout;
use super::tape::Tensor;
use super::{Model, ModelConfig, ModelError, Vocab};

pub const MAGIC: &[u8; 4] = b"VGXM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<(String, usize, usize)>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> Result<(), ModelError> {
    let p = &model.params;
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        tensors: p
            .names
            .iter()
            .zip(&p.tensors)
            .map(|(n, t)| (n.clone(), t.rows, t.cols))
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in &p.tensors {
        let bytes: Vec<u8> = t
            .data
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Model, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a VGXM checkpoint"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    header.config.validate()?;
    let (mut params, _) = Layout::build(&header.config, header.vocab.len(), false);
    if header.tensors.len() != params.len() {
        return Err(bad(format!(
            "expected {} tensors, header lists {}",
            params.len(),
            header.tensors.len()
        )));
    }
    for ((name, rows, cols), (expected, t)) in header
        .tensors
        .iter()
        .zip(params.names.iter().zip(params.tensors.iter_mut()))
    {
        if name != expected || *rows != t.rows || *cols != t.cols {
            return Err(bad(format!(
                "tensor {name} ({rows}x{cols}) does not match {expected} ({}x{})",
                t.rows, t.cols
            )));
        }
        let mut buf = vec![0u8; rows * cols * 4];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        *t = Tensor::from_vec(*rows, *cols, data);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes after the last tensor"));
    }
    if let Some(name) = params.first_non_finite() {
        return Err(ModelError::NonFinite(name.to_string()));
    }
    Ok(Model::from_parts(header.config, header.vocab, params))
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
