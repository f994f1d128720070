//! Parameter checkpoints: a flat binary of 32-bit little-endian values plus
//! a JSON shape manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NumericsError;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Write named tensors to `<stem>.bin` + `<stem>.json` under `dir`.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    params: &[(String, &Tensor)],
) -> Result<(), NumericsError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(params.len());
    let mut bytes: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, tensor) in params {
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        for &v in tensor.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += tensor.len();
    }
    let mut bin = fs::File::create(dir.join(format!("{stem}.bin")))?;
    bin.write_all(&bytes)?;
    let manifest = serde_json::to_string_pretty(&entries)?;
    fs::write(dir.join(format!("{stem}.json")), manifest)?;
    Ok(())
}

/// Read back a checkpoint written by [`save_checkpoint`]. Tensor order
/// matches the manifest.
pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<Vec<(String, Tensor)>, NumericsError> {
    let manifest = fs::read_to_string(dir.join(format!("{stem}.json")))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&manifest)?;
    let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
    let total: usize = entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * 4 {
        return Err(NumericsError::Checkpoint(format!(
            "payload is {} bytes, manifest expects {}",
            bytes.len(),
            total * 4
        )));
    }
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let len: usize = e.shape.iter().product();
        let start = e.offset * 4;
        let data: Vec<f64> = bytes[start..start + len * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite(format!("checkpoint tensor {}", e.name)));
        }
        out.push((e.name, Tensor::from_vec(&e.shape, data)));
    }
    Ok(out)
}
