//! Self-describing VAE checkpoint files.
//!
//! JSON container with a format-version tag, the architecture block, and
//! every parameter tensor as base64-encoded little-endian f64 bytes, so a
//! save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vae::{DecoderModel, EncoderModel, VaeArch};

const FORMAT: &str = "pcollapse-vae";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    format_version: u32,
    arch: VaeArch,
    tensors: BTreeMap<String, TensorRecord>,
}

fn encode_f64s(values: impl Iterator<Item = f64>) -> String {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f64s(data: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(data)
        .map_err(|e| Error::Checkpoint(format!("bad tensor payload: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "tensor payload has {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn record_layer(
    tensors: &mut BTreeMap<String, TensorRecord>,
    name: &str,
    weight: &Array2<f64>,
    bias: &Array1<f64>,
) {
    let (r, c) = weight.dim();
    tensors.insert(
        format!("{name}.weight"),
        TensorRecord { shape: vec![r, c], data: encode_f64s(weight.iter().copied()) },
    );
    tensors.insert(
        format!("{name}.bias"),
        TensorRecord { shape: vec![bias.len()], data: encode_f64s(bias.iter().copied()) },
    );
}

fn load_layer(
    tensors: &BTreeMap<String, TensorRecord>,
    name: &str,
    weight: &mut Array2<f64>,
    bias: &mut Array1<f64>,
) -> Result<()> {
    let w = tensors
        .get(&format!("{name}.weight"))
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}.weight")))?;
    let (r, c) = weight.dim();
    if w.shape != [r, c] {
        return Err(Error::Checkpoint(format!(
            "tensor {name}.weight has shape {:?}, expected [{r}, {c}]",
            w.shape
        )));
    }
    let values = decode_f64s(&w.data, r * c)?;
    for (dst, src) in weight.iter_mut().zip(values) {
        *dst = src;
    }
    let b = tensors
        .get(&format!("{name}.bias"))
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}.bias")))?;
    if b.shape != [bias.len()] {
        return Err(Error::Checkpoint(format!("tensor {name}.bias has wrong shape")));
    }
    let values = decode_f64s(&b.data, bias.len())?;
    for (dst, src) in bias.iter_mut().zip(values) {
        *dst = src;
    }
    Ok(())
}

/// Write an encoder/decoder pair to a checkpoint file.
pub fn save_vae(encoder: &EncoderModel, decoder: &DecoderModel, path: &Path) -> Result<()> {
    if encoder.arch != decoder.arch {
        return Err(Error::validation("encoder and decoder architectures differ"));
    }
    let mut tensors = BTreeMap::new();
    for (name, layer) in EncoderModel::layer_names().iter().zip(encoder.layers()) {
        record_layer(&mut tensors, name, &layer.weight, &layer.bias);
    }
    for (name, layer) in DecoderModel::layer_names().iter().zip(decoder.layers()) {
        record_layer(&mut tensors, name, &layer.weight, &layer.bias);
    }
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        format_version: FORMAT_VERSION,
        arch: encoder.arch,
        tensors,
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| Error::Checkpoint(format!("serialize failed: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Load an encoder/decoder pair; fails loudly on version or shape mismatch
/// without returning a partial model.
pub fn load_vae(path: &Path) -> Result<(EncoderModel, DecoderModel)> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("parse failed: {e}")))?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unexpected format tag {:?}, expected {FORMAT:?}",
            file.format
        )));
    }
    if file.format_version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: file.format_version,
            expected: FORMAT_VERSION,
        });
    }
    file.arch.validate().map_err(|e| Error::Checkpoint(format!("bad architecture: {e}")))?;

    // Structure comes from the architecture; weights are then overwritten.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut encoder = EncoderModel::new(file.arch, &mut rng)?;
    let mut decoder = DecoderModel::new(file.arch, &mut rng)?;
    for (name, layer) in EncoderModel::layer_names().iter().zip(encoder.layers_mut()) {
        load_layer(&file.tensors, name, &mut layer.weight, &mut layer.bias)?;
    }
    for (name, layer) in DecoderModel::layer_names().iter().zip(decoder.layers_mut()) {
        load_layer(&file.tensors, name, &mut layer.weight, &mut layer.bias)?;
    }
    Ok((encoder, decoder))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageGrid;
    use ndarray::Array3;

    fn models(seed: u64) -> (EncoderModel, DecoderModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = VaeArch::default();
        (EncoderModel::new(arch, &mut rng).unwrap(), DecoderModel::new(arch, &mut rng).unwrap())
    }

    fn image(seed: u64) -> ImageGrid {
        let mut arr = Array3::zeros((32, 32, 3));
        let mut state = seed;
        for v in arr.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (state >> 33) as f64 / (1u64 << 31) as f64;
        }
        ImageGrid::new(arr).unwrap()
    }

    #[test]
    fn round_trip_preserves_encoding_bit_for_bit() {
        let (enc, dec) = models(42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vae.json");
        save_vae(&enc, &dec, &path).unwrap();
        let (enc2, dec2) = load_vae(&path).unwrap();
        assert_eq!(enc, enc2);
        assert_eq!(dec, dec2);
        let img = image(7);
        assert_eq!(enc.encode(&img).unwrap(), enc2.encode(&img).unwrap());
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_vae(&path), Err(Error::Checkpoint(_))));
        assert!(load_vae(&dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let (enc, dec) = models(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vae.json");
        save_vae(&enc, &dec, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("\"format_version\":1", "\"format_version\":99");
        std::fs::write(&path, text).unwrap();
        match load_vae(&path) {
            Err(Error::CheckpointVersion { found: 99, expected: 1 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
