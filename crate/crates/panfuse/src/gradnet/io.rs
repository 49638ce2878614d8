//! Weight file format: a JSON manifest next to a raw little-endian f32 blob.
//!
//! For stem `model`, the pair is `model.gnet.json` + `model.gnet.bin`. The
//! blob holds, per block in order, the kernel tensor `[out][in][ky][kx]`
//! followed by the bias vector.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradnet::network::{ConvBlock, NetworkWeights};

#[derive(Debug, Serialize, Deserialize)]
struct BlockShape {
    in_channels: usize,
    out_channels: usize,
    relu: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    depth: usize,
    width: usize,
    input_channels: usize,
    seed: u64,
    blocks: Vec<BlockShape>,
}

/// Manifest and blob paths for a weights file addressed by stem.
pub fn weight_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = stem.as_os_str().to_os_string();
    let mut manifest = base.clone();
    manifest.push(".gnet.json");
    let mut blob = base;
    blob.push(".gnet.bin");
    (PathBuf::from(manifest), PathBuf::from(blob))
}

/// Writes `<stem>.gnet.json` and `<stem>.gnet.bin`. Values are narrowed to
/// f32; weights that came from `load_weights` or a fresh initialization
/// round-trip bit-exactly.
pub fn save_weights(weights: &NetworkWeights, stem: &Path) -> Result<()> {
    let manifest = WeightsManifest {
        depth: weights.depth(),
        width: weights.width(),
        input_channels: weights.input_channels(),
        seed: weights.seed(),
        blocks: weights
            .blocks()
            .iter()
            .map(|b| BlockShape {
                in_channels: b.in_channels(),
                out_channels: b.out_channels(),
                relu: b.relu(),
            })
            .collect(),
    };
    let mut blob = Vec::with_capacity(4 * weights.param_count());
    for block in weights.blocks() {
        for &v in block.kernel().iter().chain(block.bias()) {
            if !v.is_finite() {
                return Err(Error::Numerical("non-finite weight".into()));
            }
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let (manifest_path, blob_path) = weight_paths(stem);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    fs::write(&blob_path, blob)?;
    Ok(())
}

/// Reads a weight file pair written by [`save_weights`], checking that the
/// blob length matches the manifest's block shapes exactly.
pub fn load_weights(stem: &Path) -> Result<NetworkWeights> {
    let (manifest_path, blob_path) = weight_paths(stem);
    let manifest: WeightsManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.blocks.len() != manifest.depth {
        return Err(Error::Header(format!(
            "manifest lists {} blocks for depth {}",
            manifest.blocks.len(),
            manifest.depth
        )));
    }
    let expected: usize = manifest
        .blocks
        .iter()
        .map(|b| 4 * (b.out_channels * b.in_channels * 9 + b.out_channels))
        .sum();
    let blob = fs::read(&blob_path)?;
    if blob.len() != expected {
        return Err(Error::Header(format!(
            "weight blob is {} bytes, manifest implies {expected}",
            blob.len()
        )));
    }

    let mut offset = 0;
    let mut take = |n: usize| {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let bytes: [u8; 4] = blob[offset..offset + 4].try_into().unwrap();
            let v = f32::from_le_bytes(bytes) as f64;
            if !v.is_finite() {
                return Err(Error::Numerical("non-finite weight in blob".into()));
            }
            out.push(v);
            offset += 4;
        }
        Ok(out)
    };
    let mut blocks = Vec::with_capacity(manifest.blocks.len());
    for shape in &manifest.blocks {
        let kernel = take(shape.out_channels * shape.in_channels * 9)?;
        let bias = take(shape.out_channels)?;
        blocks.push(ConvBlock {
            in_channels: shape.in_channels,
            out_channels: shape.out_channels,
            kernel,
            bias,
            relu: shape.relu,
        });
    }
    let weights = NetworkWeights::from_parts(blocks, manifest.seed)?;
    if weights.width() != manifest.width || weights.input_channels() != manifest.input_channels {
        return Err(Error::Header(
            "manifest width/input_channels disagree with block shapes".into(),
        ));
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let net = NetworkWeights::seeded(3, 4, 10, 21).unwrap();
        save_weights(&net, &stem).unwrap();
        let loaded = load_weights(&stem).unwrap();
        assert_eq!(net, loaded);

        // Byte-compare oracle: saving the loaded net reproduces the blob.
        let blob1 = fs::read(dir.path().join("model.gnet.bin")).unwrap();
        let stem2 = dir.path().join("model2");
        save_weights(&loaded, &stem2).unwrap();
        let blob2 = fs::read(dir.path().join("model2.gnet.bin")).unwrap();
        assert_eq!(blob1, blob2);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let net = NetworkWeights::seeded(2, 3, 4, 1).unwrap();
        save_weights(&net, &stem).unwrap();
        let blob_path = dir.path().join("model.gnet.bin");
        let mut blob = fs::read(&blob_path).unwrap();
        blob.truncate(blob.len() - 4);
        fs::write(&blob_path, blob).unwrap();
        match load_weights(&stem) {
            Err(Error::Header(_)) => {}
            other => panic!("expected header error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_blob_shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let net = NetworkWeights::seeded(2, 3, 4, 1).unwrap();
        save_weights(&net, &stem).unwrap();
        let manifest_path = dir.path().join("model.gnet.json");
        let text = fs::read_to_string(&manifest_path)
            .unwrap()
            .replace("\"width\": 3", "\"width\": 5");
        fs::write(&manifest_path, text).unwrap();
        assert!(load_weights(&stem).is_err());
    }

    #[test]
    fn blob_length_matches_closed_form() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let (depth, width, ch) = (17usize, 64usize, 10usize);
        let net = NetworkWeights::seeded(depth, width, ch, 2).unwrap();
        save_weights(&net, &stem).unwrap();
        let blob = fs::read(dir.path().join("model.gnet.bin")).unwrap();
        let params = (width * ch * 9 + width)
            + (depth - 2) * (width * width * 9 + width)
            + (ch * width * 9 + ch);
        assert_eq!(blob.len(), 4 * params);
    }

    #[test]
    fn seed_survives_the_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let net = NetworkWeights::seeded(2, 2, 4, 77).unwrap();
        save_weights(&net, &stem).unwrap();
        assert_eq!(load_weights(&stem).unwrap().seed(), 77);
    }
}
