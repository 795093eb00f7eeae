//! NCF weight container.
//!
//! ```text
//! "NCF1" | u32 LE manifest length | UTF-8 JSON manifest | f32 LE blob
//! ```
//!
//! The manifest lists the layers in order. Offsets and lengths count `f32`
//! values into the blob; parameterless layers carry zeros.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, LayerKind, LayerWeights, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NCF1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    input_dims: [usize; 4],
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    #[serde(flatten)]
    kind: LayerKind,
    weight_offset: usize,
    weight_len: usize,
    bias_offset: usize,
    bias_len: usize,
}

pub fn save_ncf(net: &Network) -> Vec<u8> {
    let mut blob: Vec<f32> = Vec::new();
    let mut entries = Vec::with_capacity(net.layers().len());
    for layer in net.layers() {
        let (mut wo, mut wl, mut bo, mut bl) = (0, 0, 0, 0);
        if let Some(w) = &layer.weights {
            wo = blob.len();
            wl = w.weight.len();
            blob.extend(w.weight.data().iter().map(|&v| v as f32));
            bo = blob.len();
            bl = w.bias.len();
            blob.extend(w.bias.data().iter().map(|&v| v as f32));
        }
        entries.push(LayerEntry {
            name: layer.name.clone(),
            kind: layer.kind.clone(),
            weight_offset: wo,
            weight_len: wl,
            bias_offset: bo,
            bias_len: bl,
        });
    }
    let manifest = Manifest { version: 1, input_dims: net.input_dims(), layers: entries };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(8 + json.len() + blob.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in blob {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_ncf(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format("missing NCF1 magic"));
    }
    let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json = bytes
        .get(8..8 + mlen)
        .ok_or_else(|| Error::format(format!("manifest length {mlen} exceeds file size")))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::format(format!("bad manifest: {e}")))?;
    if manifest.version != 1 {
        return Err(Error::format(format!("unsupported NCF version {}", manifest.version)));
    }
    let blob_bytes = &bytes[8 + mlen..];
    if !blob_bytes.len().is_multiple_of(4) {
        return Err(Error::format("blob is not a whole number of f32 values"));
    }
    let blob: Vec<f32> =
        blob_bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();

    let slice = |name: &str, what: &str, off: usize, len: usize, dims: &[usize]| -> Result<Tensor> {
        let expect: usize = dims.iter().product();
        if len != expect {
            return Err(Error::format(format!("layer '{name}': {what}_len {len}, expected {expect}")));
        }
        let end = off.checked_add(len).filter(|&e| e <= blob.len()).ok_or_else(|| {
            Error::format(format!("layer '{name}': {what} range {off}+{len} exceeds blob of {}", blob.len()))
        })?;
        Tensor::new(dims.to_vec(), blob[off..end].iter().map(|&v| v as f64).collect())
            .map_err(|e| Error::format(format!("layer '{name}': {e}")))
    };

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for e in manifest.layers {
        let weights = match e.kind.param_dims() {
            Some((wd, bd)) => Some(LayerWeights {
                weight: slice(&e.name, "weight", e.weight_offset, e.weight_len, &wd)?,
                bias: slice(&e.name, "bias", e.bias_offset, e.bias_len, &bd)?,
            }),
            None => {
                if e.weight_len != 0 || e.bias_len != 0 {
                    return Err(Error::format(format!("layer '{}' has no parameters", e.name)));
                }
                None
            }
        };
        layers.push(Layer { name: e.name, kind: e.kind, weights });
    }
    Network::new(manifest.input_dims, layers).map_err(|e| Error::format(format!("invalid network: {e}")))
}

pub fn read_ncf(path: impl AsRef<Path>) -> Result<Network> {
    load_ncf(&std::fs::read(path)?)
}

pub fn write_ncf(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_ncf(net))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn quantized(net: &Network) -> Network {
        let layers = net
            .layers()
            .iter()
            .cloned()
            .map(|mut l| {
                if let Some(w) = l.weights.as_mut() {
                    w.weight = w.weight.map(|v| v as f32 as f64);
                    w.bias = w.bias.map(|v| v as f32 as f64);
                }
                l
            })
            .collect();
        Network::new(net.input_dims(), layers).unwrap()
    }

    #[test]
    fn round_trip_after_quantization() {
        for v in 0..3 {
            let net = fixtures::random_net(v, 77);
            let bytes = save_ncf(&net);
            let back = load_ncf(&bytes).unwrap();
            assert_eq!(back, quantized(&net));
            assert_eq!(save_ncf(&back), bytes);
        }
    }

    #[test]
    fn manifest_uses_kind_and_params_fields() {
        let bytes = save_ncf(&fixtures::random_net(0, 1));
        let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[8..8 + mlen]).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["layers"][0]["kind"], "conv3d");
        assert_eq!(v["layers"][0]["params"]["padding"], "same");
        assert_eq!(v["layers"][2]["kind"], "maxpool3d");
        assert_eq!(v["layers"][1]["weight_len"], 0);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = save_ncf(&fixtures::random_net(0, 1));
        bytes[3] = b'2';
        assert!(matches!(load_ncf(&bytes), Err(Error::Format(_))));
        assert!(matches!(load_ncf(b"NC"), Err(Error::Format(_))));
    }

    #[test]
    fn weight_len_beyond_blob() {
        let net = fixtures::linear_net(&[1.0, 2.0], 0.5);
        let bytes = save_ncf(&net);
        // Drop the final float so the bias range runs past the blob.
        let truncated = &bytes[..bytes.len() - 4];
        assert!(matches!(load_ncf(truncated), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_layer_kind() {
        let bytes = save_ncf(&fixtures::linear_net(&[1.0], 0.0));
        let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[8..8 + mlen].to_vec()).unwrap().replace("\"flatten\"", "\"softmax\"");
        let mut out = b"NCF1".to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        out.extend_from_slice(&bytes[8 + mlen..]);
        assert!(matches!(load_ncf(&out), Err(Error::Format(_))));
    }
}
