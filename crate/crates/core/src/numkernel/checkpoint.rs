//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `UMCKPT01`, a little-endian `u32` header length,
//! the JSON-encoded [`ModelSpec`], then every parameter tensor (weight before
//! bias, in layer order) as little-endian `f64`s. Values round-trip bit-exactly.

use std::fs;
use std::path::Path;

use super::model::{LayerSpec, Model, ModelSpec, ParamSet, Params};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UMCKPT01";

pub fn encode(model: &Model) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&model.spec)?;
    let mut out = Vec::with_capacity(12 + header.len() + model.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params.iter().flatten() {
        for v in p.weight.data().iter().chain(p.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Model> {
    let bad = |m: &str| Error::format(origin, m);
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let spec: ModelSpec = serde_json::from_slice(header)?;
    spec.validate()?;
    let mut values = bytes[12 + hlen..].chunks_exact(8);
    if values.remainder().len() != 0 {
        return Err(bad("trailing bytes"));
    }
    let mut take = |shape: Vec<usize>| -> Result<Tensor> {
        let n = shape.iter().product();
        let data: Vec<f64> = values
            .by_ref()
            .take(n)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if data.len() != n {
            return Err(bad("truncated parameters"));
        }
        Tensor::new(shape, data)
    };
    let mut params: ParamSet = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        params.push(match *layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(Params {
                weight: take(vec![out_channels, in_channels, kernel.0, kernel.1])?,
                bias: take(vec![out_channels])?,
            }),
            LayerSpec::Fc {
                in_features,
                out_features,
            } => Some(Params {
                weight: take(vec![out_features, in_features])?,
                bias: take(vec![out_features])?,
            }),
            _ => None,
        });
    }
    if values.next().is_some() {
        return Err(bad("more parameters than the model layout declares"));
    }
    Model::from_params(spec, params)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Model::init(ModelSpec::desk(16, 6), 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.spec, model.spec);
        for (a, b) in model.params.iter().flatten().zip(back.params.iter().flatten()) {
            for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncation_is_detected() {
        let model = Model::init(ModelSpec::desk(16, 6), 42).unwrap();
        let bytes = encode(&model).unwrap();
        assert!(decode(&bytes[..bytes.len() - 8], Path::new("x")).is_err());
        assert!(decode(b"garbage!....", Path::new("x")).is_err());
    }
}
