//! `"ANCM"` model files.
//!
//! Layout (little-endian): magic, u16 version, u32-length-prefixed JSON
//! [`ModelConfig`], u32 tensor count, per tensor (name string, u8 kind,
//! u64 length), u64 learnable parameter count, then every tensor's values
//! as f64 in manifest order.

use std::fs;
use std::path::Path;

use super::layers::ParamKind;
use super::{CnnModel, ModelConfig};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ANCM";
const VERSION: u16 = 1;

fn kind_code(k: ParamKind) -> u8 {
    match k {
        ParamKind::Weight => 0,
        ParamKind::Shift => 1,
        ParamKind::Buffer => 2,
    }
}

pub fn encode_model(model: &CnnModel) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.string(&serde_json::to_string(&model.config)?);
    let tensors = model.tensors();
    w.u32(tensors.len() as u32);
    for (name, kind, t) in &tensors {
        w.string(name);
        w.u8(kind_code(*kind));
        w.u64(t.len() as u64);
    }
    w.u64(model.param_count() as u64);
    for (_, _, t) in &tensors {
        for &v in t.iter() {
            w.f64(v);
        }
    }
    Ok(w.finish())
}

pub fn decode_model(bytes: &[u8]) -> Result<CnnModel> {
    let mut r = ByteReader::new(bytes, "model file");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let config: ModelConfig = serde_json::from_str(&r.string()?)?;
    let mut model = CnnModel::new(config, 0).map_err(|e| Error::Format(e.to_string()))?;

    let count = r.u32()? as usize;
    let expected: Vec<(String, u8, usize)> = model
        .tensors()
        .iter()
        .map(|(n, k, t)| (n.clone(), kind_code(*k), t.len()))
        .collect();
    if count != expected.len() {
        return Err(Error::Format(format!(
            "manifest lists {count} tensors, architecture has {}",
            expected.len()
        )));
    }
    for (name, kind, len) in &expected {
        let got = (r.string()?, r.u8()?, r.u64()? as usize);
        if (&got.0, got.1, got.2) != (name, *kind, *len) {
            return Err(Error::Format(format!(
                "manifest entry {:?} does not match expected {name} ({len} values)",
                got
            )));
        }
    }
    let declared = r.u64()? as usize;
    if declared != model.param_count() {
        return Err(Error::Format(format!(
            "file declares {declared} parameters, architecture has {}",
            model.param_count()
        )));
    }
    for (name, _, t) in model.tensors_mut() {
        for v in t.iter_mut() {
            *v = r.f64()?;
            if !v.is_finite() {
                return Err(Error::Format(format!("non-finite value in {name}")));
            }
        }
    }
    r.finish()?;
    if model.tensors().iter().any(|(n, _, t)| n.ends_with("running_var") && t.iter().any(|&v| v < 0.0)) {
        return Err(Error::Format("negative running variance".into()));
    }
    Ok(model)
}

pub fn save_model(model: &CnnModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CnnModel> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let mut m = CnnModel::new(ModelConfig::tiny(), 9).unwrap();
        m.stem_bn.running_mean[1] = 0.37;
        m.block2.bn2.running_var[0] = 2.5;
        let back = decode_model(&encode_model(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn tampered_parameter_count_is_rejected() {
        let m = CnnModel::new(ModelConfig::tiny(), 9).unwrap();
        let mut bytes = encode_model(&m).unwrap();
        let data_len = m.tensors().iter().map(|(_, _, t)| t.len()).sum::<usize>() * 8;
        let pos = bytes.len() - data_len - 8;
        assert_eq!(
            u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize,
            m.param_count()
        );
        bytes[pos] ^= 1;
        assert!(matches!(decode_model(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let m = CnnModel::new(ModelConfig::tiny(), 9).unwrap();
        let bytes = encode_model(&m).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
        assert!(decode_model(&bytes[..bytes.len() - 3]).is_err());
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(decode_model(&ver).is_err());
    }
}
