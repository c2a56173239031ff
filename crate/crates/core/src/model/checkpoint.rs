//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `AMECKPT\0`, `u32` format version, `u8`
//! scalar width, `u32` length + JSON model config, `u32` parameter count,
//! then per parameter `u32` name length, name, `u32` rank, `u64` dims and
//! the raw scalars.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::mae::{MaeModel, CLASS_HEAD_PREFIX};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"AMECKPT\0";
pub const FORMAT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn to_bytes<T: Scalar>(model: &MaeModel<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    let cfg = serde_json::to_vec(model.config())?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (_, p) in model.params().iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn save<T: Scalar>(model: &MaeModel<T>, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parsed container: config plus named tensors in file order.
pub struct Contents<T> {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<T>)>,
}

pub fn from_bytes<T: Scalar>(buf: &[u8]) -> Result<Contents<T>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let width = r.take(1)?[0] as usize;
    if width != T::BYTES {
        return Err(bad(format!("stored scalars are {width} bytes, expected {}", T::BYTES)));
    }
    let n = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| bad("parameter name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(width).ok_or_else(|| bad("tensor too large"))?)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(bad("trailing bytes after last parameter"));
    }
    Ok(Contents { config, tensors })
}

fn install<T: Scalar>(model: &mut MaeModel<T>, tensors: Vec<(String, Tensor<T>)>, skip_head: bool) -> Result<()> {
    for (name, value) in tensors {
        if skip_head && name.starts_with(CLASS_HEAD_PREFIX) {
            continue;
        }
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| bad(format!("unknown parameter {name}")))?;
        let slot = &mut model.params_mut().get_mut(id).value;
        if slot.shape() != value.shape() {
            return Err(bad(format!(
                "parameter {name} has shape {:?}, model expects {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
    }
    Ok(())
}

/// Loads a model. With `expected`, the stored config must match it exactly.
pub fn load<T: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<MaeModel<T>> {
    let bytes = std::fs::read(path)?;
    let c = from_bytes::<T>(&bytes)?;
    if let Some(e) = expected {
        if *e != c.config {
            return Err(bad(format!("config mismatch in {}", path.display())));
        }
    }
    let mut model = MaeModel::new(c.config, 0)?;
    if c.tensors.len() != model.params().len() {
        return Err(bad(format!(
            "{} stored parameters, model has {}",
            c.tensors.len(),
            model.params().len()
        )));
    }
    install(&mut model, c.tensors, false)?;
    Ok(model)
}

/// Builds a `target` model whose encoder/decoder weights come from the
/// checkpoint; a classification head, if any, is freshly initialized from
/// `seed`.
pub fn load_backbone<T: Scalar>(path: &Path, target: ModelConfig, seed: u64) -> Result<MaeModel<T>> {
    let bytes = std::fs::read(path)?;
    let c = from_bytes::<T>(&bytes)?;
    if !c.config.same_backbone(&target) {
        return Err(bad(format!(
            "backbone of {} does not match the target config",
            path.display()
        )));
    }
    let mut model = MaeModel::new(target, seed)?;
    install(&mut model, c.tensors, true)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Task;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = MaeModel::<f32>::new(ModelConfig::miniature(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&m, &path).unwrap();
        let back = load::<f32>(&path, Some(m.config())).unwrap();
        assert_eq!(back.params().checksum(), m.params().checksum());
    }

    #[test]
    fn rejects_mismatch_truncation_and_width() {
        let m = MaeModel::<f32>::new(ModelConfig::miniature(), 9).unwrap();
        let bytes = to_bytes(&m).unwrap();
        assert!(matches!(
            from_bytes::<f32>(&bytes[..bytes.len() - 1]),
            Err(Error::Checkpoint(_))
        ));
        assert!(matches!(from_bytes::<f64>(&bytes), Err(Error::Checkpoint(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&m, &path).unwrap();
        let other = ModelConfig {
            mlp_ratio: 2,
            ..ModelConfig::miniature()
        };
        assert!(matches!(load::<f32>(&path, Some(&other)), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn backbone_load_keeps_fresh_head() {
        let m = MaeModel::<f32>::new(ModelConfig::miniature(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&m, &path).unwrap();
        let target = ModelConfig {
            task: Task::Classification { num_classes: 3 },
            classifier_hidden: Some(8),
            ..ModelConfig::miniature()
        };
        let c = load_backbone::<f32>(&path, target, 1).unwrap();
        let id = c.params().find("encoder.cls_token").unwrap();
        let src = m.params().find("encoder.cls_token").unwrap();
        assert_eq!(c.params().value(id), m.params().value(src));
        assert_eq!(c.head_param_ids().len(), 4);
    }
}
