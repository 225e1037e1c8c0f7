//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic, format version, model config as JSON,
//! then every parameter array as name, rows, cols and raw f64 values, and a
//! trailing FNV-1a checksum over all preceding bytes.

use std::path::Path;

use crate::autograd::ParamStore;
use crate::model::{MassModel, ModelConfig};
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MASSNETC";
pub const FORMAT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn encode_checkpoint(model: &MassModel) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + config.len() + model.params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for (_, name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Version("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Version(format!("implausible length {n}")))
    }
}

/// Stored config and named parameter arrays, in file order.
pub struct CheckpointData {
    pub config: ModelConfig,
    pub arrays: Vec<(String, Tensor)>,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointData> {
    if bytes.len() < MAGIC.len() + 4 + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Version("not a checkpoint file".into()));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    if fnv1a(body) != stored {
        return Err(Error::Version("checksum mismatch (truncated or corrupt)".into()));
    }
    let n = r.len()?;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?).map_err(|e| Error::Version(format!("bad config: {e}")))?;
    let count = r.len()?;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Version("non-utf8 layer name".into()))?
            .to_string();
        let rows = r.len()?;
        let cols = r.len()?;
        let raw = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| Error::Version("overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if r.pos != body.len() {
        return Err(Error::Version("trailing bytes".into()));
    }
    Ok(CheckpointData { config, arrays })
}

/// Copies `arrays` into `store` after checking every layer; nothing is
/// written unless all names and shapes agree.
pub fn assign_params(store: &mut ParamStore, arrays: &[(String, Tensor)]) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for (i, &id) in ids.iter().enumerate() {
        let name = store.name(id);
        let want = store.get(id).shape();
        match arrays.get(i) {
            None => {
                return Err(Error::CheckpointShape {
                    layer: name.to_string(),
                    reason: "missing from checkpoint".into(),
                })
            }
            Some((n, _)) if n != name => {
                return Err(Error::CheckpointShape {
                    layer: name.to_string(),
                    reason: format!("checkpoint has `{n}` at this position"),
                })
            }
            Some((_, t)) if t.shape() != want => {
                return Err(Error::CheckpointShape {
                    layer: name.to_string(),
                    reason: format!("expected {want:?}, checkpoint has {:?}", t.shape()),
                })
            }
            _ => {}
        }
    }
    if let Some((extra, _)) = arrays.get(ids.len()) {
        return Err(Error::CheckpointShape {
            layer: extra.clone(),
            reason: "not present in the model".into(),
        });
    }
    for (id, (_, t)) in ids.into_iter().zip(arrays) {
        *store.get_mut(id) = t.clone();
    }
    Ok(())
}

pub fn save_checkpoint(model: &MassModel, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Rebuilds the stored architecture and loads its weights.
pub fn load_checkpoint(path: &Path) -> Result<MassModel> {
    let data = read_checkpoint(path)?;
    let mut model = MassModel::new(&data.config, 0)?;
    assign_params(&mut model.params, &data.arrays)?;
    Ok(model)
}

/// Loads weights into an existing model, which must have the same layout.
pub fn load_weights(model: &mut MassModel, path: &Path) -> Result<()> {
    let data = read_checkpoint(path)?;
    assign_params(&mut model.params, &data.arrays)
}
