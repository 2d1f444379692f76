//! `STPC` checkpoint files.
//!
//! Layout, little-endian throughout: magic, `u32` version, `u32`-prefixed
//! UTF-8 config block, mean and std as `f64`, `u32` parameter count, then per
//! parameter a `u16`-prefixed name, `u8` rank, `u32` dims and `f32` values.

use std::path::Path;

use super::{Model, ModelConfig};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::graph::RoadGraph;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"STPC";
const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config().to_kv();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let norm = model.normalizer();
    out.extend_from_slice(&norm.mean.to_le_bytes());
    out.extend_from_slice(&norm.std.to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dims().len() as u8);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

/// Rebuilds a model on `graph`. Every stored parameter must exist in the
/// configuration's layout with matching dims, and none may be missing.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], graph: &RoadGraph) -> Result<Model<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}, expected STPC")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = r.u32("config length")? as usize;
    let config = ModelConfig::from_kv(r.utf8(cfg_len, "config block")?)?;
    if config.n_nodes != graph.n_nodes() {
        return Err(Error::Dimension(format!(
            "checkpoint was trained on {} nodes, graph has {}",
            config.n_nodes,
            graph.n_nodes()
        )));
    }
    let normalizer = Normalizer::new(r.f64("mean")?, r.f64("std")?)?;
    let mut model = Model::<T>::skeleton(config, graph, normalizer)?;
    let specs = config.param_specs(model.edges().m_spatial());

    let count = r.u32("parameter count")? as usize;
    let mut loaded = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = r.utf8(len, "parameter name")?.to_string();
        let spec = specs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name:?} for this configuration")))?;
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims != spec.dims {
            return Err(Error::Dimension(format!("parameter {name:?} stored as {dims:?}, expected {:?}", spec.dims)));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 4, &name)?;
        let data = raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
        loaded.push((name, Tensor::new(dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    for spec in &specs {
        let k = loaded
            .iter()
            .position(|(n, _)| *n == spec.name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {:?}", spec.name)))?;
        let (name, t) = loaded.swap_remove(k);
        model.params_mut().insert(name, t)?;
    }
    if let Some((dup, _)) = loaded.first() {
        return Err(Error::Format(format!("parameter {dup:?} stored twice")));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>, graph: &RoadGraph) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, graph)
}
