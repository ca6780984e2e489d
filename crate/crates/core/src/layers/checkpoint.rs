//! Binary model checkpoints.
//!
//! Layout (little endian): magic `HGNNCKPT`, `u32` version, `u64` spec-JSON
//! length, the JSON, `u64` tensor count, then per tensor `u32` name length,
//! name, `u32` rank, `u64` dims, `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::{Model, ModelSpec};

const MAGIC: &[u8; 8] = b"HGNNCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn of(model: &Model) -> Checkpoint {
        Checkpoint {
            spec: model.spec().clone(),
            params: model
                .params()
                .named_values()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        let mut m = Model::new(self.spec, 0)?;
        m.params_mut().load(self.params)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.spec)?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64()? as usize;
        let spec: ModelSpec = serde_json::from_slice(r.take(len)?)?;
        let count = r.u64()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nl = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nl)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            params.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { spec, params })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let bytes = Checkpoint::of(model).to_bytes()?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::*;
    use crate::layers::{ModelConfig, ModelKind};

    #[test]
    fn exact_round_trip() {
        let g = small_graph();
        let view = small_view(&g);
        let mut cfg = ModelConfig::new(ModelKind::Rgcn);
        cfg.hidden = 5;
        let m = Model::new(ModelSpec::from_view(cfg, 3, &view, vec![]), 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        write_checkpoint(&p, &m).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(Checkpoint::of(&back), Checkpoint::of(&m));
        let x = features(7, 3, 1);
        assert_eq!(back.predict(&view, &x).unwrap(), m.predict(&view, &x).unwrap());
    }

    #[test]
    fn corrupt_input_is_a_format_error() {
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Format(_))));
        let g = small_graph();
        let view = small_view(&g);
        let m = Model::new(ModelSpec::from_view(ModelConfig::new(ModelKind::Gcn), 3, &view, vec![]), 0).unwrap();
        let bytes = Checkpoint::of(&m).to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
    }
}
