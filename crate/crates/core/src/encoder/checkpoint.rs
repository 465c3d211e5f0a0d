//! Binary container: magic `DAGP`, `u32` format version, `u32`-length-prefixed
//! JSON config, then one record per tensor until end of file. A record is a
//! `u32` name length, the UTF-8 name, a `u32` rank, `rank` `u32` dims, and
//! the row-major data as `f32`. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{EncoderConfig, EncoderParams, LayerParams};
use crate::numcore::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DAGP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes the base encoder. Adapters are task-specific and not stored.
pub fn checkpoint_to_bytes(cfg: &EncoderConfig, params: &EncoderParams) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
    put_u32(&mut buf, json.len())?;
    buf.extend_from_slice(&json);
    for (name, t) in params.base().named_tensors() {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, 2)?;
        put_u32(&mut buf, t.rows())?;
        put_u32(&mut buf, t.cols())?;
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(EncoderConfig, EncoderParams)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes, not a checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let len = r.u32("config length")?;
    let cfg: EncoderConfig =
        serde_json::from_slice(r.take(len, "config")?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut records = Vec::new();
    while !r.done() {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        if rank != 2 {
            return Err(Error::Checkpoint(format!("{name}: rank {rank}, expected 2")));
        }
        let rows = r.u32("dims")?;
        let cols = r.u32("dims")?;
        let count = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint(format!("{name}: dims overflow")))?;
        let raw = r.take(count.checked_mul(4).unwrap_or(usize::MAX), &name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        let t = Tensor::new(rows, cols, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        records.push((name, t));
    }

    let mut expected = vec![("w_in".to_string(), (cfg.in_features, cfg.hidden))];
    expected.extend((0..cfg.layers).map(|l| (format!("layer{l}.w0"), (cfg.hidden, cfg.hidden))));
    if records.len() != expected.len() {
        return Err(Error::Checkpoint(format!("{} tensors stored, config implies {}", records.len(), expected.len())));
    }
    for ((name, t), (want, shape)) in records.iter().zip(&expected) {
        if name != want {
            return Err(Error::Checkpoint(format!("found tensor {name:?} where {want:?} belongs")));
        }
        if t.shape() != *shape {
            return Err(Error::Checkpoint(format!("{name}: stored shape {:?}, config implies {shape:?}", t.shape())));
        }
    }
    let mut it = records.into_iter().map(|(_, t)| t);
    let w_in = it.next().expect("counted");
    let layers = it.map(|w0| LayerParams { w0, glora: None }).collect();
    Ok((cfg, EncoderParams { w_in, layers, selected_edges: None }))
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &EncoderConfig, params: &EncoderParams) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_to_bytes(cfg, params)?;
    fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EncoderConfig, EncoderParams)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    checkpoint_from_bytes(&bytes)
}

/// Loads a checkpoint and checks that its backbone matches `requested`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, requested: &EncoderConfig) -> Result<EncoderParams> {
    let (stored, params) = load_checkpoint(path)?;
    if !stored.same_backbone(requested) {
        return Err(Error::Checkpoint(format!(
            "checkpoint dims {:?} do not match requested dims {:?}",
            stored.dims(),
            requested.dims()
        )));
    }
    Ok(params)
}
