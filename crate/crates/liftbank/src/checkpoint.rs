//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"LFBK"  u32 version  u32 text_len  text (UTF-8 model config)
//! u32 entry_count
//! per entry: u32 name_len  name  u8 kind (0 param, 1 buffer)
//!            u32 ndim  u64 dims[ndim]  f64 values[prod(dims)]
//! ```
//!
//! Entries follow the pipeline's traversal order. Loading rebuilds the
//! pipeline from the embedded config and then overwrites every tensor, so a
//! file and the code that reads it must agree on names and shapes.

use std::path::Path;

use liftbank_core::masking::EnhancementPipeline;
use liftbank_core::{Parameterized, Tensor};

use crate::config::RunConfig;
use crate::CliError;

pub const MAGIC: &[u8; 4] = b"LFBK";
pub const VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Usage(format!("invalid checkpoint: {}", msg.into()))
}

pub fn to_bytes(cfg: &RunConfig, pipeline: &EnhancementPipeline) -> Vec<u8> {
    let text = cfg.model_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let params = pipeline.params();
    let buffers = pipeline.buffers();
    out.extend_from_slice(&((params.len() + buffers.len()) as u32).to_le_bytes());
    let entries = params
        .iter()
        .map(|e| (KIND_PARAM, e))
        .chain(buffers.iter().map(|e| (KIND_BUFFER, e)));
    for (kind, (name, t)) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(kind);
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CliError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("text is not UTF-8"))
    }
}

struct Entry {
    name: String,
    kind: u8,
    tensor: Tensor,
}

pub fn from_bytes(buf: &[u8]) -> Result<(RunConfig, EnhancementPipeline), CliError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let cfg = RunConfig::parse(&r.string()?)?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string()?;
        let kind = r.u8()?;
        if kind != KIND_PARAM && kind != KIND_BUFFER {
            return Err(bad(format!("{name}: unknown entry kind {kind}")));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(usize::try_from(r.u64()?).map_err(|_| bad("dimension overflow"))?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|l| l.checked_mul(8).is_some_and(|b| b <= buf.len()))
            .ok_or_else(|| bad(format!("{name}: implausible shape {shape:?}")))?;
        let data = r
            .take(8 * len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        entries.push(Entry { name, kind, tensor });
    }
    if r.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }

    let mut pipeline = cfg.build_pipeline()?;
    let n_params = pipeline.params().len();
    let n_buffers = pipeline.buffers().len();
    if n_params + n_buffers != entries.len() {
        return Err(bad(format!(
            "{} entries, the configured model has {}",
            entries.len(),
            n_params + n_buffers
        )));
    }
    let mut rest = entries.into_iter();
    assign(pipeline.params_mut(), KIND_PARAM, &mut rest)?;
    assign(pipeline.buffers_mut(), KIND_BUFFER, &mut rest)?;
    Ok((cfg, pipeline))
}

fn assign(
    slots: Vec<(String, &mut Tensor)>,
    kind: u8,
    entries: &mut impl Iterator<Item = Entry>,
) -> Result<(), CliError> {
    for (name, slot) in slots {
        let e = entries.next().ok_or_else(|| bad("too few entries"))?;
        if e.kind != kind || e.name != name {
            return Err(bad(format!("expected {name}, found {}", e.name)));
        }
        if e.tensor.shape() != slot.shape() {
            return Err(bad(format!(
                "{name}: shape {:?}, model expects {:?}",
                e.tensor.shape(),
                slot.shape()
            )));
        }
        *slot = e.tensor;
    }
    Ok(())
}

pub fn save(path: &Path, cfg: &RunConfig, pipeline: &EnhancementPipeline) -> Result<(), CliError> {
    std::fs::write(path, to_bytes(cfg, pipeline))
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<(RunConfig, EnhancementPipeline), CliError> {
    let buf = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    from_bytes(&buf).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
}
