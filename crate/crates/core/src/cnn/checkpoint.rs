//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "QLFCNN\0\0"
//! version    u32      1
//! arch       u32 input_channels, input_height, input_width, kernel_half,
//!            stem_maps, block_count, then per block (u32 maps, u8 pool_after),
//!            u32 dense_hidden, u32 classes
//! tensors    u32 tensor_count, then per tensor u64 length + f64 values,
//!            in CnnModel::params() order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::arch::{ArchSpec, BlockSpec};
use super::model::CnnModel;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"QLFCNN\0\0";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid("value does not fit in u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(model: &CnnModel) -> Result<Vec<u8>> {
    let a = model.arch();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        a.input_channels,
        a.input_height,
        a.input_width,
        a.kernel_half,
        a.stem_maps,
        a.blocks.len(),
    ] {
        put_u32(&mut out, v)?;
    }
    for b in &a.blocks {
        put_u32(&mut out, b.maps)?;
        out.push(u8::from(b.pool_after));
    }
    put_u32(&mut out, a.dense_hidden)?;
    put_u32(&mut out, a.classes)?;
    let params = model.params();
    put_u32(&mut out, params.len())?;
    for p in params {
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!("truncated checkpoint at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<CnnModel, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err("bad magic bytes".into());
    }
    let version = c.u32()? as u32;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let input_channels = c.u32()?;
    let input_height = c.u32()?;
    let input_width = c.u32()?;
    let kernel_half = c.u32()?;
    let stem_maps = c.u32()?;
    let nblocks = c.u32()?;
    let mut blocks = Vec::with_capacity(nblocks.min(1024));
    for _ in 0..nblocks {
        let maps = c.u32()?;
        let pool_after = match c.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(format!("invalid pool flag {b}")),
        };
        blocks.push(BlockSpec { maps, pool_after });
    }
    let arch = ArchSpec {
        input_channels,
        input_height,
        input_width,
        kernel_half,
        stem_maps,
        blocks,
        dense_hidden: c.u32()?,
        classes: c.u32()?,
    };
    let mut model = CnnModel::build(&arch, 0).map_err(|e| e.to_string())?;
    let count = c.u32()?;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(format!("expected {} tensors, found {count}", params.len()));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let len = c.u64()? as usize;
        if len != p.len() {
            return Err(format!("tensor {i}: expected {} values, found {len}", p.len()));
        }
        for v in p.iter_mut() {
            *v = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
            if !v.is_finite() {
                return Err(format!("tensor {i} holds a non-finite value"));
            }
        }
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    Ok(model)
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<CnnModel> {
    decode_inner(bytes).map_err(|m| Error::parse(origin, m))
}

pub fn save(model: &CnnModel, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<CnnModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let m = CnnModel::build(&ArchSpec::desk(2, 8, 8, 3), 5).unwrap();
        let bytes = encode(&m).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, m);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, Path::new("mem")), Err(Error::Parse { .. })));
        assert!(decode(&bytes[..bytes.len() - 3], Path::new("mem")).is_err());
    }
}
