//! Versioned binary checkpoints for [`TinyConvSegmenter`].
//!
//! Layout (little-endian): magic, `u32` version, `u32` layer count, then per
//! layer a `u16`-prefixed name and `u32` c_out, c_in, kh, kw; then a `u64`
//! parameter count, the `f32` parameters, and a CRC-32 of all prior bytes.

use std::io::Write;
use std::path::Path;

use super::conv::KSIZE;
use super::tiny::{TinyConvSegmenter, LAYERS};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WIREPIPE";
pub const CHECKPOINT_VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn encode_checkpoint(model: &TinyConvSegmenter) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(LAYERS.len() as u32).to_le_bytes());
    for l in &LAYERS {
        buf.extend_from_slice(&(l.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(l.name.as_bytes());
        for v in [l.shape.c_out, l.shape.c_in, KSIZE, KSIZE] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for &p in model.params() {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err("checkpoint truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TinyConvSegmenter> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 {
        return Err(format_err("checkpoint truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut c = Cursor { bytes: body, pos: 0 };
    if c.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(format_err("not a wirepipe checkpoint"));
    }
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(format_err("checkpoint checksum mismatch"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let n_layers = c.u32()? as usize;
    if n_layers != LAYERS.len() {
        return Err(format_err(format!("{n_layers} layers, expected {}", LAYERS.len())));
    }
    for l in &LAYERS {
        let len = c.u16()? as usize;
        let name = c.take(len)?;
        let dims = [c.u32()?, c.u32()?, c.u32()?, c.u32()?];
        let want = [l.shape.c_out, l.shape.c_in, KSIZE, KSIZE].map(|v| v as u32);
        if name != l.name.as_bytes() || dims != want {
            return Err(format_err(format!(
                "layer table mismatch at {}: found {} {:?}",
                l.name,
                String::from_utf8_lossy(name),
                dims
            )));
        }
    }
    let count = c.u64()? as usize;
    if count != TinyConvSegmenter::param_count() {
        return Err(format_err(format!(
            "{count} parameters, expected {}",
            TinyConvSegmenter::param_count()
        )));
    }
    let raw = c.take(
        count
            .checked_mul(4)
            .ok_or_else(|| format_err("parameter count overflow"))?,
    )?;
    if c.pos != body.len() {
        return Err(format_err("trailing bytes after parameter block"));
    }
    let params = raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    TinyConvSegmenter::from_params(params)
}

pub fn save_checkpoint(model: &TinyConvSegmenter, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(model))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TinyConvSegmenter> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_f32_exact() {
        let m = TinyConvSegmenter::new(3);
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        for (a, b) in m.params().iter().zip(back.params()) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert_eq!(encode_checkpoint(&back), bytes);
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&TinyConvSegmenter::new(3));
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Format(_))));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"WIRE").is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(decode_checkpoint(&wrong_magic).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = TinyConvSegmenter::new(8);
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(
            encode_checkpoint(&load_checkpoint(&path).unwrap()),
            encode_checkpoint(&m)
        );
    }
}
