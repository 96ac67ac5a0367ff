//! Self-describing tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! u8   version (= 1)
//! u32  entry count
//! per entry:
//!   u16  name length, then UTF-8 name bytes
//!   u8   rank, then rank × u32 dimensions
//!   u64  offset of the first value, in f32 elements from the payload start
//! payload: f32 values of every entry, row-major, in header order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{NumError, Tensor};

pub const CHECKPOINT_VERSION: u8 = 1;

pub fn write_checkpoint<W: Write>(out: &mut W, entries: &[(String, Tensor)]) -> Result<(), NumError> {
    let mut header = vec![CHECKPOINT_VERSION];
    header.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(NumError::Checkpoint(format!("name too long: {name}")));
        }
        header.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        header.extend_from_slice(bytes);
        header.push(t.shape().len() as u8);
        for &d in t.shape() {
            header.extend_from_slice(&(d as u32).to_le_bytes());
        }
        header.extend_from_slice(&offset.to_le_bytes());
        offset += t.len() as u64;
    }
    out.write_all(&header)?;
    let mut payload = Vec::with_capacity(offset as usize * 4);
    for (_, t) in entries {
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&payload)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumError> {
        if self.pos + n > self.buf.len() {
            return Err(NumError::Checkpoint(format!(
                "truncated file at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NumError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NumError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NumError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NumError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Vec<(String, Tensor)>, NumError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    let version = cur.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(NumError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec())
            .map_err(|e| NumError::Checkpoint(format!("bad name: {e}")))?;
        let rank = cur.u8()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let offset = cur.u64()? as usize;
        header.push((name, shape, offset));
    }
    let payload = &buf[cur.pos..];
    let mut out = Vec::with_capacity(count);
    for (name, shape, offset) in header {
        let n: usize = shape.iter().product();
        let start = offset * 4;
        let end = start + n * 4;
        if end > payload.len() {
            return Err(NumError::Checkpoint(format!(
                "payload of {name} runs past end of file"
            )));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, entries: &[(String, Tensor)]) -> Result<(), NumError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut file, entries)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>, NumError> {
    let mut file = std::fs::File::open(path)?;
    read_checkpoint(&mut file)
}
