//! `.ckpt1` tensor container.
//!
//! Layout (little-endian):
//! - magic `CKPT1`
//! - u32 tensor count
//! - per tensor: u16 name length, UTF-8 name, u8 rank, rank × u32 dims,
//!   f32 data in row-major order
//! - the remainder of the file is a UTF-8 JSON metadata object
//!
//! Tensors are written in name order, so equal contents give equal bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 5] = b"CKPT1";

pub type TensorMap = BTreeMap<String, Tensor>;

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "ckpt1",
        msg: msg.into(),
    }
}

pub fn write(mut w: impl Write, tensors: &TensorMap, meta: &Value) -> Result<()> {
    let count = u32::try_from(tensors.len()).map_err(|_| bad("too many tensors"))?;
    w.write_all(MAGIC)?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| bad(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.shape().len()).map_err(|_| bad(format!("rank too high: {name}")))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| bad(format!("dimension exceeds u32: {name}")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    serde_json::to_writer(&mut w, meta)?;
    Ok(())
}

pub fn read(mut r: impl Read) -> Result<(TensorMap, Value)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { buf: &bytes };
    if cur.take(5)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let count = cur.u32()? as usize;
    let mut tensors = TensorMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| bad("tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad(format!("{name}: element count overflows")))?;
        let data = cur
            .take(numel)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
    }
    let meta = if cur.buf.is_empty() {
        Value::Object(Default::default())
    } else {
        serde_json::from_slice(cur.buf)?
    };
    Ok((tensors, meta))
}

pub fn save(path: &Path, tensors: &TensorMap, meta: &Value) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::from(e).in_file(path))?;
    let mut w = std::io::BufWriter::new(file);
    write(&mut w, tensors, meta)
        .and_then(|_| w.flush().map_err(Error::from))
        .map_err(|e| e.in_file(path))
}

pub fn load(path: &Path) -> Result<(TensorMap, Value)> {
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    read(std::io::BufReader::new(file)).map_err(|e| e.in_file(path))
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
