//! Binary checkpoint files: named f64 tensors with a magic header.
//!
//! Layout, all little-endian: 8-byte magic, u32 format version, u64 tensor
//! count, then per tensor a u32 name length, the UTF-8 name, u64 rows,
//! u64 cols, and rows*cols f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GSCKPT01";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, entries: &[(String, &Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(tensor.rows() as u64).to_le_bytes())?;
        w.write_all(&(tensor.cols() as u64).to_le_bytes())?;
        for v in tensor.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let display = path.display().to_string();
    let bad = |detail: &str| Error::format(display.clone(), detail);
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short for header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic, not a checkpoint file"));
    }
    let version = read_u32(&mut r).map_err(|_| bad("truncated version"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let count = read_u64(&mut r).map_err(|_| bad("truncated tensor count"))?;

    let mut entries = Vec::with_capacity(count as usize);
    for i in 0..count {
        let name_len = read_u32(&mut r).map_err(|_| bad("truncated name length"))? as usize;
        if name_len > 4096 {
            return Err(bad(&format!("implausible name length {name_len}")));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| bad(&format!("tensor {i} name is not UTF-8")))?;
        let rows = read_u64(&mut r).map_err(|_| bad("truncated rows"))? as usize;
        let cols = read_u64(&mut r).map_err(|_| bad("truncated cols"))? as usize;
        let numel = rows
            .checked_mul(cols)
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| bad(&format!("implausible shape {rows}x{cols}")))?;
        let mut data = vec![0.0f64; numel];
        let mut buf = [0u8; 8];
        for slot in &mut data {
            r.read_exact(&mut buf).map_err(|_| bad(&format!("truncated data in '{name}'")))?;
            *slot = f64::from_le_bytes(buf);
        }
        entries.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(entries)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = Tensor::from_rows(&[&[1.5, -2.25e-300], &[f64::MIN_POSITIVE, 0.1 + 0.2]]);
        let b = Tensor::scalar(-0.0);
        save_checkpoint(&path, &[("enc.w".into(), &a), ("enc.b".into(), &b)]).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "enc.w");
        for (x, y) in loaded[0].1.as_slice().iter().zip(a.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(loaded[1].1.item().to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let garbage = dir.path().join("garbage.ckpt");
        std::fs::write(&garbage, b"not a checkpoint at all").unwrap();
        assert!(load_checkpoint(&garbage).is_err());

        let path = dir.path().join("model.ckpt");
        let t = Tensor::zeros(4, 4);
        save_checkpoint(&path, &[("w".into(), &t)]).unwrap();
        let full = std::fs::read(&path).unwrap();
        let truncated = dir.path().join("cut.ckpt");
        std::fs::write(&truncated, &full[..full.len() - 9]).unwrap();
        assert!(load_checkpoint(&truncated).is_err());
    }
}
