//! Flat little-endian weight archive.
//!
//! The file is a back-to-back sequence of records, one per parameter in
//! canonical order:
//!
//! ```text
//! u32 name_len | name (utf-8) | u32 rank | u32 dims[rank] | f32 data[prod(dims)]
//! ```
//!
//! A text sidecar lists `name<TAB>d0xd1x...` per line for diffing.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAX_NAME: u32 = 4096;
const MAX_RANK: u32 = 8;

pub fn write_checkpoint<'a, T: Scalar, W: Write>(mut w: W, entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Result<()> {
    for (name, tensor) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| NnError::Format(format!("truncated record: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<T>)>> {
    let mut out = Vec::new();
    loop {
        let mut first = [0u8; 4];
        match r.read_exact(&mut first) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(first);
        if name_len == 0 || name_len > MAX_NAME {
            return Err(NnError::Format(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(|e| NnError::Format(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| NnError::Format("name is not utf-8".into()))?;
        let rank = read_u32(&mut r)?;
        if rank == 0 || rank > MAX_RANK {
            return Err(NnError::Format(format!("{name}: implausible rank {rank}")));
        }
        let dims = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(|e| NnError::Format(format!("{name}: truncated data: {e}")))?;
        let data = raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
        let tensor = Tensor::from_vec(&dims, data).map_err(|e| NnError::Format(format!("{name}: {e}")))?;
        out.push((name, tensor));
    }
    Ok(out)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Writes the archive and its `.txt` sidecar.
pub fn save_checkpoint<'a, T: Scalar>(path: &Path, entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)> + Clone) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), entries.clone())?;
    let mut side = BufWriter::new(File::create(sidecar_path(path))?);
    for (name, t) in entries {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        writeln!(side, "{name}\t{}", dims.join("x"))?;
    }
    side.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
