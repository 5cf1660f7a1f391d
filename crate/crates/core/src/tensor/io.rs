//! Portable binary tensor records.
//!
//! Layout: `b"MSFT"`, format version (u8), rank (u8), each dim as u32 LE,
//! then the row-major data as f32 LE. A checkpoint weight file is a plain
//! concatenation of records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MSFT";
pub const VERSION: u8 = 1;

pub fn write_tensor<W: Write>(out: &mut W, tensor: &Tensor) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION, tensor.dims().len() as u8])?;
    for &d in tensor.dims() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in tensor.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn encode_tensor(tensor: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(6 + 4 * tensor.dims().len() + 4 * tensor.len());
    write_tensor(&mut buf, tensor).expect("writing to a Vec cannot fail");
    buf
}

/// Reads one record. Returns `Ok(None)` on a clean end of stream.
pub fn read_tensor<R: Read>(input: &mut R) -> std::result::Result<Option<Tensor>, String> {
    let mut magic = [0u8; 4];
    match input.read(&mut magic[..1]) {
        Ok(0) => return Ok(None),
        Ok(_) => {}
        Err(e) => return Err(e.to_string()),
    }
    input.read_exact(&mut magic[1..]).map_err(|e| e.to_string())?;
    if &magic != MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let mut header = [0u8; 2];
    input.read_exact(&mut header).map_err(|e| e.to_string())?;
    let [version, rank] = header;
    if version != VERSION {
        return Err(format!("unsupported tensor format version {version}"));
    }
    let rank = rank as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(format!("unsupported rank {rank}"));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut word = [0u8; 4];
    for _ in 0..rank {
        input.read_exact(&mut word).map_err(|e| e.to_string())?;
        dims.push(u32::from_le_bytes(word) as usize);
    }
    let len: usize = dims.iter().product();
    let mut raw = vec![0u8; len * 4];
    input.read_exact(&mut raw).map_err(|e| format!("truncated data: {e}"))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(dims, data).map(Some).map_err(|e| e.to_string())
}

pub fn save_tensors(path: &Path, tensors: &[&Tensor]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for t in tensors {
        write_tensor(&mut out, t).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut tensors = Vec::new();
    loop {
        match read_tensor(&mut input) {
            Ok(Some(t)) => tensors.push(t),
            Ok(None) => return Ok(tensors),
            Err(reason) => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason,
                })
            }
        }
    }
}
