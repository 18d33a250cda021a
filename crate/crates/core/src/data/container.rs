//! Shared binary container: 16-byte header, then a length-prefixed JSON
//! metadata block and little-endian `f64` tensors.
//!
//! ```text
//! offset 0   magic        4 bytes ("TGMD" / "TGMC")
//! offset 4   version      u32 LE
//! offset 8   payload len  u64 LE
//! offset 16  meta len     u64 LE
//!            meta         UTF-8 JSON
//!            tensors      f64 LE, row-major, in declared order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TagmError};

pub(crate) const HEADER_LEN: u64 = 16;
pub(crate) const FORMAT_VERSION: u32 = 1;

pub(crate) fn write(path: &Path, magic: &[u8; 4], meta: &str, tensors: &[f64]) -> Result<()> {
    let payload_len = 8 + meta.len() as u64 + 8 * tensors.len() as u64;
    let file = File::create(path).map_err(|e| TagmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| TagmError::io(path, e));
    put(magic)?;
    put(&FORMAT_VERSION.to_le_bytes())?;
    put(&payload_len.to_le_bytes())?;
    put(&(meta.len() as u64).to_le_bytes())?;
    put(meta.as_bytes())?;
    for v in tensors {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| TagmError::io(path, e))
}

pub(crate) struct Contents {
    pub meta: String,
    pub tensors: Vec<f64>,
}

fn format_err(path: &Path, message: impl Into<String>) -> TagmError {
    TagmError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub(crate) fn read(path: &Path, magic: &[u8; 4]) -> Result<Contents> {
    let file = File::open(path).map_err(|e| TagmError::io(path, e))?;
    let file_len = file.metadata().map_err(|e| TagmError::io(path, e))?.len();
    let mut r = BufReader::new(file);

    if file_len < HEADER_LEN {
        return Err(TagmError::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            available: file_len,
        });
    }
    let mut header = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut header).map_err(|e| TagmError::io(path, e))?;
    if &header[0..4] != magic {
        return Err(format_err(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&header[0..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format_err(
            path,
            format!("unsupported format version {version} (this build reads {FORMAT_VERSION})"),
        ));
    }
    let payload_len = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let available = file_len - HEADER_LEN;
    if available < payload_len {
        return Err(TagmError::Truncated {
            path: path.to_path_buf(),
            expected: payload_len,
            available,
        });
    }
    if available > payload_len {
        return Err(format_err(
            path,
            format!("{} trailing bytes after the declared payload", available - payload_len),
        ));
    }
    if payload_len < 8 {
        return Err(format_err(path, "payload too short for the metadata length field"));
    }

    let mut len_buf = [0u8; 8];
    r.read_exact(&mut len_buf).map_err(|e| TagmError::io(path, e))?;
    let meta_len = u64::from_le_bytes(len_buf);
    let rest = payload_len - 8;
    if meta_len > rest {
        return Err(format_err(
            path,
            format!("metadata length {meta_len} exceeds the remaining payload of {rest} bytes (offset 16)"),
        ));
    }
    let tensor_bytes = rest - meta_len;
    if tensor_bytes % 8 != 0 {
        return Err(format_err(
            path,
            format!("tensor section of {tensor_bytes} bytes is not a whole number of f64 values"),
        ));
    }

    let mut meta = vec![0u8; meta_len as usize];
    r.read_exact(&mut meta).map_err(|e| TagmError::io(path, e))?;
    let meta = String::from_utf8(meta).map_err(|_| format_err(path, "metadata is not valid UTF-8"))?;

    let mut raw = vec![0u8; tensor_bytes as usize];
    r.read_exact(&mut raw).map_err(|e| TagmError::io(path, e))?;
    let tensors = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Contents { meta, tensors })
}
