//! The `FT1` feature file: a 4-byte magic `"FT1\n"`, little-endian `u32` rows
//! and cols, then `rows·cols` little-endian `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FT1\n";
pub const HEADER_LEN: usize = 12;

/// Total file size for a `rows × cols` payload.
pub fn file_len(rows: usize, cols: usize) -> usize {
    HEADER_LEN + 4 * rows * cols
}

pub fn encode_feature(x: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(x.rows()).map_err(|_| Error::data("too many rows for FT1"))?;
    let cols = u32::try_from(x.cols()).map_err(|_| Error::data("too many cols for FT1"))?;
    let mut out = Vec::with_capacity(file_len(x.rows(), x.cols()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for (i, &v) in x.data().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::data(format!(
                "value {v} at element {i} is not representable as a finite f32"
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

/// Parses an FT1 buffer. Errors carry the byte offset of the problem.
pub fn decode_feature(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!(
            "truncated header at byte offset {}: need {HEADER_LEN} bytes",
            bytes.len()
        ));
    }
    if let Some(i) = (0..4).find(|&i| bytes[i] != MAGIC[i]) {
        return Err(format!("bad magic at byte offset {i}"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = file_len(rows, cols);
    if bytes.len() != expected {
        return Err(format!(
            "payload length mismatch at byte offset {}: {rows}x{cols} needs {expected} bytes, file has {}",
            bytes.len().min(expected),
            bytes.len()
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format!(
                "non-finite value at byte offset {}",
                HEADER_LEN + 4 * i
            ));
        }
        data.push(f64::from(v));
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn read_feature(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::ingestion(path, format!("cannot read: {e}")))?;
    decode_feature(&bytes).map_err(|msg| Error::ingestion(path, msg))
}

/// Reads only the 12-byte header and returns `(rows, cols)`.
pub fn read_feature_header(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::ingestion(path, format!("cannot read: {e}")))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::ingestion(path, "bad FT1 header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    Ok((rows, cols))
}

/// Writes atomically (temp file, then rename).
pub fn write_feature(x: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_feature(x)?;
    write_atomic(path.as_ref(), &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
