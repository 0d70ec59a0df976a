//! NPAD tensor files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "NPAD"
//! 4       4     format_version, u32 LE
//! 8       8     n_rows, u64 LE
//! 16      8     n_cols, u64 LE
//! 24      4·n   payload, f32 LE, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NPAD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// A decoded tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

pub fn encode(rows: usize, cols: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(rows * cols, data.len(), "tensor shape does not match payload");
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let corrupt = |offset: usize, reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(bytes.len(), format!("header needs {HEADER_LEN} bytes")));
    }
    if &bytes[0..4] != MAGIC {
        return Err(corrupt(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(4, format!("unsupported format version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| corrupt(8, format!("shape {rows}x{cols} overflows")))?;
    if (bytes.len() as u64) < expected {
        return Err(corrupt(bytes.len(), format!("truncated payload, expected {expected} bytes")));
    }
    if (bytes.len() as u64) > expected {
        return Err(corrupt(expected as usize, "trailing bytes after payload".into()));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(corrupt(HEADER_LEN + 4 * i, "non-finite value".into()));
    }
    Ok(Tensor {
        rows: rows as usize,
        cols: cols as usize,
        data,
    })
}

/// Reads only the header, returning `(n_rows, n_cols)`.
pub fn read_header(path: &Path) -> Result<(usize, usize)> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::store(path, e))?;
    let mut head = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        let n = f.read(&mut head[got..]).map_err(|e| Error::store(path, e))?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got < HEADER_LEN || &head[0..4] != MAGIC {
        let offset = if got < HEADER_LEN { got } else { 0 };
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason: "bad or truncated header".into(),
        });
    }
    let rows = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(head[16..24].try_into().unwrap()) as usize;
    Ok((rows, cols))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::store(path, e))?;
    decode(&bytes, path)
}

/// Writes to a temporary sibling and renames it into place.
pub fn write(path: &Path, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    write_atomic(path, &encode(rows, cols, data))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::store(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::store(&tmp, e))?;
    f.sync_all().map_err(|e| Error::store(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::store(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let bytes = encode(2, 1, &[1.0, -2.5]);
        assert_eq!(&bytes[0..4], b"NPAD");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[28..32], &(-2.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn corrupt_inputs_name_offsets() {
        let p = Path::new("x.npad");
        let mut bytes = encode(2, 2, &[0.0; 4]);
        bytes[1] = b'X';
        match decode(&bytes, p) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let bytes = encode(2, 2, &[0.0; 4]);
        match decode(&bytes[..30], p) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, 30),
            other => panic!("{other:?}"),
        }
        let mut bytes = encode(1, 2, &[0.0, 0.0]);
        bytes[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode(&bytes, p) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, 28),
            other => panic!("{other:?}"),
        }
    }

    proptest::proptest! {
        #[test]
        fn roundtrip(rows in 0usize..6, cols in 0usize..6, seed in 0u32..1000) {
            let data: Vec<f32> = (0..rows * cols).map(|i| (i as f32 * 0.37 + seed as f32).sin()).collect();
            let t = decode(&encode(rows, cols, &data), Path::new("t")).unwrap();
            proptest::prop_assert_eq!(t, Tensor { rows, cols, data });
        }
    }
}
