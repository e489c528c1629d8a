//! Little-endian primitives shared by the binary file formats.

use std::io::{self, Read, Write};

use crate::error::{corrupted, DrrError, Result};

pub(crate) fn write_magic<W: Write>(w: &mut W, magic: &[u8; 4], version: u16) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())
}

/// Reads and checks a 4-byte magic plus a u16 format version.
pub(crate) fn read_magic<R: Read>(r: &mut R, magic: &[u8; 4], version: u16) -> Result<()> {
    let mut got = [0u8; 4];
    read_exact(r, &mut got)?;
    if &got != magic {
        return corrupted(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        ));
    }
    let v = read_u16(r)?;
    if v != version {
        return corrupted(format!("unsupported format version {v}"));
    }
    Ok(())
}

/// `read_exact` that reports truncation as corruption instead of an I/O failure.
pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            DrrError::Corrupted("truncated input".into())
        } else {
            DrrError::Io(e)
        }
    })
}

macro_rules! le_reader {
    ($name:ident, $ty:ty) => {
        pub(crate) fn $name<R: Read>(r: &mut R) -> Result<$ty> {
            let mut b = [0u8; std::mem::size_of::<$ty>()];
            read_exact(r, &mut b)?;
            Ok(<$ty>::from_le_bytes(b))
        }
    };
}

le_reader!(read_u8, u8);
le_reader!(read_u16, u16);
le_reader!(read_u32, u32);
le_reader!(read_u64, u64);
le_reader!(read_f64, f64);

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| read_f64(r)).collect()
}

pub(crate) fn read_dim<R: Read>(r: &mut R, what: &str, max: u32) -> Result<usize> {
    let v = read_u32(r)?;
    if v == 0 || v > max {
        return corrupted(format!("{what} out of range: {v}"));
    }
    Ok(v as usize)
}

/// Fails unless the reader is fully consumed.
pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => corrupted("trailing bytes after payload"),
    }
}
