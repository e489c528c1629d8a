use std::io::{Read, Write};

use crate::error::{corrupted, invalid, Result};
use crate::wire;

/// Bytes used to store one uncompressed code.
pub const UNCOMPRESSED_CODE_BYTES: usize = 2;

/// Row-major grid of code indices for one level.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    rows: usize,
    cols: usize,
    indices: Vec<u16>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, indices: Vec<u16>) -> Result<Self> {
        if indices.len() != rows * cols {
            return invalid(format!("{rows}x{cols} grid given {} indices", indices.len()));
        }
        Ok(Self { rows, cols, indices })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.indices[row * self.cols + col]
    }
}

/// Two-level code grid of one image: `top` models global structure, `bottom` local detail.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeGrid {
    pub top: Grid,
    pub bottom: Grid,
}

impl CodeGrid {
    pub fn levels(&self) -> [&Grid; 2] {
        [&self.top, &self.bottom]
    }

    pub fn num_codes(&self) -> usize {
        self.top.indices.len() + self.bottom.indices.len()
    }

    /// Storage cost of the grid's indices at 16 bits per code.
    pub fn uncompressed_bytes(&self) -> usize {
        self.num_codes() * UNCOMPRESSED_CODE_BYTES
    }

    pub fn check_indices(&self, codebook_size: usize) -> Result<()> {
        for (name, g) in [("top", &self.top), ("bottom", &self.bottom)] {
            if let Some(&k) = g.indices.iter().find(|&&k| usize::from(k) >= codebook_size) {
                return invalid(format!("{name} code {k} outside codebook of size {codebook_size}"));
            }
        }
        Ok(())
    }

    /// Header of four little-endian `u32` (top rows, top cols, bottom rows, bottom cols),
    /// then every index as a little-endian `u16`, top level first.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for d in [self.top.rows, self.top.cols, self.bottom.rows, self.bottom.cols] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for k in self.top.indices.iter().chain(&self.bottom.indices) {
            w.write_all(&k.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.uncompressed_bytes());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = wire::read_u32(r)? as usize;
        }
        if dims[0] * dims[1] > 1 << 24 || dims[2] * dims[3] > 1 << 24 {
            return corrupted("code grid too large");
        }
        let mut read_level = |rows: usize, cols: usize| -> Result<Grid> {
            let indices = (0..rows * cols).map(|_| wire::read_u16(r)).collect::<Result<Vec<_>>>()?;
            Grid::new(rows, cols, indices)
        };
        let top = read_level(dims[0], dims[1])?;
        let bottom = read_level(dims[2], dims[3])?;
        Ok(Self { top, bottom })
    }
}
