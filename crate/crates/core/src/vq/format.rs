//! `DRRC` codec parameter files.
//!
//! Layout, all little-endian: magic `DRRC`, `u16` format version, then the geometry
//! header (`u32` channels, patch, pool, codebook size, dim; `f64` beta; `u8` frozen
//! flag), then every matrix as `f64`: bottom encoder, top encoder, bottom decoder,
//! top decoder (weights row-major, then bias), and finally the top and bottom codebooks.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Codebook, CodecGeometry, CodecParams, CodecWeights};
use crate::error::{corrupted, Result};
use crate::nn::Linear;
use crate::wire;

const MAGIC: &[u8; 4] = b"DRRC";
const VERSION: u16 = 1;

impl CodecParams {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let g = self.geometry();
        wire::write_magic(w, MAGIC, VERSION)?;
        for d in [g.channels, g.patch, g.pool, g.codebook_size, g.dim] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.beta().to_le_bytes())?;
        w.write_all(&[u8::from(self.is_frozen())])?;
        let weights = self.weights();
        for layer in weights.layers() {
            wire::write_f64s(w, layer.weight())?;
            wire::write_f64s(w, layer.bias())?;
        }
        for cb in &weights.codebooks {
            wire::write_f64s(w, cb.vectors())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        wire::read_magic(r, MAGIC, VERSION)?;
        let channels = wire::read_dim(r, "channels", 4096)?;
        let patch = wire::read_dim(r, "patch", 4096)?;
        let pool = wire::read_dim(r, "pool", 4096)?;
        let codebook_size = wire::read_dim(r, "codebook size", 1 << 16)?;
        let dim = wire::read_dim(r, "embedding dim", 1 << 16)?;
        let geometry = CodecGeometry { channels, patch, pool, codebook_size, dim };
        if geometry.patch_dim().saturating_mul(dim) > 1 << 28 || codebook_size * dim > 1 << 28 {
            return corrupted("codec dimensions too large");
        }
        let beta = wire::read_f64(r)?;
        let frozen = match wire::read_u8(r)? {
            0 => false,
            1 => true,
            v => return corrupted(format!("bad frozen flag {v}")),
        };
        let mut read_linear = |inputs: usize, outputs: usize| -> Result<Linear> {
            let weight = wire::read_f64s(r, inputs * outputs)?;
            let bias = wire::read_f64s(r, outputs)?;
            Ok(Linear::from_parts(inputs, outputs, weight, bias).expect("sizes match by construction"))
        };
        let p = geometry.patch_dim();
        let enc_bottom = read_linear(p, dim)?;
        let enc_top = read_linear(dim, dim)?;
        let dec_bottom = read_linear(dim, p)?;
        let dec_top = read_linear(dim, p)?;
        let top = Codebook::new(codebook_size, dim, wire::read_f64s(r, codebook_size * dim)?)?;
        let bottom = Codebook::new(codebook_size, dim, wire::read_f64s(r, codebook_size * dim)?)?;
        wire::expect_eof(r)?;
        let weights = CodecWeights { enc_bottom, enc_top, dec_bottom, dec_top, codebooks: [top, bottom] };
        let mut params = CodecParams::from_weights(geometry, weights, beta)
            .or_else(|e| corrupted(format!("invalid codec file: {e}")))?;
        params.set_frozen(frozen);
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::DrrError;

    #[test]
    fn codec_file_round_trip_and_header() {
        let g = CodecGeometry { channels: 3, patch: 2, pool: 2, codebook_size: 8, dim: 3 };
        let params = CodecParams::init(g, 0.25, 7).unwrap().freeze();
        let bytes = params.to_bytes();
        assert_eq!(&bytes[..4], b"DRRC");
        assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
        assert_eq!(&bytes[6..10], &3u32.to_le_bytes());
        let p = g.patch_dim();
        let floats = (p * 3 + 3) + (3 * 3 + 3) + 2 * (3 * p + p) + 2 * 8 * 3;
        assert_eq!(bytes.len(), 6 + 20 + 8 + 1 + 8 * floats);
        // Codebooks are the last matrices in the file.
        let tail = &bytes[bytes.len() - 2 * 8 * 3 * 8..];
        assert_eq!(&tail[..8], &params.weights().codebooks[0].vectors()[0].to_le_bytes());

        let back = CodecParams::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, params);
        assert!(back.is_frozen());
        assert!(matches!(CodecParams::read_from(&mut &bytes[..bytes.len() - 3]), Err(DrrError::Corrupted(_))));
    }
}
