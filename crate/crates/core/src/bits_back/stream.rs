//! Whole-image streams: initial bits, per-level models, and the `DRRS` stream format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::coding::{BlockStats, CodingTables, Scheme, Tracker};
use super::fit::{finetune, fit, FitConfig};
use super::model::{ChainShape, LatentChainModel};
use crate::error::{corrupted, invalid, DrrError, Result};
use crate::rans::{AnsCoder, STATE_LOWER};
use crate::vq::{CodeGrid, Grid};
use crate::wire;

const MAGIC: &[u8; 4] = b"DRRS";

pub const DEFAULT_INITIAL_BITS: usize = 256;
pub const DEFAULT_INITIAL_SEED: u64 = 0x0dd5_eed5_b175_ba7c;

/// Pseudo-random bits lent to the coder before the first pop.
///
/// Encoder and decoder regenerate the same bits from `seed`, so only the part of the
/// initial stack that encoding actually consumed needs to be stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitialBits {
    /// Number of bits on the initial stack; a multiple of 8.
    pub bits: usize,
    pub seed: u64,
}

impl Default for InitialBits {
    fn default() -> Self {
        Self { bits: DEFAULT_INITIAL_BITS, seed: DEFAULT_INITIAL_SEED }
    }
}

impl InitialBits {
    pub fn new(bits: usize, seed: u64) -> Result<Self> {
        if !bits.is_multiple_of(8) || bits > 1 << 24 {
            return invalid(format!("initial bits must be a multiple of 8 up to 2^24, got {bits}"));
        }
        Ok(Self { bits, seed })
    }

    /// Coder holding `bits / 8` random stack bytes over a random state in `[2^32, 2^33)`.
    pub fn coder(&self) -> AnsCoder {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut stack = vec![0u8; self.bits / 8];
        rng.fill(stack.as_mut_slice());
        let state = STATE_LOWER | u64::from(rng.gen::<u32>());
        AnsCoder::from_parts(state, stack).expect("state lies in the normalized interval")
    }
}

/// Splits a code sequence into consecutive blocks of at most `block_len` symbols.
pub fn blocks_of(symbols: &[u16], block_len: usize) -> Vec<Vec<u16>> {
    symbols.chunks(block_len.max(1)).map(<[u16]>::to_vec).collect()
}

/// One latent chain model per code level, sharing a version number.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeModel {
    pub top: LatentChainModel,
    pub bottom: LatentChainModel,
}

impl CodeModel {
    pub fn new(top: LatentChainModel, bottom: LatentChainModel) -> Result<Self> {
        if top.version() != bottom.version() {
            return invalid(format!("level versions differ: {} vs {}", top.version(), bottom.version()));
        }
        if top.observation_alphabet() != bottom.observation_alphabet() {
            return invalid("level models disagree on the codebook size");
        }
        Ok(Self { top, bottom })
    }

    /// Seeded random models with the same shape for both levels.
    pub fn random(shape: &ChainShape, seed: u64) -> Result<Self> {
        Self::new(LatentChainModel::random(shape, seed)?, LatentChainModel::random(shape, seed ^ 0x9e37_79b9)?)
    }

    pub fn version(&self) -> u32 {
        self.top.version()
    }

    pub fn levels(&self) -> [&LatentChainModel; 2] {
        [&self.top, &self.bottom]
    }

    pub fn observation_alphabet(&self) -> usize {
        self.top.observation_alphabet()
    }

    fn level_blocks<'a>(&self, grids: impl Iterator<Item = &'a CodeGrid> + Clone) -> [Vec<Vec<u16>>; 2] {
        let top = grids.clone().flat_map(|g| blocks_of(g.top.indices(), self.top.block_len())).collect();
        let bottom = grids.flat_map(|g| blocks_of(g.bottom.indices(), self.bottom.block_len())).collect();
        [top, bottom]
    }

    /// Fits both levels on the given grids, keeping the version.
    pub fn fit(&self, grids: &[CodeGrid], cfg: &FitConfig) -> Result<Self> {
        let [top, bottom] = self.level_blocks(grids.iter());
        Self::new(fit(&self.top, &top, cfg)?, fit(&self.bottom, &bottom, cfg)?)
    }

    /// Fine-tunes both levels on new plus buffered grids and bumps the version.
    pub fn finetune(&self, new: &[CodeGrid], buffered: &[CodeGrid], cfg: &FitConfig) -> Result<Self> {
        let [new_top, new_bottom] = self.level_blocks(new.iter());
        let [old_top, old_bottom] = self.level_blocks(buffered.iter());
        Self::new(finetune(&self.top, &new_top, &old_top, cfg)?, finetune(&self.bottom, &new_bottom, &old_bottom, cfg)?)
    }

    /// Two `DRRM` records back to back, top level first.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.top.write_to(w)?;
        self.bottom.write_to(w)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let top = LatentChainModel::read_from(r)?;
        let bottom = LatentChainModel::read_from(r)?;
        Self::new(top, bottom).or_else(|e| corrupted(format!("inconsistent model file: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = bytes.as_slice();
        let m = Self::read_from(&mut r)?;
        wire::expect_eof(&mut r)?;
        Ok(m)
    }
}

/// A compressed code sequence plus its bit accounting.
///
/// On disk (`DRRS`): magic, `u32` model version, `u64` symbol count, `u32` length of the
/// elided initial-stack prefix, then the `DRRB` coder bitstream. The accounting is not
/// stored; [`StreamCodec::restore`] recomputes it.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedStream {
    model_version: u32,
    symbol_count: u64,
    prefix_len: u32,
    payload: AnsCoder,
    accounting: BlockStats,
    initial_bits: usize,
}

/// Net message length of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NetLengthReport {
    pub gross_bits: f64,
    pub returned_bits: f64,
    pub net_bits: f64,
    pub bits_per_symbol: f64,
}

impl CompressedStream {
    pub fn model_version(&self) -> u32 {
        self.model_version
    }

    pub fn symbol_count(&self) -> u64 {
        self.symbol_count
    }

    pub fn payload(&self) -> &AnsCoder {
        &self.payload
    }

    pub fn accounting(&self) -> BlockStats {
        self.accounting
    }

    pub fn net_bits(&self) -> f64 {
        self.accounting.net_bits()
    }

    /// Size of the initial random buffer the stream was encoded against.
    pub fn initial_bits(&self) -> usize {
        self.initial_bits
    }

    /// Auxiliary bits the encoder needed beyond its own pushes.
    pub fn peak_deficit(&self) -> f64 {
        self.accounting.peak_deficit
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        4 + 4 + 8 + 4 + self.payload.encoded_len()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.model_version.to_le_bytes())?;
        w.write_all(&self.symbol_count.to_le_bytes())?;
        w.write_all(&self.prefix_len.to_le_bytes())?;
        self.payload.write_to(w)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads a stream; accounting and initial-bit size stay zero until [`StreamCodec::restore`].
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        wire::read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return corrupted("not a DRRS stream");
        }
        let model_version = wire::read_u32(r)?;
        let symbol_count = wire::read_u64(r)?;
        let prefix_len = wire::read_u32(r)?;
        let payload = AnsCoder::read_from(r)?;
        Ok(Self {
            model_version,
            symbol_count,
            prefix_len,
            payload,
            accounting: BlockStats::default(),
            initial_bits: 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = bytes.as_slice();
        let s = Self::read_from(&mut r)?;
        wire::expect_eof(&mut r)?;
        Ok(s)
    }
}

/// Gross, returned and net bits of a stream; all zero for an empty stream.
pub fn net_length_report(stream: &CompressedStream) -> NetLengthReport {
    let a = stream.accounting;
    let net = a.net_bits();
    NetLengthReport {
        gross_bits: a.pushed_bits,
        returned_bits: a.popped_bits,
        net_bits: net,
        bits_per_symbol: if stream.symbol_count == 0 { 0.0 } else { net / stream.symbol_count as f64 },
    }
}

/// Encoder/decoder bound to one model snapshot per level.
#[derive(Debug, Clone)]
pub struct StreamCodec {
    levels: Vec<CodingTables>,
    version: u32,
    scheme: Scheme,
    initial: InitialBits,
    initial_coder: AnsCoder,
}

impl StreamCodec {
    pub fn new(models: &[&LatentChainModel], scheme: Scheme, initial: InitialBits) -> Result<Self> {
        let Some(first) = models.first() else {
            return invalid("stream codec needs at least one level model");
        };
        if models.iter().any(|m| m.version() != first.version()) {
            return invalid("level models carry different versions");
        }
        Ok(Self {
            levels: models.iter().map(|m| CodingTables::new(m)).collect::<Result<_>>()?,
            version: first.version(),
            scheme,
            initial,
            initial_coder: initial.coder(),
        })
    }

    /// Bit-Swap codec with the default initial bits.
    pub fn for_model(model: &CodeModel) -> Result<Self> {
        Self::new(&model.levels(), Scheme::BitSwap, InitialBits::default())
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Encodes one symbol sequence per level, each chunked into blocks.
    pub fn encode(&self, levels: &[&[u16]]) -> Result<CompressedStream> {
        if levels.len() != self.levels.len() {
            return invalid(format!("expected {} levels, got {}", self.levels.len(), levels.len()));
        }
        let mut coder = self.initial_coder.clone();
        let mut t = Tracker::new(&mut coder, true);
        for (symbols, tables) in levels.iter().zip(&self.levels) {
            for block in symbols.chunks(tables.block_len()) {
                self.scheme.encode_tracked(block, tables, &mut t)?;
            }
        }
        let (accounting, prefix_len) = (t.stats(), t.min_stack);
        let (state, mut stack) = coder.into_parts();
        stack.drain(..prefix_len);
        Ok(CompressedStream {
            model_version: self.version,
            symbol_count: levels.iter().map(|l| l.len() as u64).sum(),
            prefix_len: prefix_len as u32,
            payload: AnsCoder::from_parts(state, stack)?,
            accounting,
            initial_bits: self.initial.bits,
        })
    }

    /// Decodes a stream into per-level sequences of the given lengths.
    ///
    /// Also checks that the initial random bits come back exactly and returns the
    /// accounting the encoder recorded.
    pub fn decode(&self, stream: &CompressedStream, lens: &[usize]) -> Result<(Vec<Vec<u16>>, BlockStats)> {
        if stream.model_version != self.version {
            return Err(DrrError::State(format!(
                "stream encoded with model version {}, codec holds version {}",
                stream.model_version, self.version
            )));
        }
        if lens.len() != self.levels.len() {
            return invalid(format!("expected {} level lengths, got {}", self.levels.len(), lens.len()));
        }
        if lens.iter().map(|&l| l as u64).sum::<u64>() != stream.symbol_count {
            return invalid(format!("level lengths do not add up to {} symbols", stream.symbol_count));
        }
        let prefix = stream.prefix_len as usize;
        let initial_stack = self.initial_coder.stack();
        if prefix > initial_stack.len() {
            return corrupted("stream prefix longer than the initial bits");
        }
        let mut stack = initial_stack[..prefix].to_vec();
        stack.extend_from_slice(stream.payload.stack());
        let mut coder = AnsCoder::from_parts(stream.payload.state(), stack)?;

        let mut t = Tracker::new(&mut coder, false);
        let mut out = vec![Vec::new(); lens.len()];
        for ((len, tables), level) in lens.iter().zip(&self.levels).zip(out.iter_mut()).rev() {
            let sizes: Vec<usize> =
                (0..*len).step_by(tables.block_len()).map(|s| tables.block_len().min(len - s)).collect();
            let mut blocks = Vec::with_capacity(sizes.len());
            for &n in sizes.iter().rev() {
                let block = self.scheme.decode_tracked(n, tables, &mut t).map_err(|e| match e {
                    DrrError::ExhaustedStream => DrrError::Corrupted("stream ended early".into()),
                    e => e,
                })?;
                blocks.push(block);
            }
            *level = blocks.into_iter().rev().flatten().collect();
        }
        let stats = t.stats();
        if coder != self.initial_coder {
            return corrupted("initial bits were not restored");
        }
        Ok((out, stats))
    }

    /// Decodes `stream` and fills in the fields that are not stored on disk.
    pub fn restore(&self, stream: &mut CompressedStream, lens: &[usize]) -> Result<Vec<Vec<u16>>> {
        let (levels, stats) = self.decode(stream, lens)?;
        stream.accounting = stats;
        stream.initial_bits = self.initial.bits;
        Ok(levels)
    }

    pub fn encode_grid(&self, grid: &CodeGrid) -> Result<CompressedStream> {
        self.encode(&[grid.top.indices(), grid.bottom.indices()])
    }

    pub fn decode_grid(
        &self,
        stream: &CompressedStream,
        top: (usize, usize),
        bottom: (usize, usize),
    ) -> Result<(CodeGrid, BlockStats)> {
        let (mut levels, stats) = self.decode(stream, &[top.0 * top.1, bottom.0 * bottom.1])?;
        let b = levels.pop().expect("two levels");
        let t = levels.pop().expect("two levels");
        Ok((CodeGrid { top: Grid::new(top.0, top.1, t)?, bottom: Grid::new(bottom.0, bottom.1, b)? }, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(seed: u64, k: u16) -> CodeGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut level = |r, c| Grid::new(r, c, (0..r * c).map(|_| rng.gen_range(0..k)).collect()).unwrap();
        CodeGrid { top: level(2, 3), bottom: level(4, 6) }
    }

    #[test]
    fn grid_round_trip_and_prefix_elision() {
        let model = CodeModel::random(&ChainShape::uniform(8, 2, 3, 4), 9).unwrap();
        let codec = StreamCodec::for_model(&model).unwrap();
        for seed in 0..20 {
            let g = grid(seed, 8);
            let stream = codec.encode_grid(&g).unwrap();
            assert!(stream.payload().stack().len() < 32 + 24 * 3);
            let bytes = stream.to_bytes();
            assert_eq!(bytes.len(), stream.encoded_len());
            assert_eq!(&bytes[..4], b"DRRS");
            let back = CompressedStream::read_from(&mut bytes.as_slice()).unwrap();
            let (decoded, stats) = codec.decode_grid(&back, (2, 3), (4, 6)).unwrap();
            assert_eq!(decoded, g);
            assert!((stats.net_bits() - stream.net_bits()).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_stream_reports_zero() {
        let model = CodeModel::random(&ChainShape::uniform(8, 2, 3, 4), 9).unwrap();
        let codec = StreamCodec::for_model(&model).unwrap();
        let s = codec.encode(&[&[], &[]]).unwrap();
        assert_eq!(net_length_report(&s), NetLengthReport::default());
        assert!(s.payload().stack().is_empty());
        assert_eq!(codec.decode(&s, &[0, 0]).unwrap().0, vec![Vec::<u16>::new(), Vec::new()]);
    }

    #[test]
    fn version_mismatch_and_corruption() {
        let model = CodeModel::random(&ChainShape::uniform(8, 2, 3, 4), 9).unwrap();
        let codec = StreamCodec::for_model(&model).unwrap();
        let g = grid(1, 8);
        let stream = codec.encode_grid(&g).unwrap();

        let newer = CodeModel::new(model.top.clone().with_version(1), model.bottom.clone().with_version(1)).unwrap();
        let err = StreamCodec::for_model(&newer).unwrap().decode_grid(&stream, (2, 3), (4, 6)).unwrap_err();
        assert!(matches!(err, DrrError::State(_)));

        let mut bytes = stream.to_bytes();
        let n = bytes.len();
        bytes[n - 1] ^= 0x5a;
        let bad = CompressedStream::read_from(&mut bytes.as_slice()).unwrap();
        match codec.decode_grid(&bad, (2, 3), (4, 6)) {
            Err(DrrError::Corrupted(_)) => {}
            Ok((decoded, _)) => assert_ne!(decoded, g),
            Err(e) => panic!("unexpected error {e}"),
        }
        assert!(CompressedStream::read_from(&mut &bytes[..n - 1]).is_err());
    }

    #[test]
    fn code_model_file_round_trip() {
        let model = CodeModel::random(&ChainShape::uniform(8, 2, 3, 4), 2).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], b"DRRM");
        assert_eq!(CodeModel::read_from(&mut bytes.as_slice()).unwrap(), model);
    }
}
