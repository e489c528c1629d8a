//! Stack-based range asymmetric numeral system (rANS) coder.
//!
//! The coder state is a 64-bit word kept in `[2^32, 2^40)` between operations;
//! renormalization moves whole bytes between the state and a byte stack. Pushing a
//! symbol and popping it with the same distribution restores the coder exactly, and
//! popping from arbitrary bits yields a symbol sampled from the distribution. That
//! second property is what bits-back coding relies on.

use std::io::{Read, Write};

use crate::error::{corrupted, invalid, DrrError, Result};
use crate::wire;

/// Lower bound of the normalized state interval.
pub const STATE_LOWER: u64 = 1 << 32;
/// Exclusive upper bound of the normalized state interval (byte-granular renormalization).
pub const STATE_UPPER: u64 = STATE_LOWER << 8;
/// Default fixed-point precision of quantized distributions.
pub const DEFAULT_PRECISION: u32 = 12;

pub const MIN_PRECISION: u32 = 8;
pub const MAX_PRECISION: u32 = 16;

const BITSTREAM_MAGIC: &[u8; 4] = b"DRRB";
const BITSTREAM_VERSION: u16 = 1;

/// A distribution over `0..A` with integer frequencies summing to `2^precision`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedPmf {
    precision: u32,
    freqs: Vec<u32>,
    cdf: Vec<u32>,
}

impl QuantizedPmf {
    /// Quantizes nonnegative weights to frequencies summing to exactly `2^precision`.
    ///
    /// Every symbol gets a frequency of at least one. Rounding follows the largest
    /// remainder rule with ties going to the lowest symbol; any excess created by the
    /// floor of one is taken back from the largest frequencies.
    pub fn from_probs(probs: &[f64], precision: u32) -> Result<Self> {
        if !(MIN_PRECISION..=MAX_PRECISION).contains(&precision) {
            return invalid(format!("precision {precision} outside [{MIN_PRECISION}, {MAX_PRECISION}]"));
        }
        let total = 1u64 << precision;
        if probs.is_empty() || probs.len() as u64 > total {
            return invalid(format!("alphabet size {} not representable at precision {precision}", probs.len()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return invalid("probabilities must be finite and nonnegative");
        }
        let mass: f64 = probs.iter().sum();
        if mass <= 0.0 {
            return invalid("probabilities must have positive mass");
        }

        let scaled: Vec<f64> = probs.iter().map(|p| p / mass * total as f64).collect();
        let mut freqs: Vec<u64> = scaled.iter().map(|s| (s.floor() as u64).max(1)).collect();
        let assigned: u64 = freqs.iter().sum();

        if assigned < total {
            let mut order: Vec<usize> = (0..freqs.len()).collect();
            // Stable sort keeps ties in ascending symbol order.
            order.sort_by(|&a, &b| {
                let ra = scaled[a] - scaled[a].floor();
                let rb = scaled[b] - scaled[b].floor();
                rb.partial_cmp(&ra).unwrap()
            });
            let mut left = total - assigned;
            for &s in order.iter().cycle() {
                if left == 0 {
                    break;
                }
                freqs[s] += 1;
                left -= 1;
            }
        } else {
            let mut excess = assigned - total;
            while excess > 0 {
                // Largest frequency, lowest symbol on ties; it is > 1 since sum > total >= A.
                let (s, _) = freqs.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).unwrap();
                let take = excess.min(freqs[s] - 1);
                freqs[s] -= take;
                excess -= take;
            }
        }
        Self::from_freqs(freqs.into_iter().map(|f| f as u32).collect(), precision)
    }

    /// Wraps explicit frequencies, checking they are all positive and sum to `2^precision`.
    pub fn from_freqs(freqs: Vec<u32>, precision: u32) -> Result<Self> {
        if !(MIN_PRECISION..=MAX_PRECISION).contains(&precision) {
            return invalid(format!("precision {precision} outside [{MIN_PRECISION}, {MAX_PRECISION}]"));
        }
        if freqs.is_empty() || freqs.contains(&0) {
            return invalid("frequencies must be nonempty and positive");
        }
        let mut cdf = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cdf.push(0);
        for &f in &freqs {
            acc += u64::from(f);
            if acc > 1 << precision {
                break;
            }
            cdf.push(acc as u32);
        }
        if acc != 1 << precision {
            return invalid(format!("frequencies sum to {acc}, expected {}", 1u64 << precision));
        }
        Ok(Self { precision, freqs, cdf })
    }

    pub fn uniform(alphabet: usize, precision: u32) -> Result<Self> {
        Self::from_probs(&vec![1.0; alphabet], precision)
    }

    pub fn alphabet_size(&self) -> usize {
        self.freqs.len()
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    pub fn probability(&self, symbol: usize) -> f64 {
        f64::from(self.freqs[symbol]) / (1u64 << self.precision) as f64
    }

    /// Ideal code length `-log2 p(symbol)` under the quantized distribution.
    pub fn information_bits(&self, symbol: usize) -> f64 {
        f64::from(self.precision) - f64::from(self.freqs[symbol]).log2()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.freqs.len()).map(|s| self.probability(s)).collect()
    }

    pub fn entropy(&self) -> f64 {
        entropy_of_weights(&self.freqs.iter().map(|&f| f64::from(f)).collect::<Vec<_>>())
    }

    fn symbol_at(&self, slot: u32) -> usize {
        self.cdf.partition_point(|&c| c <= slot) - 1
    }
}

/// rANS coder state: one machine word plus a byte stack (most recent byte last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnsCoder {
    state: u64,
    stack: Vec<u8>,
}

impl Default for AnsCoder {
    fn default() -> Self {
        Self::new()
    }
}

impl AnsCoder {
    /// An empty coder whose state sits at the lower bound of the normalized interval.
    pub fn new() -> Self {
        Self { state: STATE_LOWER, stack: Vec::new() }
    }

    pub fn from_parts(state: u64, stack: Vec<u8>) -> Result<Self> {
        if !(STATE_LOWER..STATE_UPPER).contains(&state) {
            return invalid(format!("coder state {state:#x} outside the normalized interval"));
        }
        Ok(Self { state, stack })
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn stack(&self) -> &[u8] {
        &self.stack
    }

    pub fn into_parts(self) -> (u64, Vec<u8>) {
        (self.state, self.stack)
    }

    /// Size of the serialized coder in bits: every stacked byte plus a 64-bit state flush.
    pub fn bits_written(&self) -> u64 {
        8 * self.stack.len() as u64 + 64
    }

    /// Information content held by the coder, `8 * stack + log2(state)`.
    ///
    /// Differences of this quantity track the ideal code lengths of pushed and popped
    /// symbols to within about `2^-20` bits per operation.
    pub fn information_bits(&self) -> f64 {
        8.0 * self.stack.len() as f64 + (self.state as f64).log2()
    }

    pub fn push(&mut self, symbol: usize, pmf: &QuantizedPmf) -> Result<()> {
        if symbol >= pmf.alphabet_size() {
            return invalid(format!("symbol {symbol} outside alphabet of size {}", pmf.alphabet_size()));
        }
        let freq = u64::from(pmf.freqs[symbol]);
        let start = u64::from(pmf.cdf[symbol]);
        let bound = ((STATE_LOWER >> pmf.precision) << 8) * freq;
        let mut x = self.state;
        while x >= bound {
            self.stack.push(x as u8);
            x >>= 8;
        }
        self.state = ((x / freq) << pmf.precision) + (x % freq) + start;
        Ok(())
    }

    /// Pops one symbol. On an exhausted stack the coder is left untouched.
    pub fn pop(&mut self, pmf: &QuantizedPmf) -> Result<usize> {
        let mask = (1u64 << pmf.precision) - 1;
        let slot = (self.state & mask) as u32;
        let symbol = pmf.symbol_at(slot);
        let freq = u64::from(pmf.freqs[symbol]);
        let start = u64::from(pmf.cdf[symbol]);
        let mut x = freq * (self.state >> pmf.precision) + u64::from(slot) - start;

        let mut needed = 0;
        let mut probe = x;
        while probe < STATE_LOWER {
            probe <<= 8;
            needed += 1;
        }
        if needed > self.stack.len() {
            return Err(DrrError::ExhaustedStream);
        }
        for _ in 0..needed {
            x = (x << 8) | u64::from(self.stack.pop().unwrap());
        }
        self.state = x;
        Ok(symbol)
    }

    /// `DRRB` bitstream: magic, u16 version, u64 stack length, u64 state, stack bytes.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        wire::write_magic(w, BITSTREAM_MAGIC, BITSTREAM_VERSION)?;
        w.write_all(&(self.stack.len() as u64).to_le_bytes())?;
        w.write_all(&self.state.to_le_bytes())?;
        w.write_all(&self.stack)?;
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        4 + 2 + 8 + 8 + self.stack.len()
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        wire::read_magic(r, BITSTREAM_MAGIC, BITSTREAM_VERSION)?;
        let len = wire::read_u64(r)?;
        if len > 1 << 40 {
            return corrupted(format!("implausible payload length {len}"));
        }
        let state = wire::read_u64(r)?;
        let mut stack = vec![0u8; len as usize];
        wire::read_exact(r, &mut stack)?;
        Self::from_parts(state, stack).or_else(|_| corrupted("coder state outside the normalized interval"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

/// Shannon entropy in bits of the distribution proportional to `weights`.
pub fn entropy_of_weights(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Entropy in bits/symbol of the empirical distribution of `sample`.
pub fn empirical_entropy(sample: &[usize]) -> f64 {
    let Some(&max) = sample.iter().max() else {
        return 0.0;
    };
    let mut counts = vec![0.0; max + 1];
    for &s in sample {
        counts[s] += 1.0;
    }
    entropy_of_weights(&counts)
}
