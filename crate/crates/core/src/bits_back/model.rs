use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{corrupted, invalid, Result};
use crate::rans::DEFAULT_PRECISION;
use crate::wire;

pub const DEFAULT_DEPTH: usize = 8;
pub const DEFAULT_LATENT_ALPHABET: usize = 64;
pub const DEFAULT_BLOCK_LEN: usize = 16;

const MAGIC: &[u8; 4] = b"DRRM";
const FORMAT_VERSION: u16 = 1;
const ROW_TOLERANCE: f64 = 1e-9;

/// Row-stochastic matrix: each row is a distribution over `cols` outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!("{rows}x{cols} table given {} entries", data.len()));
        }
        let table = Self { rows, cols, data };
        for r in 0..rows {
            let row = table.row(r);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > ROW_TOLERANCE {
                return invalid(format!("table row {r} is not a distribution (sum {sum})"));
            }
        }
        Ok(table)
    }

    /// Normalizes each row of nonnegative weights.
    pub fn from_weights(rows: usize, cols: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!("{rows}x{cols} table given {} entries", data.len()));
        }
        for row in data.chunks_exact_mut(cols) {
            let sum: f64 = row.iter().sum();
            if !(sum > 0.0 && sum.is_finite()) {
                return invalid("table row has no positive mass");
            }
            row.iter_mut().for_each(|p| *p /= sum);
        }
        Self::new(rows, cols, data)
    }

    pub fn point_masses(cols: usize, targets: &[usize]) -> Result<Self> {
        let mut data = vec![0.0; targets.len() * cols];
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return invalid(format!("point mass at {t} outside {cols} outcomes"));
            }
            data[r * cols + t] = 1.0;
        }
        Self::new(targets.len(), cols, data)
    }

    fn random<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(0.5..1.5)).collect();
        Self::from_weights(rows, cols, data).expect("positive weights")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Markov chain of `L` categorical latents over blocks of observed codes.
///
/// Generative direction: `z_L -> ... -> z_1 -> x`, where every symbol of a block is
/// drawn independently from `p(x | z_1)`. Inference direction: `x -> z_1 -> ... -> z_L`
/// with `q(z_1 | x)` a normalized product over the block's symbols of the rows of the
/// `K x A_1` table, and `q(z_{i+1} | z_i)` plain transition tables.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentChainModel {
    pub(crate) version: u32,
    pub(crate) block_len: usize,
    pub(crate) alphabets: Vec<usize>,
    /// `p(x | z_1)`: `A_1 x K`.
    pub(crate) emission: Table,
    /// `transitions[i]` is `p(z_{i+1} | z_{i+2})` (zero-based levels), `A_{i+2} x A_{i+1}`.
    pub(crate) transitions: Vec<Table>,
    /// `p(z_L)`: one row of `A_L`.
    pub(crate) prior: Table,
    /// `q(z_1 | x)` factor table: `K x A_1`.
    pub(crate) inference_obs: Table,
    /// `inference_chain[i]` is `q(z_{i+2} | z_{i+1})`, `A_{i+1} x A_{i+2}`.
    pub(crate) inference_chain: Vec<Table>,
}

/// Shape of a latent chain model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainShape {
    pub observation_alphabet: usize,
    pub latent_alphabets: Vec<usize>,
    pub block_len: usize,
}

impl ChainShape {
    pub fn uniform(observation_alphabet: usize, depth: usize, latent_alphabet: usize, block_len: usize) -> Self {
        Self { observation_alphabet, latent_alphabets: vec![latent_alphabet; depth], block_len }
    }

    pub fn validate(&self) -> Result<()> {
        let max = 1usize << DEFAULT_PRECISION;
        if self.latent_alphabets.is_empty() {
            return invalid("latent chain needs at least one level");
        }
        if !(2..=max).contains(&self.observation_alphabet) {
            return invalid(format!("observation alphabet {} outside [2, {max}]", self.observation_alphabet));
        }
        if let Some(a) = self.latent_alphabets.iter().find(|a| !(2..=max).contains(*a)) {
            return invalid(format!("latent alphabet {a} outside [2, {max}]"));
        }
        if self.block_len == 0 {
            return invalid("block length must be positive");
        }
        Ok(())
    }
}

impl LatentChainModel {
    /// Assembles a model from explicit tables, checking every shape.
    pub fn from_tables(
        block_len: usize,
        emission: Table,
        transitions: Vec<Table>,
        prior: Table,
        inference_obs: Table,
        inference_chain: Vec<Table>,
    ) -> Result<Self> {
        let mut alphabets = vec![emission.rows];
        for t in &transitions {
            alphabets.push(t.rows);
        }
        let shape = ChainShape { observation_alphabet: emission.cols, latent_alphabets: alphabets.clone(), block_len };
        shape.validate()?;
        let depth = alphabets.len();
        let ok = transitions.iter().enumerate().all(|(i, t)| t.cols == alphabets[i])
            && prior.rows == 1
            && prior.cols == alphabets[depth - 1]
            && inference_obs.rows == emission.cols
            && inference_obs.cols == alphabets[0]
            && inference_chain.len() == depth - 1
            && inference_chain.iter().enumerate().all(|(i, t)| t.rows == alphabets[i] && t.cols == alphabets[i + 1]);
        if !ok {
            return invalid("latent chain tables have inconsistent shapes");
        }
        Ok(Self { version: 0, block_len, alphabets, emission, transitions, prior, inference_obs, inference_chain })
    }

    /// Seeded random initialization with mildly perturbed near-uniform tables.
    ///
    /// The inference tables start at the exact posterior of the generative tables.
    pub fn random(shape: &ChainShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = &shape.latent_alphabets;
        let k = shape.observation_alphabet;
        let depth = a.len();
        let emission = Table::random(a[0], k, &mut rng);
        let transitions = (0..depth - 1).map(|i| Table::random(a[i + 1], a[i], &mut rng)).collect();
        let prior = Table::random(1, a[depth - 1], &mut rng);
        let mut model = Self::from_tables(
            shape.block_len,
            emission,
            transitions,
            prior,
            Table::from_weights(k, a[0], vec![1.0; k * a[0]])?,
            (0..depth - 1)
                .map(|i| Table::from_weights(a[i], a[i + 1], vec![1.0; a[i] * a[i + 1]]))
                .collect::<Result<_>>()?,
        )?;
        model.set_exact_inference();
        Ok(model)
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn with_version(mut self, version: u32) -> Self {
        self.version = version;
        self
    }

    pub fn depth(&self) -> usize {
        self.alphabets.len()
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn observation_alphabet(&self) -> usize {
        self.emission.cols
    }

    pub fn latent_alphabets(&self) -> &[usize] {
        &self.alphabets
    }

    pub fn shape(&self) -> ChainShape {
        ChainShape {
            observation_alphabet: self.observation_alphabet(),
            latent_alphabets: self.alphabets.clone(),
            block_len: self.block_len,
        }
    }

    pub fn emission(&self) -> &Table {
        &self.emission
    }

    pub fn transitions(&self) -> &[Table] {
        &self.transitions
    }

    pub fn prior(&self) -> &Table {
        &self.prior
    }

    pub fn inference_obs(&self) -> &Table {
        &self.inference_obs
    }

    pub fn inference_chain(&self) -> &[Table] {
        &self.inference_chain
    }

    /// Marginals `p(z_i)` of the generative chain, level 1 first.
    pub(crate) fn generative_marginals(emission_free: &[Table], prior: &Table) -> Vec<Vec<f64>> {
        let depth = emission_free.len() + 1;
        let mut marginals = vec![Vec::new(); depth];
        marginals[depth - 1] = prior.row(0).to_vec();
        for i in (0..depth - 1).rev() {
            let t = &emission_free[i];
            let mut m = vec![0.0; t.cols];
            for (upper, &pu) in marginals[i + 1].iter().enumerate() {
                for (mv, &p) in m.iter_mut().zip(t.row(upper)) {
                    *mv += pu * p;
                }
            }
            marginals[i] = m;
        }
        marginals
    }

    /// Sets the inference tables to the exact reverse conditionals of the generative
    /// chain, and `q(z_1 | x)` factors to `p(x | z_1) p(z_1)^(1/B)`.
    pub(crate) fn set_exact_inference(&mut self) {
        let marginals = Self::generative_marginals(&self.transitions, &self.prior);
        self.inference_chain = reverse_conditionals(&self.transitions, &marginals);
        self.inference_obs = posterior_factors(&self.emission, &marginals[0], self.block_len);
    }

    /// Draws one block of `len` symbols from the generative model.
    pub fn sample_block<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<u16> {
        let draw = |row: &[f64], rng: &mut R| WeightedIndex::new(row).expect("valid distribution").sample(rng);
        let mut z = draw(self.prior.row(0), rng);
        for t in self.transitions.iter().rev() {
            z = draw(t.row(z), rng);
        }
        (0..len).map(|_| draw(self.emission.row(z), rng) as u16).collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        wire::write_magic(w, MAGIC, FORMAT_VERSION)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&(self.depth() as u32).to_le_bytes())?;
        w.write_all(&(self.observation_alphabet() as u32).to_le_bytes())?;
        for &a in &self.alphabets {
            w.write_all(&(a as u32).to_le_bytes())?;
        }
        w.write_all(&(self.block_len as u32).to_le_bytes())?;
        for t in self.tables() {
            wire::write_f64s(w, t.data())?;
        }
        Ok(())
    }

    /// Tables in serialization order: emission, transitions, prior, inference factors,
    /// inference chain.
    fn tables(&self) -> impl Iterator<Item = &Table> {
        std::iter::once(&self.emission)
            .chain(&self.transitions)
            .chain(std::iter::once(&self.prior))
            .chain(std::iter::once(&self.inference_obs))
            .chain(&self.inference_chain)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        wire::read_magic(r, MAGIC, FORMAT_VERSION)?;
        let version = wire::read_u32(r)?;
        let depth = wire::read_dim(r, "depth", 1024)?;
        let k = wire::read_dim(r, "observation alphabet", 1 << 16)?;
        let alphabets =
            (0..depth).map(|_| wire::read_dim(r, "latent alphabet", 1 << 16)).collect::<Result<Vec<_>>>()?;
        let block_len = wire::read_dim(r, "block length", 1 << 20)?;
        let shape = ChainShape { observation_alphabet: k, latent_alphabets: alphabets.clone(), block_len };
        shape.validate().or_else(|e| corrupted(format!("invalid model header: {e}")))?;
        let mut read_table = |rows: usize, cols: usize| -> Result<Table> {
            let data = wire::read_f64s(r, rows * cols)?;
            Table::new(rows, cols, data).or_else(|e| corrupted(format!("invalid model table: {e}")))
        };
        let emission = read_table(alphabets[0], k)?;
        let transitions =
            (0..depth - 1).map(|i| read_table(alphabets[i + 1], alphabets[i])).collect::<Result<Vec<_>>>()?;
        let prior = read_table(1, alphabets[depth - 1])?;
        let inference_obs = read_table(k, alphabets[0])?;
        let inference_chain =
            (0..depth - 1).map(|i| read_table(alphabets[i], alphabets[i + 1])).collect::<Result<Vec<_>>>()?;
        let model = Self::from_tables(block_len, emission, transitions, prior, inference_obs, inference_chain)
            .or_else(|e| corrupted(format!("invalid model: {e}")))?;
        Ok(model.with_version(version))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

/// `q(z_{i+1} | z_i) = p(z_i | z_{i+1}) p(z_{i+1}) / p(z_i)`; uniform where `p(z_i) = 0`.
pub(crate) fn reverse_conditionals(transitions: &[Table], marginals: &[Vec<f64>]) -> Vec<Table> {
    transitions
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (lower, upper) = (t.cols, t.rows);
            let mut data = vec![0.0; lower * upper];
            for zl in 0..lower {
                let row = &mut data[zl * upper..(zl + 1) * upper];
                for (zu, v) in row.iter_mut().enumerate() {
                    *v = t.row(zu)[zl] * marginals[i + 1][zu];
                }
                if row.iter().sum::<f64>() <= 0.0 {
                    row.iter_mut().for_each(|v| *v = 1.0);
                }
            }
            Table::from_weights(lower, upper, data).expect("rows have positive mass")
        })
        .collect()
}

/// Factors whose normalized product over a full block is the exact posterior of `z_1`.
pub(crate) fn posterior_factors(emission: &Table, marginal: &[f64], block_len: usize) -> Table {
    let (a1, k) = (emission.rows, emission.cols);
    let exponent = 1.0 / block_len as f64;
    let mut data = vec![0.0; k * a1];
    for x in 0..k {
        let row = &mut data[x * a1..(x + 1) * a1];
        for (z, v) in row.iter_mut().enumerate() {
            *v = emission.row(z)[x] * marginal[z].powf(exponent);
        }
        if row.iter().sum::<f64>() <= 0.0 {
            row.iter_mut().for_each(|v| *v = 1.0);
        }
    }
    Table::from_weights(k, a1, data).expect("rows have positive mass")
}

/// Reads a model snapshot from a file containing exactly one `DRRM` record.
pub fn load_model(path: &Path) -> Result<LatentChainModel> {
    let bytes = fs::read(path)?;
    let mut r = bytes.as_slice();
    let m = LatentChainModel::read_from(&mut r)?;
    wire::expect_eof(&mut r)?;
    Ok(m)
}
