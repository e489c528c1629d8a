//! Bits-back coding of code sequences with a discrete latent Markov chain.

mod coding;
mod fit;
mod model;
mod stream;

pub use coding::{bb_decode, bb_encode, bitswap_decode, bitswap_encode, elbo, BlockStats, CodingTables, Scheme};
pub use fit::{finetune, fit, fit_with_report, mean_elbo, FitConfig, FitReport};
pub use model::{
    load_model, ChainShape, LatentChainModel, Table, DEFAULT_BLOCK_LEN, DEFAULT_DEPTH, DEFAULT_LATENT_ALPHABET,
};
pub use stream::{
    blocks_of, net_length_report, CodeModel, CompressedStream, InitialBits, NetLengthReport, StreamCodec,
    DEFAULT_INITIAL_BITS, DEFAULT_INITIAL_SEED,
};
