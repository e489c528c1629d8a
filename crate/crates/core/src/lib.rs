//! Discrete representation replay: two-step exemplar compression for replay-based
//! incremental learning.
//!
//! Images are first compressed lossily into two-level code grids by a vector-quantized
//! codec ([`vq`]). Code grids are then compressed losslessly with bits-back coding over
//! a Markov chain of categorical latents ([`bits_back`]) on top of a stack-based rANS
//! coder ([`rans`]). [`replay`] keeps the per-class compressed streams and reports
//! memory, and [`learner`] runs phased class-incremental experiments on reconstructed
//! replay data, optionally regularized with raw exemplars.

pub mod bits_back;
pub mod dataset;
pub mod error;
pub mod image;
pub mod learner;
pub mod nn;
pub mod rans;
pub mod replay;
pub mod vq;
mod wire;

pub use bits_back::{CodeModel, CompressedStream, LatentChainModel, StreamCodec};
pub use error::{DrrError, Result};
pub use image::ImageTensor;
pub use rans::{AnsCoder, QuantizedPmf};
pub use replay::{account, MemoryReport, RawExemplarStore, ReplayBuffer};
pub use vq::{CodeGrid, Codebook, CodecConfig, CodecGeometry, CodecParams};
