//! Storage encoding and soft-error simulation for half-precision neural
//! network weights held in a modeled 2-bit multi-level STT-RAM buffer.
//!
//! Weights normalized into `[-1, 1]` never use the exponent MSB of their
//! half-precision representation, which frees that bit to hold a backup of
//! the sign. On top of that, three per-group content reformations
//! (no-change / rotate / round) raise the number of `00`/`11` cell patterns,
//! which are both cheaper to program and immune in the soft-error model.
//!
//! Module map:
//! - [`halffloat`] -- bit-exact half words and their 2-bit cell decomposition
//! - [`codec`] -- sign duplication, reformation schemes, grouped encode/decode,
//!   and the `MLCW` buffer wire format
//! - [`memdevice`] -- content-dependent read/write cost model and seeded fault
//!   injection
//! - [`analysis`] -- pattern census, bit-flip error sweep, energy comparison,
//!   CSV emission
//! - [`tinynn`] -- a small MLP whose parameters pass through the encoded
//!   buffer before inference
//!
//! The `parallel` feature (on by default) runs the batch operations on a
//! rayon pool. Every operation is keyed so that parallel and sequential
//! execution produce bit-identical results; the `*_seq` variants are kept
//! public as reference paths for benchmarks and parity tests.

pub mod analysis;
pub mod codec;
pub mod halffloat;
pub mod memdevice;
pub mod tinynn;

pub use codec::{EncodedBuffer, Scheme, SchemeSet};
pub use halffloat::HalfWord;

use rand_chacha::ChaCha8Rng;

/// Independent deterministic RNG for one stream (cell, chunk, trial) of a
/// seeded simulation. Keying on the stream index rather than drawing from a
/// shared generator keeps results independent of traversal and thread order.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
