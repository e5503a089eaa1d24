//! Seeded, counter-addressable random streams.
//!
//! Every random draw in the crate comes from ChaCha20 keyed by a 64-bit seed.
//! Draw `n` of stream `s` sits at a fixed word offset, so any contiguous range
//! of draws can be regenerated independently and results never depend on how
//! the work was split across threads.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// A ChaCha20 stream positioned by `(seed, stream, index)`.
#[derive(Clone, Debug)]
pub struct CounterRng {
    inner: ChaCha20Rng,
}

impl CounterRng {
    /// Opens stream `stream` of `seed` positioned at draw `index`, where every
    /// draw consumes `words_per_draw` 32-bit words.
    pub fn at(seed: u64, stream: u64, index: u64, words_per_draw: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        inner.set_word_pos(u128::from(index) * u128::from(words_per_draw));
        Self { inner }
    }

    /// Uniform in the open interval (0, 1), 53 bits of resolution.
    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

/// Derives an independent stream seed from a master seed and a purpose tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Fills `out` with `count` entries by handing contiguous chunks to `f` along
/// with the global index of their first entry. Runs on rayon when the
/// `parallel` feature is on.
#[cfg(feature = "parallel")]
pub(crate) fn fill_indexed<T, F>(count: usize, chunk: usize, out: &mut Vec<T>, f: F)
where
    T: Send + Default + Clone,
    F: Fn(usize, &mut [T]) + Sync,
{
    use rayon::prelude::*;
    out.clear();
    out.resize(count, T::default());
    out.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(c, slice)| f(c * chunk, slice));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn fill_indexed<T, F>(count: usize, chunk: usize, out: &mut Vec<T>, f: F)
where
    T: Send + Default + Clone,
    F: Fn(usize, &mut [T]) + Sync,
{
    out.clear();
    out.resize(count, T::default());
    out.chunks_mut(chunk)
        .enumerate()
        .for_each(|(c, slice)| f(c * chunk, slice));
}
