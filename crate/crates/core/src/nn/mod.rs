//! Minimal 1-D convolutional toolkit with hand-written backward passes.
//!
//! Layers are plain structs holding their weights. `forward` never mutates a
//! layer; `backward` takes the forward input (and cache, if any) and returns
//! the gradient with respect to the input, optionally accumulating parameter
//! gradients into a zero-initialised layer of the same shape. Using the layer
//! type itself as the gradient container keeps networks and their gradients
//! structurally identical, which is what [`Adam`] relies on.

mod adam;
mod block;
mod conv;
mod dense;
mod norm;
mod tensor;

pub use adam::Adam;
pub use block::{Activation, ConvBlock, ConvBlockCache, ResBlock, ResBlockCache};
pub use conv::{Conv1d, ConvOp, ConvTranspose1d};
pub use dense::{Linear, StatsPool, STATS_POOL_EPS};
pub use norm::{BatchNorm1d, BnCache, Mode};
pub use tensor::Tensor;

use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator used for every seeded operation in the crate.
pub type Rng = ChaCha8Rng;

/// Seeds a generator from a seed and a stream tag so independent consumers of
/// one user seed never share a stream.
pub fn rng_from(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Access to the trainable parameter arrays of a network, in a fixed order.
pub trait Params {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    /// Non-trainable state such as batch-norm running statistics.
    fn buffers(&self) -> Vec<&[f64]> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }

    fn zero_params(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }

    /// A copy of `self` with every trainable parameter set to zero, used as a
    /// gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.zero_params();
        z
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// All parameters flattened in visiting order.
    fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.iter().copied()).collect()
    }

    /// Overwrites parameters from a flat array produced by [`Params::flat_params`].
    fn load_flat(&mut self, flat: &[f64]) -> crate::Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(crate::Error::LengthMismatch(n, flat.len()));
        }
        let mut off = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&flat[off..off + p.len()]);
            off += p.len();
        }
        Ok(())
    }

    /// Parameters followed by buffers, flattened.
    fn flat_state(&self) -> Vec<f64> {
        let mut v = self.flat_params();
        v.extend(self.buffers().iter().flat_map(|b| b.iter().copied()));
        v
    }

    /// Inverse of [`Params::flat_state`].
    fn load_state(&mut self, flat: &[f64]) -> crate::Result<()> {
        let np = self.num_params();
        let nb: usize = self.buffers().iter().map(|b| b.len()).sum();
        if flat.len() != np + nb {
            return Err(crate::Error::LengthMismatch(np + nb, flat.len()));
        }
        self.load_flat(&flat[..np])?;
        let mut off = np;
        for b in self.buffers_mut() {
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        }
        Ok(())
    }

    /// Adds `scale * other` into `self`, parameter by parameter.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}
