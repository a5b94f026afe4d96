//! Saliency-masked encoder-decoder adversarial attacks against speaker
//! identification.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numeric parts:
//! waveform arithmetic, a deterministic synthetic speaker corpus, a small
//! hand-differentiated 1-D convolutional toolkit, the speaker identification
//! system under attack, the encoder/decoder attacker with its composite loss,
//! and the FGSM / BIM / C&W-L2 reference attacks. File formats, timing and the
//! command line live in the `advsal` companion crate.
//!
//! All randomness is explicitly seeded; every training routine is bitwise
//! reproducible for a fixed seed.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod audio;
pub mod baseline;
mod error;
pub mod metrics;
pub mod nn;
pub mod ssed;
pub mod synth;
pub mod target;

pub use audio::{Waveform, SAMPLE_RATE};
pub use error::{Error, Result};
