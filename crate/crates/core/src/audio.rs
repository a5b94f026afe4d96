//! Waveform type and power / SNR arithmetic.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Canonical sample rate of every waveform handled by the toolkit.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, checking that it is non-empty and every sample is
    /// finite and within `[-1, 1]`.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidWaveform("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::InvalidWaveform(format!("sample {i} = {s} outside [-1, 1]")));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Builds a waveform from arbitrary finite samples by clamping to `[-1, 1]`.
    pub fn clipped(samples: &[f64], sample_rate: u32) -> Result<Self> {
        Self::new(clip(samples), sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; a waveform holds at least one sample.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn power(&self) -> f64 {
        power(&self.samples)
    }
}

/// Mean of squared samples. Zero for an empty slice.
pub fn power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// Signal-to-noise ratio `10 log10(P_x / P_delta)` in dB.
pub fn snr_db(x: &[f64], delta: &[f64]) -> Result<f64> {
    if x.len() != delta.len() {
        return Err(Error::LengthMismatch(x.len(), delta.len()));
    }
    let px = power(x);
    if px <= 0.0 {
        return Err(Error::InvalidArguments("clean signal has zero power".into()));
    }
    let pd = power(delta);
    if pd <= 0.0 {
        return Err(Error::ZeroPerturbation);
    }
    Ok(10.0 * libm::log10(px / pd))
}

/// Clamps every sample to `[-1, 1]`.
pub fn clip(samples: &[f64]) -> Vec<f64> {
    samples.iter().map(|s| s.clamp(-1.0, 1.0)).collect()
}
