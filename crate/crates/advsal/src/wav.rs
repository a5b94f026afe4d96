//! Mono 16-bit PCM WAV files at the canonical sample rate.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use advsal_core::{Waveform, SAMPLE_RATE};

use crate::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

fn spec() -> hound::WavSpec {
    hound::WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 16, sample_format: hound::SampleFormat::Int }
}

fn map_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported | hound::Error::FormatError(_) => Error::UnsupportedFormat(format!("{}: {e}", path.display())),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    }
}

/// Quantizes one sample to 16-bit PCM.
pub fn quantize(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(-FULL_SCALE, FULL_SCALE - 1.0) as i16
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_err(path, e))?;
    let s = reader.spec();
    if s.channels != 1 || s.bits_per_sample != 16 || s.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channel(s), {}-bit {:?}; need mono 16-bit PCM",
            path.display(),
            s.channels,
            s.bits_per_sample,
            s.sample_format
        )));
    }
    if s.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!("{}: {} Hz; need {SAMPLE_RATE} Hz", path.display(), s.sample_rate)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|v| v.map(|v| f64::from(v) / FULL_SCALE))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| map_err(path, e))?;
    Ok(Waveform::new(samples, s.sample_rate)?)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if w.sample_rate() != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!("{} Hz waveform; need {SAMPLE_RATE} Hz", w.sample_rate())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = hound::WavWriter::new(BufWriter::new(file), spec()).map_err(|e| map_err(path, e))?;
    for &x in w.samples() {
        writer.write_sample(quantize(x)).map_err(|e| map_err(path, e))?;
    }
    writer.finalize().map_err(|e| map_err(path, e))
}
