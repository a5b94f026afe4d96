//! Short-time magnitude spectrograms.

use std::f64::consts::PI;
use std::path::Path;

use advsal_core::Waveform;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::{Error, Result};

pub const DEFAULT_FRAME: usize = 400;
pub const DEFAULT_HOP: usize = 160;

/// Hann-windowed magnitude spectrogram: one row per frame, `frame / 2 + 1`
/// frequency bins per row.
pub fn spectrogram(w: &Waveform, frame: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    if hop == 0 || frame < hop {
        return Err(advsal_core::Error::InvalidArguments(format!("frame = {frame}, hop = {hop}; need frame >= hop >= 1")).into());
    }
    let x = w.samples();
    if x.len() < frame {
        return Err(advsal_core::Error::InputTooShort { len: x.len(), need: frame }.into());
    }
    let window: Vec<f64> = (0..frame).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos()).collect();
    let fft = FftPlanner::new().plan_fft_forward(frame);
    let frames = (x.len() - frame) / hop + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let seg = &x[f * hop..f * hop + frame];
        for ((b, &s), &wv) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(s * wv, 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..frame / 2 + 1].iter().map(|c| c.norm()).collect());
    }
    Ok(out)
}

/// Writes a spectrogram as a headerless CSV matrix.
pub fn export_spectrogram(w: &Waveform, frame: usize, hop: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = spectrogram(w, frame, hop)?;
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_err(path, e))?;
    for row in &spec {
        wtr.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_err(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { what: "spectrogram csv", path: path.to_path_buf(), message: format!("{other:?}") },
    }
}
