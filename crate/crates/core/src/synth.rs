//! Deterministic source-filter speaker corpus.
//!
//! Each synthetic speaker is a fundamental frequency plus three formant
//! resonances. An utterance is a jittered glottal impulse train at a slowly
//! varying pitch, shaped by a spectral tilt and the speaker's (slightly
//! perturbed) formant cascade, amplitude-modulated, mixed with a little
//! white noise and peak-normalised to 0.9.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::nn::rng_from;
use crate::{Error, Result};

/// Peak amplitude of every synthesized utterance.
pub const PEAK: f64 = 0.9;

const PROFILE_STREAM: u64 = 0x5350_4b52;


const F0_LO: f64 = 140.0;
const F0_HI: f64 = 200.0;

/// Formant centers of the population-average vocal tract, scaled per
/// speaker by a vocal-tract-length factor and a small individual offset.
const NEUTRAL_FORMANTS: [f64; 3] = [500.0, 1500.0, 2500.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: u32,
    /// Fundamental frequency in Hz.
    pub f0: f64,
    /// `(center Hz, bandwidth Hz)` for F1..F3, centers increasing.
    pub formants: [(f64, f64); 3],
    pub jitter_seed: u64,
}

impl SpeakerProfile {
    /// The profile for `speaker_id` in corpus `corpus_seed`.
    pub fn generate(speaker_id: u32, corpus_seed: u64) -> Self {
        let mut rng = rng_from(corpus_seed, PROFILE_STREAM + u64::from(speaker_id));
        let f0: f64 = rng.random_range(F0_LO..F0_HI);
        let vtl: f64 = rng.random_range(0.85..1.15);
        let centers = NEUTRAL_FORMANTS.map(|c| c * vtl * rng.random_range(0.94..1.06));
        let [f1, f2, f3] = centers;
        let b1 = rng.random_range(60.0..120.0);
        let b2 = rng.random_range(80.0..160.0);
        let b3 = rng.random_range(120.0..220.0);
        let jitter_seed = rng.random();
        Self { speaker_id, f0, formants: [(f1, b1), (f2, b2), (f3, b3)], jitter_seed }
    }
}

/// Which experiment stage an utterance is reserved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    /// Training and enrollment of the speaker identification system.
    TrainTarget,
    /// Training of adversarial attackers.
    TrainAttack,
    /// Held-out imposters and accuracy checks.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub speaker_id: u32,
    pub utterance_id: u32,
    pub duration_s: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_seed: u64,
    pub speakers: Vec<SpeakerProfile>,
    pub utterances: Vec<UtteranceRecord>,
}

/// Per-speaker split sizes `(train-target, train-attack, test)`: about
/// 70 / 20 / 10 percent with at least one utterance in each.
pub fn split_sizes(utts_per_speaker: usize) -> (usize, usize, usize) {
    let n = utts_per_speaker as f64;
    let test = (libm::round(0.1 * n) as usize).max(1);
    let attack = (libm::round(0.2 * n) as usize).max(1);
    (utts_per_speaker - test - attack, attack, test)
}

/// Builds the corpus manifest.
pub fn make_corpus(n_speakers: usize, utts_per_speaker: usize, duration_s: f64, corpus_seed: u64) -> Result<CorpusManifest> {
    if n_speakers < 2 {
        return Err(Error::InvalidArguments(format!("n_speakers = {n_speakers}, need at least 2")));
    }
    if utts_per_speaker < 3 {
        return Err(Error::InvalidArguments(format!("utts_per_speaker = {utts_per_speaker}, need at least 3")));
    }
    if !(duration_s >= 0.5 && duration_s.is_finite()) {
        return Err(Error::InvalidArguments(format!("duration_s = {duration_s}, need at least 0.5")));
    }
    let (n_target, n_attack, _) = split_sizes(utts_per_speaker);
    let speakers: Vec<SpeakerProfile> =
        (0..n_speakers as u32).map(|id| SpeakerProfile::generate(id, corpus_seed)).collect();
    let mut utterances = Vec::with_capacity(n_speakers * utts_per_speaker);
    for sp in &speakers {
        for j in 0..utts_per_speaker {
            let split = if j < n_target {
                Split::TrainTarget
            } else if j < n_target + n_attack {
                Split::TrainAttack
            } else {
                Split::Test
            };
            utterances.push(UtteranceRecord {
                speaker_id: sp.speaker_id,
                utterance_id: sp.speaker_id * utts_per_speaker as u32 + j as u32,
                duration_s,
                split,
            });
        }
    }
    Ok(CorpusManifest { corpus_seed, speakers, utterances })
}

impl CorpusManifest {
    pub fn speaker(&self, speaker_id: u32) -> Option<&SpeakerProfile> {
        self.speakers.iter().find(|s| s.speaker_id == speaker_id)
    }

    pub fn utterance(&self, utterance_id: u32) -> Option<&UtteranceRecord> {
        self.utterances.iter().find(|u| u.utterance_id == utterance_id)
    }

    pub fn speaker_ids(&self) -> Vec<u32> {
        self.speakers.iter().map(|s| s.speaker_id).collect()
    }

    /// Utterances of one split, in manifest order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    /// Utterances of `speaker_id` in `split`, in manifest order.
    pub fn speaker_split(&self, speaker_id: u32, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.split(split).filter(move |u| u.speaker_id == speaker_id)
    }

    /// Checks manifest invariants: unique ids, known speakers.
    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u32> = self.utterances.iter().map(|u| u.utterance_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArguments("duplicate utterance ids".into()));
        }
        if let Some(u) = self.utterances.iter().find(|u| self.speaker(u.speaker_id).is_none()) {
            return Err(Error::UnknownSpeaker(u.speaker_id));
        }
        Ok(())
    }

    /// Synthesizes one utterance.
    pub fn synthesize(&self, utterance_id: u32) -> Result<Waveform> {
        let rec = self.utterance(utterance_id).ok_or(Error::UnknownUtterance(utterance_id))?;
        let sp = self.speaker(rec.speaker_id).ok_or(Error::UnknownSpeaker(rec.speaker_id))?;
        Ok(synthesize_profile(sp, utterance_id, rec.duration_s))
    }
}

/// Synthesizes `(speaker_id, utterance_id)` from `manifest`.
pub fn synthesize(manifest: &CorpusManifest, speaker_id: u32, utterance_id: u32) -> Result<Waveform> {
    let rec = manifest.utterance(utterance_id).ok_or(Error::UnknownUtterance(utterance_id))?;
    if rec.speaker_id != speaker_id {
        return Err(Error::UnknownUtterance(utterance_id));
    }
    manifest.synthesize(utterance_id)
}

/// Two-pole resonator with unit gain at DC.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(center: f64, bandwidth: f64, fs: f64) -> Self {
        let r = libm::exp(-PI * bandwidth / fs);
        let a1 = 2.0 * r * libm::cos(2.0 * PI * center / fs);
        let a2 = -r * r;
        Self { a1, a2, gain: 1.0 - a1 - a2, y1: 0.0, y2: 0.0 }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn synthesize_profile(sp: &SpeakerProfile, utterance_id: u32, duration_s: f64) -> Waveform {
    let fs = f64::from(SAMPLE_RATE);
    let n = (libm::round(duration_s * fs) as usize).max(1);
    let mut rng = rng_from(sp.jitter_seed, u64::from(utterance_id));

    let pitch_scale = rng.random_range(0.94..1.06);
    let contour_rate = rng.random_range(1.0..3.0);
    let contour_phase = rng.random_range(0.0..(2.0 * PI));
    let formant_scale = rng.random_range(0.97..1.03);
    let syllable_rate = rng.random_range(2.0..4.0);
    let syllable_phase = rng.random_range(0.0..PI);
    let noise_level = rng.random_range(0.005..0.02);

    let mut resonators: Vec<Resonator> = sp
        .formants
        .iter()
        .map(|&(c, b)| Resonator::new(c * formant_scale, b, fs))
        .collect();

    let mut out = Vec::with_capacity(n);
    let mut phase = rng.random_range(0.0..1.0);
    let mut period_jitter = 1.0;
    let mut tilt = 0.0;
    for i in 0..n {
        let t = i as f64 / fs;
        let f0 = sp.f0 * pitch_scale * (1.0 + 0.04 * libm::sin(2.0 * PI * contour_rate * t + contour_phase));
        phase += f0 * period_jitter / fs;
        let mut src = 0.0;
        if phase >= 1.0 {
            phase -= 1.0;
            src = 1.0;
            let j: f64 = StandardNormal.sample(&mut rng);
            period_jitter = 1.0 + 0.01 * j;
        }
        tilt = 0.9 * tilt + src;
        let mut y = tilt;
        for r in &mut resonators {
            y = r.step(y);
        }
        let env = 0.6 + 0.4 * libm::pow(libm::sin(PI * syllable_rate * t + syllable_phase), 2.0);
        out.push(env * y);
    }
    let rms = libm::sqrt(out.iter().map(|v| v * v).sum::<f64>() / n as f64).max(1e-12);
    for v in &mut out {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += noise_level * rms * e;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK / peak;
        out.iter_mut().for_each(|v| *v = (*v * g).clamp(-PEAK, PEAK));
    }
    Waveform::new(out, SAMPLE_RATE).expect("normalised synthesis stays in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_is_deterministic() {
        let a = make_corpus(10, 20, 1.0, 7).unwrap();
        let b = make_corpus(10, 20, 1.0, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_corpus(10, 20, 1.0, 8).unwrap());
    }

    #[test]
    fn tiny_corpus_has_every_split() {
        let m = make_corpus(2, 3, 1.0, 1).unwrap();
        for sp in m.speaker_ids() {
            for split in [Split::TrainTarget, Split::TrainAttack, Split::Test] {
                assert!(m.speaker_split(sp, split).count() >= 1);
            }
        }
        m.validate().unwrap();
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(make_corpus(1, 3, 1.0, 1), Err(Error::InvalidArguments(_))));
        assert!(matches!(make_corpus(2, 2, 1.0, 1), Err(Error::InvalidArguments(_))));
        assert!(matches!(make_corpus(2, 3, 0.4, 1), Err(Error::InvalidArguments(_))));
    }

    #[test]
    fn split_ratios() {
        assert_eq!(split_sizes(20), (14, 4, 2));
        assert_eq!(split_sizes(3), (1, 1, 1));
        assert_eq!(split_sizes(10), (7, 2, 1));
    }

    #[test]
    fn profiles_respect_ranges() {
        for seed in 0..20 {
            for id in 0..20 {
                let p = SpeakerProfile::generate(id, seed);
                assert!((80.0..=300.0).contains(&p.f0));
                assert!(p.formants[0].0 < p.formants[1].0 && p.formants[1].0 < p.formants[2].0);
                assert!(p.formants[2].0 < f64::from(SAMPLE_RATE) / 2.0);
                assert_eq!(p, SpeakerProfile::generate(id, seed));
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_bounded() {
        let m = make_corpus(3, 5, 0.5, 3).unwrap();
        let u = &m.utterances[4];
        let a = synthesize(&m, u.speaker_id, u.utterance_id).unwrap();
        let b = synthesize(&m, u.speaker_id, u.utterance_id).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8000);
        assert!(a.samples().iter().all(|s| s.abs() <= PEAK));
        let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - PEAK).abs() < 1e-12);
        assert_eq!(synthesize(&m, u.speaker_id, 999), Err(Error::UnknownUtterance(999)));
    }
}
