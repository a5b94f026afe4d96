//! Saliency-masked encoder-decoder attacker.
//!
//! The encoder maps a waveform `x` to a latent feature map `y`; a noise
//! decoder produces `n` in `(-1, 1)` and a mask decoder produces `m` in
//! `(0, 1)`, both at the input length. The perturbation is `eps * (n * m)`
//! and the adversarial example `clip(x + delta)`. Training minimises
//!
//! ```text
//! lambda_f * ||m'||  +  lambda_n * mean(max(x - x', 0)^2)
//!   + lambda_s * L_speaker(S(x'))  +  lambda_a * cos(z, z')
//! ```
//!
//! with `m'` the min-max normalised mask, `z`, `z'` the clean and
//! adversarial speaker embeddings, and every term averaged over the batch.
//! The hinge leaves positive perturbations free, so the default
//! configuration swaps it for `mean(delta^2)` (`symmetric_norm`).

mod generator;
pub mod loss;

pub use generator::{ArchPlan, Decoder, GenCache, Generator, ENCODER_KERNELS, ENCODER_STRIDES, RES_KERNEL};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::{clip, Waveform};
use crate::nn::{rng_from, Adam, Mode, Params, Tensor};
use crate::synth::{CorpusManifest, Split};
use crate::target::{TargetSystem, Task};
use crate::{Error, Result};

/// Hyperparameters of one attacker (one target speaker, one task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Perturbation scale; `|delta| < epsilon` everywhere.
    pub epsilon: f64,
    pub lambda_s: f64,
    pub lambda_f: f64,
    pub lambda_a: f64,
    pub lambda_n: f64,
    /// 1-based enrollment position of the target speaker.
    pub target: usize,
    pub task: Task,
    /// Open-set threshold; present iff `task` is open-set.
    pub theta: Option<f64>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Penalise `mean(delta^2)` instead of the one-sided amplitude hinge.
    #[serde(default = "yes")]
    pub symmetric_norm: bool,
    /// Train with the mask decoder; `false` uses a constant unit mask and drops `L_f`.
    #[serde(default = "yes")]
    pub saliency: bool,
    #[serde(default)]
    pub arch: ArchPlan,
}

fn yes() -> bool {
    true
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            lambda_s: 1.0,
            lambda_f: 0.01,
            lambda_a: 0.05,
            lambda_n: 250.0,
            target: 1,
            task: Task::Csi,
            theta: None,
            epochs: 60,
            lr: 3e-3,
            batch_size: 2,
            seed: 0,
            symmetric_norm: true,
            saliency: true,
            arch: ArchPlan::default(),
        }
    }
}

impl AttackConfig {
    /// Checks the configuration against an enrollment of `k` speakers.
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArguments(m.into()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if [self.lambda_s, self.lambda_f, self.lambda_a, self.lambda_n].iter().any(|l| !(*l >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        if self.target == 0 || self.target > k {
            return Err(Error::InvalidTarget(self.target));
        }
        match (self.task, self.theta) {
            (Task::Osi, None) => return bad("open-set attack needs theta"),
            (Task::Csi, Some(_)) => return bad("closed-set attack takes no theta"),
            (Task::Csi, None) if k < 2 => return bad("closed-set attack needs k >= 2"),
            _ => {}
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return bad("batch_size and lr must be positive");
        }
        Ok(())
    }
}

/// Result of one attack forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutput {
    /// `clip(x + delta)`.
    pub adversarial: Waveform,
    pub delta: Vec<f64>,
    pub noise: Vec<f64>,
    pub mask: Vec<f64>,
    /// Min-max normalised mask.
    pub mask_norm: Vec<f64>,
}

/// `epsilon * n * m`, elementwise.
pub fn perturbation(noise: &[f64], mask: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if noise.len() != mask.len() {
        return Err(Error::LengthMismatch(noise.len(), mask.len()));
    }
    Ok(noise.iter().zip(mask).map(|(n, m)| epsilon * (n * m)).collect())
}

/// Generates the adversarial example for `x` in one generator pass; the
/// target system is not queried.
pub fn attack(params: &Generator, config: &AttackConfig, x: &Waveform) -> AttackOutput {
    let cache = params.forward(&Tensor::from_rows(&[x.samples()]), Mode::Eval);
    let noise = cache.noise().into_data();
    let mask = cache.mask().into_data();
    let delta = perturbation(&noise, &mask, config.epsilon).expect("decoders share the input length");
    let sum: Vec<f64> = x.samples().iter().zip(&delta).map(|(a, d)| a + d).collect();
    let adversarial = Waveform::clipped(&sum, x.sample_rate()).expect("clipped finite samples");
    let mask_norm = loss::normalize_mask(&mask);
    AttackOutput { adversarial, delta, noise, mask, mask_norm }
}

/// Batch-mean values of each objective term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub snr: f64,
    pub asr: f64,
    pub saliency: f64,
    pub norm: f64,
    pub speaker: f64,
    pub angular: f64,
}

/// Evaluates the attacker objective on a `[B, 1, L]` batch whose clean
/// embeddings are `clean_emb`, accumulating generator gradients into `grad`
/// when given. Returns the loss terms and the forward cache.
pub fn objective(
    gen: &Generator,
    config: &AttackConfig,
    target: &TargetSystem<'_>,
    x: &Tensor,
    clean_emb: &[Vec<f64>],
    mode: Mode,
    grad: Option<&mut Generator>,
) -> Result<(LossBreakdown, GenCache)> {
    let (nb, _, len) = x.shape();
    let bf = nb as f64;
    let cache = gen.forward(x, mode);
    let noise = cache.noise();
    let mask = cache.mask();
    let eps = config.epsilon;

    let mut pre_clip = Tensor::zeros(nb, 1, len);
    let mut x_adv = Tensor::zeros(nb, 1, len);
    for b in 0..nb {
        let delta = perturbation(noise.row(b, 0), mask.row(b, 0), eps)?;
        for (t, d) in delta.iter().enumerate() {
            pre_clip.row_mut(b, 0)[t] = x.row(b, 0)[t] + d;
        }
        x_adv.row_mut(b, 0).copy_from_slice(&clip(pre_clip.row(b, 0)));
    }
    let trace = target.trace(&x_adv);

    let mut out = LossBreakdown::default();
    let mut g_scores = Vec::with_capacity(nb);
    let mut g_emb = Vec::with_capacity(nb);
    let mut g_xadv = Tensor::zeros(nb, 1, len);
    let mut g_delta_direct = Tensor::zeros(nb, 1, len);
    let mut g_mask = Tensor::zeros(nb, 1, len);
    for b in 0..nb {
        let xb = x.row(b, 0);
        let xab = x_adv.row(b, 0);
        let (spk, gs) = loss::speaker_loss_grad(config.task, &trace.scores[b], config.target, config.theta)?;
        let ang = loss::loss_angular(&clean_emb[b], &trace.embeddings[b])?;
        out.speaker += spk / bf;
        out.angular += ang / bf;
        g_scores.push(gs.iter().map(|g| config.lambda_s * g / bf).collect::<Vec<_>>());
        g_emb.push(
            loss::loss_angular_grad(&clean_emb[b], &trace.embeddings[b])
                .iter()
                .map(|g| config.lambda_a * g / bf)
                .collect::<Vec<_>>(),
        );
        if config.symmetric_norm {
            let delta: Vec<f64> = xb.iter().zip(pre_clip.row(b, 0)).map(|(a, p)| p - a).collect();
            out.norm += loss::loss_norm_symmetric(&delta) / bf;
            for (g, v) in g_delta_direct.row_mut(b, 0).iter_mut().zip(loss::loss_norm_symmetric_grad(&delta)) {
                *g = config.lambda_n * v / bf;
            }
        } else {
            out.norm += loss::loss_norm(xb, xab)? / bf;
            for (g, v) in g_xadv.row_mut(b, 0).iter_mut().zip(loss::loss_norm_grad(xb, xab)) {
                *g = config.lambda_n * v / bf;
            }
        }
        if gen.has_saliency() {
            let m = mask.row(b, 0);
            let m_norm = loss::normalize_mask(m);
            out.saliency += loss::loss_f(&m_norm) / bf;
            let g_norm: Vec<f64> = loss::loss_f_grad(&m_norm).iter().map(|g| config.lambda_f * g / bf).collect();
            g_mask.row_mut(b, 0).copy_from_slice(&loss::normalize_mask_grad(m, &g_norm));
        }
    }
    out.snr = config.lambda_f * out.saliency + config.lambda_n * out.norm;
    out.asr = loss::loss_asr(out.speaker, out.angular, config.lambda_s, config.lambda_a);
    out.total = loss::loss_total(out.snr, out.asr);

    if let Some(grad) = grad {
        g_xadv.add_assign(&target.backward(&trace, &g_scores, Some(&g_emb)));
        let mut g_noise = Tensor::zeros(nb, 1, len);
        for b in 0..nb {
            let pre = pre_clip.row(b, 0);
            let (n, m) = (noise.row(b, 0), mask.row(b, 0));
            for t in 0..len {
                let through_clip = if pre[t].abs() <= 1.0 { g_xadv.row(b, 0)[t] } else { 0.0 };
                let g_delta = through_clip + g_delta_direct.row(b, 0)[t];
                g_noise.row_mut(b, 0)[t] = g_delta * eps * m[t];
                g_mask.row_mut(b, 0)[t] += g_delta * eps * n[t];
            }
        }
        gen.backward(&cache, &g_noise, gen.has_saliency().then_some(&g_mask), grad);
    }
    Ok((out, cache))
}

/// A trained attacker and its per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedAttacker {
    pub generator: Generator,
    pub loss_curve: Vec<f64>,
}

/// Trains a generator against a frozen target on the `train-attack`
/// utterances of every speaker other than the target speaker.
pub fn train_attacker(
    init: Generator,
    config: &AttackConfig,
    manifest: &CorpusManifest,
    target: &TargetSystem<'_>,
) -> Result<TrainedAttacker> {
    config.validate(target.db.k())?;
    if init.has_saliency() != config.saliency {
        return Err(Error::InvalidArguments("generator mask decoder does not match config.saliency".into()));
    }
    let target_speaker = target.db.speaker_ids[config.target - 1];
    let data = manifest
        .split(Split::TrainAttack)
        .filter(|u| u.speaker_id != target_speaker)
        .map(|u| manifest.synthesize(u.utterance_id).map(Waveform::into_samples))
        .collect::<Result<Vec<_>>>()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no train-attack utterances outside the target speaker".into()));
    }
    let len = data[0].len();
    if data.iter().any(|x| x.len() != len) {
        return Err(Error::InvalidArguments("train-attack utterances must share one duration".into()));
    }
    let clean_emb: Vec<Vec<f64>> = data.iter().map(|x| target.net.embed_samples(x)).collect();

    let mut gen = init;
    let mut opt = Adam::new(config.lr);
    let mut rng = rng_from(config.seed, 0x6174_6b72);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
            let emb: Vec<Vec<f64>> = chunk.iter().map(|&i| clean_emb[i].clone()).collect();
            let x = Tensor::from_rows(&rows);
            let mut grad = gen.zeros_like();
            let (loss, cache) = objective(&gen, config, target, &x, &emb, Mode::Train, Some(&mut grad))?;
            gen.track(&cache);
            opt.step(&mut gen, &grad);
            sum += loss.total;
            batches += 1;
        }
        curve.push(sum / batches as f64);
    }
    if curve.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArguments(format!("attacker training diverged: {curve:?}")));
    }
    Ok(TrainedAttacker { generator: gen, loss_curve: curve })
}

/// `delta` reconstructed from an attack output's noise and mask.
pub fn reconstruct_delta(out: &AttackOutput, epsilon: f64) -> Vec<f64> {
    perturbation(&out.noise, &out.mask, epsilon).unwrap_or_else(|_| vec![])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_examples() {
        let d = perturbation(&[1.0, -1.0], &[1.0, 0.5], 0.05).unwrap();
        assert!((d[0] - 0.05).abs() < 1e-12 && (d[1] + 0.025).abs() < 1e-12);
        assert_eq!(perturbation(&[0.3, -0.7], &[0.2, 0.9], 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(perturbation(&[0.3, -0.7], &[0.0, 0.0], 0.05).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(perturbation(&[0.3], &[0.0, 0.0], 0.05), Err(Error::LengthMismatch(1, 2)));
    }

    #[test]
    fn config_validation() {
        let mut c = AttackConfig::default();
        c.validate(3).unwrap();
        c.target = 4;
        assert_eq!(c.validate(3), Err(Error::InvalidTarget(4)));
        c.target = 1;
        c.epsilon = 0.0;
        assert!(c.validate(3).is_err());
        c.epsilon = 0.05;
        c.task = Task::Osi;
        assert!(c.validate(3).is_err());
        c.theta = Some(0.5);
        c.validate(3).unwrap();
        c.lambda_a = -1.0;
        assert!(c.validate(3).is_err());
    }
}
