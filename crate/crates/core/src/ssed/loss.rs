//! Loss terms of the attacker objective and their partial derivatives.
//!
//! Each `*_grad` companion returns the gradient of the matching loss with
//! respect to its differentiable argument; at kinks (hinge, max, min) the
//! subgradient of the first maximising/minimising index is used.

use alloc::vec;
use alloc::vec::Vec;

use crate::target::{Scores, Task};
use crate::{Error, Result};

/// Floor on the norm product in the angular loss.
pub const ANGULAR_EPS: f64 = 1e-12;

fn first_argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Min-max normalisation to `[0, 1]`; a constant input maps to all zeros.
pub fn normalize_mask(m: &[f64]) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let lo = m[first_argmin(m)];
    let hi = m[first_argmax(m)];
    let range = hi - lo;
    if range <= 0.0 {
        return vec![0.0; m.len()];
    }
    m.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
}

/// `dL/dm` given `dL/dm'` for `m' = normalize_mask(m)`.
pub fn normalize_mask_grad(m: &[f64], g_norm: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; m.len()];
    if m.is_empty() {
        return g;
    }
    let (imin, imax) = (first_argmin(m), first_argmax(m));
    let (lo, range) = (m[imin], m[imax] - m[imin]);
    if range <= 0.0 {
        return g;
    }
    let sum_g: f64 = g_norm.iter().sum();
    let sum_gm: f64 = g_norm.iter().zip(m).map(|(gv, mv)| gv * (mv - lo)).sum();
    for (gi, gv) in g.iter_mut().zip(g_norm) {
        *gi = gv / range;
    }
    g[imin] += -sum_g / range + sum_gm / (range * range);
    g[imax] -= sum_gm / (range * range);
    g
}

/// Euclidean norm of the normalised saliency map.
pub fn loss_f(m_norm: &[f64]) -> f64 {
    libm::sqrt(m_norm.iter().map(|v| v * v).sum::<f64>())
}

pub fn loss_f_grad(m_norm: &[f64]) -> Vec<f64> {
    let l = loss_f(m_norm);
    if l == 0.0 {
        return vec![0.0; m_norm.len()];
    }
    m_norm.iter().map(|v| v / l).collect()
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// One-sided amplitude penalty: mean over samples of `max(x - x', 0)^2`.
pub fn loss_norm(x: &[f64], x_adv: &[f64]) -> Result<f64> {
    check_len(x, x_adv)?;
    let s: f64 = x.iter().zip(x_adv).map(|(a, b)| {
        let h = (a - b).max(0.0);
        h * h
    })
    .sum();
    Ok(s / x.len() as f64)
}

/// Gradient of [`loss_norm`] w.r.t. `x_adv`.
pub fn loss_norm_grad(x: &[f64], x_adv: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    x.iter().zip(x_adv).map(|(a, b)| -2.0 * (a - b).max(0.0) / n).collect()
}

/// Symmetric alternative to [`loss_norm`]: mean of `delta^2`.
pub fn loss_norm_symmetric(delta: &[f64]) -> f64 {
    delta.iter().map(|d| d * d).sum::<f64>() / delta.len().max(1) as f64
}

pub fn loss_norm_symmetric_grad(delta: &[f64]) -> Vec<f64> {
    let n = delta.len().max(1) as f64;
    delta.iter().map(|d| 2.0 * d / n).collect()
}

/// `lambda_f * L_f + lambda_n * L_norm`.
pub fn loss_snr(m_norm: &[f64], x: &[f64], x_adv: &[f64], lambda_f: f64, lambda_n: f64) -> Result<f64> {
    Ok(lambda_f * loss_f(m_norm) + lambda_n * loss_norm(x, x_adv)?)
}

/// Cosine similarity between clean and adversarial embeddings, with the
/// denominator floored at [`ANGULAR_EPS`].
pub fn loss_angular(z: &[f64], z_adv: &[f64]) -> Result<f64> {
    check_len(z, z_adv)?;
    let dot: f64 = z.iter().zip(z_adv).map(|(a, b)| a * b).sum();
    let nz = libm::sqrt(z.iter().map(|v| v * v).sum::<f64>());
    let na = libm::sqrt(z_adv.iter().map(|v| v * v).sum::<f64>());
    Ok(dot / (nz * na).max(ANGULAR_EPS))
}

/// Gradient of [`loss_angular`] w.r.t. `z_adv`.
pub fn loss_angular_grad(z: &[f64], z_adv: &[f64]) -> Vec<f64> {
    let dot: f64 = z.iter().zip(z_adv).map(|(a, b)| a * b).sum();
    let nz = libm::sqrt(z.iter().map(|v| v * v).sum::<f64>());
    let na = libm::sqrt(z_adv.iter().map(|v| v * v).sum::<f64>());
    let den = nz * na;
    if den <= ANGULAR_EPS {
        return z.iter().map(|a| a / ANGULAR_EPS).collect();
    }
    let cos = dot / den;
    z.iter().zip(z_adv).map(|(a, b)| a / den - cos * b / (na * na)).collect()
}

fn check_target(s: &Scores, t: usize) -> Result<()> {
    if t == 0 || t > s.len() {
        return Err(Error::InvalidTarget(t));
    }
    Ok(())
}

/// Index (0-based) and value of the best non-target score, if any.
fn best_other(s: &Scores, t: usize) -> Option<(usize, f64)> {
    s.0.iter()
        .enumerate()
        .filter(|(i, _)| *i != t - 1)
        .fold(None, |best, (i, &v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((i, v)),
        })
}

/// Closed-set speaker loss: best non-target score minus the target score.
pub fn loss_speaker_csi(s: &Scores, t: usize) -> Result<f64> {
    check_target(s, t)?;
    let (_, other) = best_other(s, t).ok_or(Error::InvalidArguments("closed-set loss needs k >= 2".into()))?;
    Ok(other - s.get(t))
}

/// Open-set speaker loss: `max(best non-target score, theta)` minus the
/// target score. With one enrolled speaker this is `theta - s_t`.
pub fn loss_speaker_osi(s: &Scores, t: usize, theta: f64) -> Result<f64> {
    check_target(s, t)?;
    let other = best_other(s, t).map_or(theta, |(_, v)| v.max(theta));
    Ok(other - s.get(t))
}

/// Speaker loss for `task` and its gradient w.r.t. the score vector.
pub fn speaker_loss_grad(task: Task, s: &Scores, t: usize, theta: Option<f64>) -> Result<(f64, Vec<f64>)> {
    check_target(s, t)?;
    let mut g = vec![0.0; s.len()];
    g[t - 1] = -1.0;
    let loss = match task {
        Task::Csi => {
            let (i, v) = best_other(s, t).ok_or(Error::InvalidArguments("closed-set loss needs k >= 2".into()))?;
            g[i] = 1.0;
            v - s.get(t)
        }
        Task::Osi => {
            let theta = theta.ok_or(Error::InvalidArguments("open-set loss needs a threshold".into()))?;
            match best_other(s, t) {
                Some((i, v)) if v >= theta => {
                    g[i] = 1.0;
                    v - s.get(t)
                }
                _ => theta - s.get(t),
            }
        }
    };
    Ok((loss, g))
}

/// `lambda_s * L_speaker + lambda_a * L_angular`.
pub fn loss_asr(speaker_loss: f64, angular_loss: f64, lambda_s: f64, lambda_a: f64) -> f64 {
    lambda_s * speaker_loss + lambda_a * angular_loss
}

/// Full attacker objective.
pub fn loss_total(snr: f64, asr: f64) -> f64 {
    snr + asr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{decide_csi, decide_osi, Decision};
    use proptest::prelude::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    fn s(v: &[f64]) -> Scores {
        Scores(v.to_vec())
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_mask(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_mask(&[5.0, 5.0, 5.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(normalize_mask(&[0.0, 1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn loss_f_examples() {
        close(loss_f(&[0.0, 0.5, 1.0]), 1.25f64.sqrt());
        close(loss_f(&[0.0, 0.0, 0.0]), 0.0);
        close(loss_f(&[1.0; 4]), 2.0);
    }

    #[test]
    fn loss_norm_examples() {
        close(loss_norm(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        close(loss_norm(&[1.0, 1.0], &[0.9, 1.2]).unwrap(), 0.005);
        close(loss_norm(&[0.1, 0.2], &[0.15, 0.3]).unwrap(), 0.0);
        assert_eq!(loss_norm(&[0.0], &[0.0, 1.0]), Err(Error::LengthMismatch(1, 2)));
    }

    #[test]
    fn loss_snr_examples() {
        let m = [0.0, 0.5, 1.0];
        let x = [1.0, 1.0, 0.5];
        let xa = [0.9, 1.2, 0.3];
        close(loss_snr(&m, &x, &xa, 0.0, 0.0).unwrap(), 0.0);
        close(loss_snr(&m, &x, &xa, 1.0, 0.0).unwrap(), 1.118033988749895);
        let lin = 2.0 * loss_f(&m) + 3.0 * loss_norm(&x, &xa).unwrap();
        close(loss_snr(&m, &x, &xa, 2.0, 3.0).unwrap(), lin);
    }

    #[test]
    fn loss_angular_examples() {
        close(loss_angular(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        close(loss_angular(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        close(loss_angular(&[0.3, -2.0], &[-0.3, 2.0]).unwrap(), -1.0);
        close(loss_angular(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn speaker_loss_examples() {
        close(loss_speaker_csi(&s(&[0.9, 0.1, 0.3]), 3).unwrap(), 0.6);
        close(loss_speaker_csi(&s(&[0.1, 0.8, 0.3]), 2).unwrap(), -0.5);
        close(loss_speaker_csi(&s(&[0.5, 0.5]), 1).unwrap(), 0.0);
        assert_eq!(loss_speaker_csi(&s(&[0.5, 0.5]), 3), Err(Error::InvalidTarget(3)));
        assert_eq!(loss_speaker_csi(&s(&[0.5, 0.5]), 0), Err(Error::InvalidTarget(0)));
        close(loss_speaker_osi(&s(&[0.2, 0.5]), 1, 0.6).unwrap(), 0.4);
        close(loss_speaker_osi(&s(&[0.9, 0.1]), 1, 0.6).unwrap(), -0.3);
        close(loss_speaker_osi(&s(&[0.7, 0.8]), 2, 0.6).unwrap(), -0.1);
        close(loss_speaker_osi(&s(&[0.4]), 1, 0.6).unwrap(), 0.2);
        assert_eq!(loss_speaker_osi(&s(&[0.4]), 2, 0.6), Err(Error::InvalidTarget(2)));
    }

    #[test]
    fn asr_and_total_examples() {
        close(loss_asr(0.7, -0.2, 1.0, 0.0), 0.7);
        close(loss_asr(0.7, -0.2, 0.0, 1.0), -0.2);
        close(loss_asr(0.7, -0.2, 0.0, 0.0), 0.0);
        close(loss_total(loss_snr(&[0.5], &[0.1], &[0.0], 0.0, 0.0).unwrap(), loss_asr(0.3, 0.3, 0.0, 0.0)), 0.0);
        close(loss_total(1.25, -0.5), 0.75);
    }

    #[test]
    fn normalize_grad_matches_finite_differences() {
        let m = [0.31, 0.72, 0.18, 0.55, 0.9, 0.42];
        let r = [0.3, -0.7, 1.1, 0.2, -0.4, 0.9];
        let f = |m: &[f64]| -> f64 { normalize_mask(m).iter().zip(&r).map(|(a, b)| a * b).sum() };
        let g = normalize_mask_grad(&m, &r);
        for i in 0..m.len() {
            let h = 1e-6;
            let mut p = m;
            p[i] += h;
            let mut q = m;
            q[i] -= h;
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn normalize_bounds(m in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let n = normalize_mask(&m);
            prop_assert!(n.iter().all(|v| (0.0..=1.0).contains(v)));
            let (lo, hi) = (m.iter().cloned().fold(f64::INFINITY, f64::min), m.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            if hi > lo {
                prop_assert_eq!(n.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
                prop_assert_eq!(n.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
            }
        }

        #[test]
        fn normalize_affine_invariant(m in prop::collection::vec(0.0f64..1.0, 2..40), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let t: Vec<f64> = m.iter().map(|v| a * v + b).collect();
            for (u, v) in normalize_mask(&m).iter().zip(normalize_mask(&t)) {
                prop_assert!((u - v).abs() <= 1e-9);
            }
        }

        #[test]
        fn angular_scale_invariant(z in prop::collection::vec(-1.0f64..1.0, 4), w in prop::collection::vec(-1.0f64..1.0, 4),
                                   a in 0.01f64..100.0, b in 0.01f64..100.0) {
            prop_assume!(z.iter().any(|v| v.abs() > 1e-3) && w.iter().any(|v| v.abs() > 1e-3));
            let za: Vec<f64> = z.iter().map(|v| a * v).collect();
            let wb: Vec<f64> = w.iter().map(|v| b * v).collect();
            prop_assert!((loss_angular(&z, &w).unwrap() - loss_angular(&za, &wb).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn negative_speaker_loss_means_target_decision(v in prop::collection::vec(-1.0f64..1.0, 2..8), t in 1usize..8, theta in -1.0f64..1.0) {
            let t = 1 + (t - 1) % v.len();
            let sc = Scores(v);
            if loss_speaker_csi(&sc, t).unwrap() < 0.0 {
                prop_assert_eq!(decide_csi(&sc), t);
            }
            if loss_speaker_osi(&sc, t, theta).unwrap() < 0.0 {
                prop_assert_eq!(decide_osi(&sc, theta), Decision::Speaker(t));
            }
        }
    }
}
