//! Targeted white-box reference attacks: FGSM, BIM and C&W-L2.
//!
//! All three descend the task's speaker loss (closed-set or open-set
//! margin), which is negative exactly when the target speaker wins.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::audio::{clip, Waveform};
use crate::nn::{Adam, Params, Tensor};
use crate::ssed::loss::speaker_loss_grad;
use crate::target::{decide_csi, decide_osi, Decision, Scores, TargetSystem, Task};
use crate::{Error, Result};

/// Settings shared by the baseline attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// l-infinity budget (FGSM step, BIM ball radius).
    pub epsilon: f64,
    /// BIM per-iteration step; `None` means `epsilon / 5`.
    pub step: Option<f64>,
    pub iterations: usize,
    /// 1-based target position.
    pub target: usize,
    pub task: Task,
    pub theta: Option<f64>,
    /// C&W trade-off constant.
    pub c: f64,
    pub cw_lr: f64,
    pub cw_steps: usize,
    /// C&W confidence margin.
    pub kappa: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.005,
            step: None,
            iterations: 10,
            target: 1,
            task: Task::Csi,
            theta: None,
            c: 1.0,
            cw_lr: 0.01,
            cw_steps: 100,
            kappa: 0.0,
        }
    }
}

impl BaselineConfig {
    pub fn step_size(&self) -> f64 {
        self.step.unwrap_or(self.epsilon / 5.0)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArguments(m.into()));
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if self.step_size() > self.epsilon || self.step_size() < 0.0 {
            return bad("BIM step must lie in [0, epsilon]");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.c >= 0.0) {
            return bad("c must be non-negative");
        }
        if self.target == 0 || self.target > k {
            return Err(Error::InvalidTarget(self.target));
        }
        if (self.task == Task::Osi) != self.theta.is_some() {
            return bad("theta must be given exactly for open-set attacks");
        }
        Ok(())
    }
}

/// Whether scores identify the target speaker under `task`.
pub fn is_target_decision(scores: &Scores, task: Task, target: usize, theta: Option<f64>) -> bool {
    match task {
        Task::Csi => decide_csi(scores) == target,
        Task::Osi => decide_osi(scores, theta.unwrap_or(f64::INFINITY)) == Decision::Speaker(target),
    }
}

/// Speaker loss at `x` and its gradient w.r.t. the samples.
pub fn speaker_loss_input_grad(
    sys: &TargetSystem<'_>,
    task: Task,
    target: usize,
    theta: Option<f64>,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let trace = sys.trace(&Tensor::from_rows(&[x]));
    let (loss, gs) = speaker_loss_grad(task, &trace.scores[0], target, theta)?;
    Ok((loss, sys.backward(&trace, &[gs], None).into_data()))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x - step * sign(grad)`, with `sign(0) = 0`.
pub fn fgsm_step(x: &[f64], grad: &[f64], step: f64) -> Vec<f64> {
    x.iter().zip(grad).map(|(a, g)| a - step * sign(*g)).collect()
}

/// One signed-gradient step of size `epsilon` down the speaker loss.
pub fn fgsm(x: &Waveform, sys: &TargetSystem<'_>, config: &BaselineConfig) -> Result<Waveform> {
    config.validate(sys.db.k())?;
    let (_, g) = speaker_loss_input_grad(sys, config.task, config.target, config.theta, x.samples())?;
    Waveform::clipped(&fgsm_step(x.samples(), &g, config.epsilon), x.sample_rate())
}

/// Iterated FGSM with projection onto the l-infinity ball and `[-1, 1]`.
/// Returns the final example and the speaker loss after every iteration.
pub fn bim(x: &Waveform, sys: &TargetSystem<'_>, config: &BaselineConfig) -> Result<(Waveform, Vec<f64>)> {
    config.validate(sys.db.k())?;
    let eps = config.epsilon;
    let step = config.step_size();
    let x0 = x.samples();
    let mut cur = x0.to_vec();
    let mut losses = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let (_, g) = speaker_loss_input_grad(sys, config.task, config.target, config.theta, &cur)?;
        let stepped = fgsm_step(&cur, &g, step);
        let projected: Vec<f64> =
            stepped.iter().zip(x0).map(|(v, o)| v.clamp(o - eps, o + eps)).collect();
        cur = clip(&projected);
        let scores = sys.scores(&cur);
        losses.push(crate::ssed::loss::speaker_loss_grad(config.task, &scores, config.target, config.theta)?.0);
    }
    Ok((Waveform::new(cur, x.sample_rate())?, losses))
}

/// Outcome of a C&W-L2 run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwOutcome {
    pub adversarial: Waveform,
    /// False when no iterate reached the target decision (the final iterate is returned).
    pub success: bool,
    pub steps: usize,
}

/// Flat optimisation variable so the shared Adam implementation can drive it.
#[derive(Clone)]
struct Flat(Vec<f64>);

impl Params for Flat {
    fn params(&self) -> Vec<&[f64]> {
        alloc::vec![&self.0]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        alloc::vec![&mut self.0]
    }
}


/// Minimises `||x' - x||^2 + c * max(L_speaker(x'), -kappa)` over
/// `x' = tanh(w)` with Adam, returning the successful iterate closest to `x`.
pub fn cw_l2(x: &Waveform, sys: &TargetSystem<'_>, config: &BaselineConfig) -> Result<CwOutcome> {
    config.validate(sys.db.k())?;
    let x0 = x.samples();
    let lim = 1.0 - 1e-6;
    let mut w = Flat(x0.iter().map(|v| libm::atanh(v.clamp(-lim, lim))).collect());
    let mut opt = Adam::new(config.cw_lr);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..config.cw_steps {
        let xa: Vec<f64> = w.0.iter().map(|v| libm::tanh(*v)).collect();
        let (loss, g_spk) = speaker_loss_input_grad(sys, config.task, config.target, config.theta, &xa)?;
        let dist: f64 = xa.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
        let scores = sys.scores(&xa);
        if is_target_decision(&scores, config.task, config.target, config.theta)
            && best.as_ref().is_none_or(|(d, _)| dist < *d)
        {
            best = Some((dist, xa.clone()));
        }
        let hinge_active = loss > -config.kappa;
        let grad = Flat(
            xa.iter()
                .zip(x0)
                .zip(&g_spk)
                .map(|((a, b), gs)| {
                    let g_x = 2.0 * (a - b) + if hinge_active { config.c * gs } else { 0.0 };
                    g_x * (1.0 - a * a)
                })
                .collect(),
        );
        opt.step(&mut w, &grad);
    }
    let final_x: Vec<f64> = w.0.iter().map(|v| libm::tanh(*v)).collect();
    let scores = sys.scores(&final_x);
    if is_target_decision(&scores, config.task, config.target, config.theta) {
        let dist: f64 = final_x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, final_x.clone()));
        }
    }
    let (samples, success) = match best {
        Some((_, s)) => (s, true),
        None => (final_x, false),
    };
    Ok(CwOutcome { adversarial: Waveform::clipped(&samples, x.sample_rate())?, success, steps: config.cw_steps })
}
