//! The JSON run configuration driving every command.

use std::fs;
use std::path::{Path, PathBuf};

use advsal_core::baseline::BaselineConfig;
use advsal_core::ssed::{ArchPlan, AttackConfig};
use advsal_core::synth::Split;
use advsal_core::target::{TargetConfig, Task};
use serde::{Deserialize, Serialize};

use crate::artifact::config_hash;
use crate::harness::CorpusConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// Embedding dimension.
    pub d: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    #[serde(default = "default_channels")]
    pub channels: [usize; 4],
    #[serde(default = "default_target_batch")]
    pub batch_size: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_channels() -> [usize; 4] {
    TargetConfig::default().channels
}
fn default_target_batch() -> usize {
    TargetConfig::default().batch_size
}
fn default_margin() -> f64 {
    TargetConfig::default().margin
}
fn default_scale() -> f64 {
    TargetConfig::default().scale
}

impl TargetSection {
    pub fn to_target_config(&self) -> TargetConfig {
        TargetConfig {
            embed_dim: self.d,
            channels: self.channels,
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            margin: self.margin,
            scale: self.scale,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OsiSection {
    /// The first `enrolled_speakers` corpus speakers are enrolled for the
    /// open-set task; the rest only ever appear as imposters.
    pub enrolled_speakers: usize,
    pub target_far: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Ssed,
    Fgsm,
    Bim,
    Cw,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ssed => "ssed",
            Self::Fgsm => "fgsm",
            Self::Bim => "bim",
            Self::Cw => "cw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    pub task: Task,
    pub epsilon: f64,
    pub lambda_s: f64,
    pub lambda_f: f64,
    pub lambda_a: f64,
    pub lambda_n: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// 1-based enrollment position of the target speaker.
    pub t: usize,
    #[serde(default = "default_attack_batch")]
    pub batch_size: usize,
    #[serde(default = "default_symmetric")]
    pub symmetric_norm: bool,
    #[serde(default = "default_saliency")]
    pub saliency: bool,
    #[serde(default)]
    pub arch: ArchPlan,
    #[serde(default)]
    pub baseline: BaselineSection,
}

fn default_attack_batch() -> usize {
    AttackConfig::default().batch_size
}
fn default_symmetric() -> bool {
    AttackConfig::default().symmetric_norm
}
fn default_saliency() -> bool {
    true
}

/// Settings used only by the FGSM / BIM / C&W attack kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub iterations: usize,
    pub step: Option<f64>,
    pub c: f64,
    pub cw_lr: f64,
    pub cw_steps: usize,
    pub kappa: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let b = BaselineConfig::default();
        Self { iterations: b.iterations, step: b.step, c: b.c, cw_lr: b.cw_lr, cw_steps: b.cw_steps, kappa: b.kappa }
    }
}

impl AttackSection {
    pub fn to_attack_config(&self, theta: Option<f64>) -> AttackConfig {
        AttackConfig {
            epsilon: self.epsilon,
            lambda_s: self.lambda_s,
            lambda_f: self.lambda_f,
            lambda_a: self.lambda_a,
            lambda_n: self.lambda_n,
            target: self.t,
            task: self.task,
            theta,
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            seed: self.seed,
            symmetric_norm: self.symmetric_norm,
            saliency: self.saliency,
            arch: self.arch,
        }
    }

    pub fn to_baseline_config(&self, theta: Option<f64>) -> BaselineConfig {
        let b = &self.baseline;
        BaselineConfig {
            epsilon: self.epsilon,
            step: b.step,
            iterations: b.iterations,
            target: self.t,
            task: self.task,
            theta,
            c: b.c,
            cw_lr: b.cw_lr,
            cw_steps: b.cw_steps,
            kappa: b.kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Corpus splits whose utterances serve as imposters.
    pub splits: Vec<Split>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub target: TargetSection,
    pub osi: OsiSection,
    pub attack: AttackSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses and validates a configuration file. Errors name the offending
    /// key path.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets every seed of the run to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.target.seed = seed;
        self.attack.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.n_speakers < 2 {
            return Err(Error::config("corpus.n_speakers", "need at least 2 speakers"));
        }
        if c.utts_per_speaker < 3 {
            return Err(Error::config("corpus.utts_per_speaker", "need at least 3 utterances per speaker"));
        }
        if !(c.duration_s > 0.0 && c.duration_s.is_finite()) {
            return Err(Error::config("corpus.duration_s", "must be positive"));
        }
        if self.target.d == 0 {
            return Err(Error::config("target.d", "must be positive"));
        }
        if self.target.epochs == 0 {
            return Err(Error::config("target.epochs", "must be positive"));
        }
        if !(self.target.lr > 0.0) {
            return Err(Error::config("target.lr", "must be positive"));
        }
        let o = &self.osi;
        if o.enrolled_speakers == 0 || o.enrolled_speakers >= c.n_speakers {
            return Err(Error::config("osi.enrolled_speakers", "must lie in 1..corpus.n_speakers"));
        }
        if !(o.target_far > 0.0 && o.target_far < 1.0) {
            return Err(Error::config("osi.target_far", "must lie in (0, 1)"));
        }
        let a = &self.attack;
        if !(a.epsilon > 0.0 && a.epsilon <= 1.0) {
            return Err(Error::config("attack.epsilon", "must lie in (0, 1]"));
        }
        for (name, v) in [("lambda_s", a.lambda_s), ("lambda_f", a.lambda_f), ("lambda_a", a.lambda_a), ("lambda_n", a.lambda_n)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("attack.{name}"), "must be non-negative"));
            }
        }
        if a.kind == AttackKind::Ssed && a.epochs == 0 {
            return Err(Error::config("attack.epochs", "must be positive"));
        }
        if !(a.lr > 0.0) {
            return Err(Error::config("attack.lr", "must be positive"));
        }
        if a.batch_size == 0 {
            return Err(Error::config("attack.batch_size", "must be positive"));
        }
        let k = self.enrolled_count();
        if a.t == 0 || a.t > k {
            return Err(Error::config("attack.t", format!("must lie in 1..={k}")));
        }
        if a.baseline.iterations == 0 {
            return Err(Error::config("attack.baseline.iterations", "must be positive"));
        }
        if a.baseline.step.is_some_and(|s| !(s >= 0.0 && s <= a.epsilon)) {
            return Err(Error::config("attack.baseline.step", "must lie in [0, attack.epsilon]"));
        }
        if self.eval.splits.is_empty() {
            return Err(Error::config("eval.splits", "must name at least one split"));
        }
        if self.eval.splits.contains(&Split::TrainTarget) {
            return Err(Error::config("eval.splits", "train-target utterances trained the target system"));
        }
        if a.kind == AttackKind::Ssed && self.eval.splits.contains(&Split::TrainAttack) {
            return Err(Error::config("eval.splits", "train-attack utterances trained the attacker"));
        }
        Ok(())
    }

    /// Number of enrolled speakers for the configured task.
    pub fn enrolled_count(&self) -> usize {
        match self.attack.task {
            Task::Csi => self.corpus.n_speakers,
            Task::Osi => self.osi.enrolled_speakers,
        }
    }

    pub fn corpus_hash(&self) -> String {
        config_hash(&self.corpus)
    }

    pub fn target_hash(&self) -> String {
        config_hash(&(&self.corpus, &self.target))
    }

    pub fn enrollment_hash(&self) -> String {
        config_hash(&(&self.corpus, &self.target, self.attack.task, &self.osi))
    }

    pub fn attacker_hash(&self) -> String {
        config_hash(&(&self.corpus, &self.target, &self.osi, &self.attack))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

impl Default for RunConfig {
    /// The 10-speaker desk-scale closed-set experiment.
    fn default() -> Self {
        let t = TargetConfig::default();
        let a = AttackConfig::default();
        Self {
            corpus: CorpusConfig::default(),
            target: TargetSection {
                d: t.embed_dim,
                epochs: t.epochs,
                lr: t.lr,
                seed: t.seed,
                channels: t.channels,
                batch_size: t.batch_size,
                margin: t.margin,
                scale: t.scale,
            },
            osi: OsiSection { enrolled_speakers: 8, target_far: 0.05 },
            attack: AttackSection {
                kind: AttackKind::Ssed,
                task: Task::Csi,
                epsilon: a.epsilon,
                lambda_s: a.lambda_s,
                lambda_f: a.lambda_f,
                lambda_a: a.lambda_a,
                lambda_n: a.lambda_n,
                epochs: a.epochs,
                lr: a.lr,
                seed: a.seed,
                t: a.target,
                batch_size: a.batch_size,
                symmetric_norm: a.symmetric_norm,
                saliency: true,
                arch: a.arch,
                baseline: BaselineSection::default(),
            },
            eval: EvalSection { splits: vec![Split::Test], output_dir: PathBuf::from("out") },
        }
    }
}
