//! Experiment protocol: attack evaluation with timing, ablations and
//! hyperparameter sweeps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use advsal_core::audio::snr_db;
use advsal_core::baseline::{bim, cw_l2, fgsm, BaselineConfig};
use advsal_core::metrics::{is_success, AttackReport, ReportRow};
use advsal_core::ssed::{attack, train_attacker, AttackConfig, Generator, TrainedAttacker};
use advsal_core::synth::{make_corpus, CorpusManifest, Split};
use advsal_core::target::{
    decide_csi, decide_osi, enroll, train_target, Decision, EmbeddingNet, EnrollmentDB, TargetConfig, TargetSystem, Task,
};
use advsal_core::Waveform;
use serde::{Deserialize, Serialize};

use crate::artifact::{write_csv, write_json};
use crate::{Error, Result};

/// An attack as seen by the evaluation loop.
#[derive(Debug, Clone, Copy)]
pub enum Attacker<'a> {
    /// Clean pass-through; measures the no-attack baseline.
    None { task: Task, target: usize, theta: Option<f64> },
    Ssed { generator: &'a Generator, config: &'a AttackConfig },
    Fgsm(&'a BaselineConfig),
    Bim(&'a BaselineConfig),
    Cw(&'a BaselineConfig),
}

impl Attacker<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None { .. } => "none",
            Self::Ssed { .. } => "ssed",
            Self::Fgsm(_) => "fgsm",
            Self::Bim(_) => "bim",
            Self::Cw(_) => "cw",
        }
    }

    fn settings(&self) -> (Task, usize, Option<f64>, f64) {
        match *self {
            Self::None { task, target, theta } => (task, target, theta, 0.0),
            Self::Ssed { config, .. } => (config.task, config.target, config.theta, config.epsilon),
            Self::Fgsm(c) | Self::Bim(c) | Self::Cw(c) => (c.task, c.target, c.theta, c.epsilon),
        }
    }

    /// Adversarial version of `x`.
    pub fn perturb(&self, sys: &TargetSystem<'_>, x: &Waveform) -> advsal_core::Result<Waveform> {
        match *self {
            Self::None { .. } => Ok(x.clone()),
            Self::Ssed { generator, config } => Ok(attack(generator, config, x).adversarial),
            Self::Fgsm(c) => fgsm(x, sys, c),
            Self::Bim(c) => bim(x, sys, c).map(|(w, _)| w),
            Self::Cw(c) => cw_l2(x, sys, c).map(|o| o.adversarial),
        }
    }
}

/// Decision of the target system on `x`.
pub fn decide(sys: &TargetSystem<'_>, x: &[f64], task: Task, theta: Option<f64>) -> Decision {
    let s = sys.scores(x);
    match task {
        Task::Csi => Decision::Speaker(decide_csi(&s)),
        Task::Osi => decide_osi(&s, theta.unwrap_or(f64::INFINITY)),
    }
}

/// Utterances of `splits` whose speaker is not enrolled at position `target`,
/// in manifest order.
pub fn imposter_utterances(manifest: &CorpusManifest, db: &EnrollmentDB, target: usize, splits: &[Split]) -> Result<Vec<u32>> {
    let t = *db
        .speaker_ids
        .get(target.wrapping_sub(1))
        .ok_or(advsal_core::Error::InvalidTarget(target))?;
    Ok(manifest
        .utterances
        .iter()
        .filter(|u| splits.contains(&u.split) && u.speaker_id != t)
        .map(|u| u.utterance_id)
        .collect())
}

fn attack_row(attacker: &Attacker<'_>, sys: &TargetSystem<'_>, manifest: &CorpusManifest, utt: u32) -> ReportRow {
    let (task, target, theta, _) = attacker.settings();
    let source_speaker = manifest.utterance(utt).map_or(u32::MAX, |u| u.speaker_id);
    let failed = |e: String| ReportRow {
        utterance_id: utt,
        source_speaker,
        decision: None,
        snr_db: None,
        gen_time_s: 0.0,
        success: false,
        error: Some(e),
    };
    let x = match manifest.synthesize(utt) {
        Ok(x) => x,
        Err(e) => return failed(e.to_string()),
    };
    let start = Instant::now();
    let adv = attacker.perturb(sys, &x);
    let gen_time_s = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    let adv = match adv {
        Ok(a) => a,
        Err(e) => return failed(e.to_string()),
    };
    let delta: Vec<f64> = adv.samples().iter().zip(x.samples()).map(|(a, b)| a - b).collect();
    let snr = match snr_db(x.samples(), &delta) {
        Ok(v) => Some(v),
        Err(advsal_core::Error::ZeroPerturbation) => None,
        Err(e) => return failed(e.to_string()),
    };
    let decision = decide(sys, adv.samples(), task, theta);
    ReportRow {
        utterance_id: utt,
        source_speaker,
        decision: Some(decision),
        snr_db: snr,
        gen_time_s,
        success: is_success(decision, target),
        error: None,
    }
}

/// Attacks every utterance in `utterances` and scores the results through
/// the frozen target. Rows are processed on up to `workers` threads; row
/// order always follows `utterances`.
pub fn evaluate_attack(
    attacker: &Attacker<'_>,
    sys: &TargetSystem<'_>,
    manifest: &CorpusManifest,
    utterances: &[u32],
    workers: usize,
) -> Result<AttackReport> {
    let (task, target, theta, epsilon) = attacker.settings();
    if target == 0 || target > sys.db.k() {
        return Err(advsal_core::Error::InvalidTarget(target).into());
    }
    if task == Task::Osi && theta.is_none() {
        return Err(advsal_core::Error::InvalidArguments("open-set evaluation needs theta".into()).into());
    }
    let workers = workers.clamp(1, utterances.len().max(1));
    let rows: Vec<ReportRow> = if workers == 1 {
        utterances.iter().map(|&u| attack_row(attacker, sys, manifest, u)).collect()
    } else {
        let chunk = utterances.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = utterances
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|&u| attack_row(attacker, sys, manifest, u)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    Ok(AttackReport::new(attacker.name(), task, epsilon, target, rows)?)
}

/// Corpus parameters of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { n_speakers: 10, utts_per_speaker: 20, duration_s: 0.5, seed: 0 }
    }
}

/// Enrolls `ids` from all of their train-target utterances (the smallest
/// count across speakers, so every centroid averages the same number).
pub fn enroll_all(net: &EmbeddingNet, manifest: &CorpusManifest, ids: &[u32]) -> Result<EnrollmentDB> {
    let n = ids.iter().map(|&s| manifest.speaker_split(s, Split::TrainTarget).count()).min().unwrap_or(0);
    Ok(enroll(net, manifest, ids, n)?)
}

/// A corpus, a trained target network, its enrollment and the splits that
/// supply imposters.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub manifest: CorpusManifest,
    pub net: EmbeddingNet,
    pub db: EnrollmentDB,
    pub splits: Vec<Split>,
}

impl Experiment {
    /// Synthesizes the corpus, trains the target and enrolls every speaker
    /// (closed set); imposters come from the test split.
    pub fn build(corpus: &CorpusConfig, target: &TargetConfig) -> Result<Self> {
        let manifest = make_corpus(corpus.n_speakers, corpus.utts_per_speaker, corpus.duration_s, corpus.seed)?;
        let net = train_target(&manifest, target)?;
        let db = enroll_all(&net, &manifest, &manifest.speaker_ids())?;
        Ok(Self { manifest, net, db, splits: vec![Split::Test] })
    }

    pub fn system(&self) -> TargetSystem<'_> {
        TargetSystem::new(&self.net, &self.db)
    }

    /// Closed-set accuracy on the imposter splits' utterances of enrolled
    /// speakers.
    pub fn clean_accuracy(&self) -> Result<f64> {
        let sys = self.system();
        let (mut hits, mut n) = (0usize, 0usize);
        for u in self.manifest.utterances.iter().filter(|u| self.splits.contains(&u.split)) {
            let Some(pos) = self.db.position(u.speaker_id) else { continue };
            let x = self.manifest.synthesize(u.utterance_id)?;
            hits += usize::from(decide_csi(&sys.scores(x.samples())) == pos);
            n += 1;
        }
        if n == 0 {
            return Err(advsal_core::Error::EmptyInput.into());
        }
        Ok(hits as f64 / n as f64)
    }

    pub fn imposters(&self, target: usize) -> Result<Vec<u32>> {
        imposter_utterances(&self.manifest, &self.db, target, &self.splits)
    }

    pub fn train_attacker(&self, cfg: &AttackConfig) -> Result<TrainedAttacker> {
        let init = Generator::new(cfg.arch, cfg.saliency, cfg.seed);
        Ok(train_attacker(init, cfg, &self.manifest, &self.system())?)
    }

    /// Trains an attacker with `cfg` and evaluates it on the imposters.
    pub fn train_and_evaluate(&self, cfg: &AttackConfig, workers: usize) -> Result<(TrainedAttacker, AttackReport)> {
        let trained = self.train_attacker(cfg)?;
        let report = evaluate_attack(
            &Attacker::Ssed { generator: &trained.generator, config: cfg },
            &self.system(),
            &self.manifest,
            &self.imposters(cfg.target)?,
            workers,
        )?;
        Ok((trained, report))
    }
}

/// Paired reports of an ablation: the full configuration and the one with
/// a component removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub component: String,
    pub with: AttackReport,
    pub without: AttackReport,
}

/// Trains and evaluates `cfg` with and without the saliency-mask decoder
/// (constant unit mask, no `L_f`).
pub fn run_ablation_saliency(exp: &Experiment, cfg: &AttackConfig, workers: usize) -> Result<Ablation> {
    let with = AttackConfig { saliency: true, ..cfg.clone() };
    let without = AttackConfig { saliency: false, ..cfg.clone() };
    Ok(Ablation {
        component: "saliency".into(),
        with: exp.train_and_evaluate(&with, workers)?.1,
        without: exp.train_and_evaluate(&without, workers)?.1,
    })
}

/// Trains and evaluates `cfg` with its angular weight and with `lambda_a = 0`.
pub fn run_ablation_angular(exp: &Experiment, cfg: &AttackConfig, workers: usize) -> Result<Ablation> {
    let without = AttackConfig { lambda_a: 0.0, ..cfg.clone() };
    Ok(Ablation {
        component: "angular".into(),
        with: exp.train_and_evaluate(cfg, workers)?.1,
        without: exp.train_and_evaluate(&without, workers)?.1,
    })
}

/// A loss weight that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperparameter {
    LambdaS,
    LambdaF,
    LambdaA,
    LambdaN,
}

impl Hyperparameter {
    pub fn apply(self, cfg: &AttackConfig, value: f64) -> AttackConfig {
        let mut c = cfg.clone();
        match self {
            Self::LambdaS => c.lambda_s = value,
            Self::LambdaF => c.lambda_f = value,
            Self::LambdaA => c.lambda_a = value,
            Self::LambdaN => c.lambda_n = value,
        }
        c
    }
}

impl fmt::Display for Hyperparameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LambdaS => "lambda_s",
            Self::LambdaF => "lambda_f",
            Self::LambdaA => "lambda_a",
            Self::LambdaN => "lambda_n",
        })
    }
}

impl FromStr for Hyperparameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_s" => Ok(Self::LambdaS),
            "lambda_f" => Ok(Self::LambdaF),
            "lambda_a" => Ok(Self::LambdaA),
            "lambda_n" => Ok(Self::LambdaN),
            other => Err(Error::config("sweep.name", format!("unknown hyperparameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub tasr: f64,
    pub mean_snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: Hyperparameter,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path, &self.points)
    }
}

/// Checks that a sweep grid has at least three strictly increasing values.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::config("sweep.grid", format!("{} values, need at least 3", grid.len())));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::config("sweep.grid", "values must be strictly increasing"));
    }
    Ok(())
}

/// One train + evaluate per grid value of `name`, others fixed at `fixed`.
pub fn sweep_hyperparameter(
    exp: &Experiment,
    name: Hyperparameter,
    grid: &[f64],
    fixed: &AttackConfig,
    workers: usize,
) -> Result<SweepResult> {
    validate_grid(grid)?;
    let points = grid
        .iter()
        .map(|&value| {
            let (_, rep) = exp.train_and_evaluate(&name.apply(fixed, value), workers)?;
            Ok(SweepPoint { value, tasr: rep.aggregates.tasr, mean_snr_db: rep.aggregates.mean_snr_db })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { name, points })
}

/// Machine description stored next to timing results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hardware {
    pub os: String,
    pub arch: String,
    pub cpu: Option<String>,
    pub logical_cpus: usize,
}

impl Hardware {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_owned())
        });
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpu,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CsvRow {
    utterance_id: u32,
    source_speaker: u32,
    decision: String,
    snr_db: Option<f64>,
    gen_time_s: f64,
    success: bool,
}

fn decision_label(d: Option<Decision>) -> String {
    match d {
        Some(Decision::Speaker(i)) => i.to_string(),
        Some(Decision::Reject) => "reject".into(),
        None => "error".into(),
    }
}

/// JSON summary written next to a report's CSV rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary<C> {
    pub attack: String,
    pub task: Task,
    pub epsilon: f64,
    pub target: usize,
    pub aggregates: advsal_core::metrics::Aggregates,
    pub config: C,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub hardware: Hardware,
}

/// Writes `<stem>.csv` (one row per utterance) and `<stem>.json`.
pub fn write_report<C: Serialize>(
    dir: impl AsRef<Path>,
    stem: &str,
    report: &AttackReport,
    config: C,
    config_hash: &str,
    seeds: &[u64],
) -> Result<()> {
    let dir = dir.as_ref();
    let rows: Vec<CsvRow> = report
        .rows
        .iter()
        .map(|r| CsvRow {
            utterance_id: r.utterance_id,
            source_speaker: r.source_speaker,
            decision: decision_label(r.decision),
            snr_db: r.snr_db,
            gen_time_s: r.gen_time_s,
            success: r.success,
        })
        .collect();
    write_csv(dir.join(format!("{stem}.csv")), &rows)?;
    let summary = ReportSummary {
        attack: report.attack.clone(),
        task: report.task,
        epsilon: report.epsilon,
        target: report.target,
        aggregates: report.aggregates,
        config,
        config_hash: config_hash.to_owned(),
        seeds: seeds.to_vec(),
        hardware: Hardware::detect(),
    };
    write_json(dir.join(format!("{stem}.json")), &summary)
}
