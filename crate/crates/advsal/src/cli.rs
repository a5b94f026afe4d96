//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use advsal_core::ssed::{attack, train_attacker, Generator};
use advsal_core::synth::{make_corpus, CorpusManifest};
use advsal_core::target::{calibrate_threshold, train_target, EmbeddingNet, EnrollmentDB, Task};
use advsal_core::Waveform;
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::artifact::{load_generator, load_target, read_json, save_generator, save_target, write_json, DirLock};
use crate::config::{AttackKind, RunConfig};
use crate::harness::{
    enroll_all, evaluate_attack, run_ablation_angular, run_ablation_saliency, sweep_hyperparameter, write_report, Attacker,
    Experiment, Hyperparameter,
};
use crate::spectrogram::{export_spectrogram, DEFAULT_FRAME, DEFAULT_HOP};
use crate::wav::{read_wav, write_wav};
use crate::{Error, Result};

pub const CORPUS_FILE: &str = "corpus.json";
pub const TARGET_FILE: &str = "target.json";
pub const ENROLLMENT_FILE: &str = "enrollment.json";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const ATTACKER_FILE: &str = "attacker.json";
pub const ADVERSARIAL_FILE: &str = "adversarial.wav";

#[derive(Debug, Parser)]
#[command(name = "advsal", version, about = "Saliency-masked adversarial attacks on speaker identification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; built-in desk-scale defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `eval.output_dir`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Sets the corpus, target and attack seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Accept upstream artifacts produced by a different configuration.
    #[arg(long, global = true)]
    pub force: bool,
    /// Evaluation worker threads.
    #[arg(long, global = true, env = "ADVSAL_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the corpus manifest (and optionally every utterance as WAV).
    Synth {
        #[arg(long)]
        wavs: bool,
    },
    /// Train the speaker embedding network.
    TrainTarget,
    /// Enroll speakers into the identification database.
    Enroll,
    /// Calibrate the open-set rejection threshold.
    Calibrate,
    /// Train the encoder-decoder attacker.
    TrainAttack,
    /// Attack one utterance and write the adversarial WAV.
    Attack {
        /// 16 kHz mono 16-bit WAV to attack.
        #[arg(long, conflicts_with = "utterance", required_unless_present = "utterance")]
        input: Option<PathBuf>,
        /// Corpus utterance id to attack.
        #[arg(long)]
        utterance: Option<u32>,
        /// Destination WAV; `<output>/adversarial.wav` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the configured attack on the imposter utterances.
    Eval,
    /// Train and evaluate with and without one attacker component.
    Ablate {
        #[arg(long, value_enum)]
        component: Component,
    },
    /// Train and evaluate once per value of one loss weight.
    Sweep {
        /// One of lambda_s, lambda_f, lambda_a, lambda_n.
        #[arg(long)]
        name: Hyperparameter,
        /// At least three strictly increasing values, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        grid: Vec<f64>,
    },
    /// Export the magnitude spectrogram of a WAV file as CSV.
    Spectrogram {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FRAME)]
        frame: usize,
        #[arg(long, default_value_t = DEFAULT_HOP)]
        hop: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Saliency,
    Angular,
}

/// An artifact document stamped with the hash of the configuration that
/// produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stamped<T> {
    config_hash: String,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorpusDoc {
    manifest: CorpusManifest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnrollmentDoc {
    task: Task,
    db: EnrollmentDB,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ThresholdDoc {
    theta: f64,
    target_far: f64,
    imposters: usize,
}

#[derive(Debug, Serialize)]
struct AblationDoc<'a> {
    config_hash: &'a str,
    component: &'a str,
    with: advsal_core::metrics::Aggregates,
    without: advsal_core::metrics::Aggregates,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    force: bool,
    workers: usize,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn check(&self, artifact: &Path, found: &str, expected: &str) -> Result<()> {
        if found != expected && !self.force {
            return Err(Error::HashMismatch {
                artifact: artifact.to_path_buf(),
                expected: expected.to_owned(),
                found: found.to_owned(),
            });
        }
        Ok(())
    }

    fn read_stamped<T: DeserializeOwned>(&self, name: &str, what: &'static str, expected: &str) -> Result<T> {
        let path = self.path(name);
        let doc: Stamped<T> = read_json(&path, what)?;
        self.check(&path, &doc.config_hash, expected)?;
        Ok(doc.body)
    }

    fn corpus(&self) -> Result<CorpusManifest> {
        let doc: CorpusDoc = self.read_stamped(CORPUS_FILE, "corpus manifest", &self.cfg.corpus_hash())?;
        doc.manifest.validate()?;
        Ok(doc.manifest)
    }

    fn target(&self) -> Result<EmbeddingNet> {
        let path = self.path(TARGET_FILE);
        let (net, sidecar) = load_target(&path)?;
        self.check(&path, &sidecar.config_hash, &self.cfg.target_hash())?;
        Ok(net)
    }

    fn enrollment(&self) -> Result<EnrollmentDB> {
        let doc: EnrollmentDoc = self.read_stamped(ENROLLMENT_FILE, "enrollment", &self.cfg.enrollment_hash())?;
        if doc.task != self.cfg.attack.task {
            return Err(Error::config("attack.task", format!("enrollment was built for {:?}", doc.task)));
        }
        Ok(doc.db)
    }

    /// The open-set threshold, or `None` for the closed-set task.
    fn theta(&self) -> Result<Option<f64>> {
        match self.cfg.attack.task {
            Task::Csi => Ok(None),
            Task::Osi => {
                let doc: ThresholdDoc = self.read_stamped(THRESHOLD_FILE, "threshold", &self.cfg.enrollment_hash())?;
                Ok(Some(doc.theta))
            }
        }
    }

    fn generator(&self) -> Result<Generator> {
        let path = self.path(ATTACKER_FILE);
        let (gen, sidecar) = load_generator(&path)?;
        self.check(&path, &sidecar.config_hash, &self.cfg.attacker_hash())?;
        Ok(gen)
    }

    fn experiment(&self) -> Result<Experiment> {
        Ok(Experiment {
            manifest: self.corpus()?,
            net: self.target()?,
            db: self.enrollment()?,
            splits: self.cfg.eval.splits.clone(),
        })
    }

    fn require_ssed(&self, what: &str) -> Result<()> {
        if self.cfg.attack.kind != AttackKind::Ssed {
            return Err(Error::config("attack.kind", format!("{what} needs kind `ssed`, got `{}`", self.cfg.attack.kind.as_str())));
        }
        Ok(())
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 on validation errors, 2 on runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    let out = cli.output.clone().unwrap_or_else(|| cfg.eval.output_dir.clone());
    let workers = match cli.workers {
        Some(0) => return Err(Error::config("--workers", "must be at least 1")),
        Some(w) => w,
        None => 1,
    };
    let ctx = Ctx { cfg, out, force: cli.force, workers };

    if let Command::Spectrogram { input, out, frame, hop } = &cli.command {
        let w = read_wav(input)?;
        return export_spectrogram(&w, *frame, *hop, out);
    }
    let _lock = DirLock::acquire(&ctx.out)?;
    match cli.command {
        Command::Synth { wavs } => synth(&ctx, wavs),
        Command::TrainTarget => train_target_cmd(&ctx),
        Command::Enroll => enroll_cmd(&ctx),
        Command::Calibrate => calibrate_cmd(&ctx),
        Command::TrainAttack => train_attack_cmd(&ctx),
        Command::Attack { input, utterance, out } => attack_cmd(&ctx, input, utterance, out),
        Command::Eval => eval_cmd(&ctx),
        Command::Ablate { component } => ablate_cmd(&ctx, component),
        Command::Sweep { name, grid } => sweep_cmd(&ctx, name, &grid),
        Command::Spectrogram { .. } => unreachable!("handled above"),
    }
}

fn synth(ctx: &Ctx, wavs: bool) -> Result<()> {
    let c = &ctx.cfg.corpus;
    let manifest = make_corpus(c.n_speakers, c.utts_per_speaker, c.duration_s, c.seed)?;
    if wavs {
        let dir = ctx.path("wavs");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for u in &manifest.utterances {
            write_wav(dir.join(format!("{:04}_{:05}.wav", u.speaker_id, u.utterance_id)), &manifest.synthesize(u.utterance_id)?)?;
        }
    }
    let n = manifest.utterances.len();
    write_json(ctx.path(CORPUS_FILE), &Stamped { config_hash: ctx.cfg.corpus_hash(), body: CorpusDoc { manifest } })?;
    println!("synth: {} speakers, {n} utterances", c.n_speakers);
    Ok(())
}

fn train_target_cmd(ctx: &Ctx) -> Result<()> {
    let manifest = ctx.corpus()?;
    let tc = ctx.cfg.target.to_target_config();
    let net = train_target(&manifest, &tc)?;
    save_target(ctx.path(TARGET_FILE), &net, &tc, &ctx.cfg.target_hash())?;
    println!("train-target: final loss {:.4}", net.meta.loss_curve.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn enroll_cmd(ctx: &Ctx) -> Result<()> {
    let manifest = ctx.corpus()?;
    let net = ctx.target()?;
    let ids = manifest.speaker_ids();
    let ids = &ids[..ctx.cfg.enrolled_count().min(ids.len())];
    let db = enroll_all(&net, &manifest, ids)?;
    let k = db.k();
    let doc = EnrollmentDoc { task: ctx.cfg.attack.task, db };
    write_json(ctx.path(ENROLLMENT_FILE), &Stamped { config_hash: ctx.cfg.enrollment_hash(), body: doc })?;
    println!("enroll: {k} speakers");
    Ok(())
}

fn calibrate_cmd(ctx: &Ctx) -> Result<()> {
    if ctx.cfg.attack.task != Task::Osi {
        return Err(Error::config("attack.task", "calibration applies to the open-set task"));
    }
    let manifest = ctx.corpus()?;
    let net = ctx.target()?;
    let db = ctx.enrollment()?;
    // Non-enrolled speakers' utterances outside the evaluation splits.
    let imposters = manifest
        .utterances
        .iter()
        .filter(|u| db.position(u.speaker_id).is_none() && !ctx.cfg.eval.splits.contains(&u.split))
        .map(|u| manifest.synthesize(u.utterance_id))
        .collect::<advsal_core::Result<Vec<Waveform>>>()?;
    let far = ctx.cfg.osi.target_far;
    let theta = calibrate_threshold(&net, &db, &imposters, far)?;
    let doc = ThresholdDoc { theta, target_far: far, imposters: imposters.len() };
    write_json(ctx.path(THRESHOLD_FILE), &Stamped { config_hash: ctx.cfg.enrollment_hash(), body: doc })?;
    println!("calibrate: theta {theta:.6} at FAR {far}");
    Ok(())
}

fn train_attack_cmd(ctx: &Ctx) -> Result<()> {
    ctx.require_ssed("train-attack")?;
    let exp = ctx.experiment()?;
    let cfg = ctx.cfg.attack.to_attack_config(ctx.theta()?);
    let init = Generator::new(cfg.arch, cfg.saliency, cfg.seed);
    let trained = train_attacker(init, &cfg, &exp.manifest, &exp.system())?;
    save_generator(ctx.path(ATTACKER_FILE), &trained.generator, &cfg, &trained.loss_curve, &ctx.cfg.attacker_hash())?;
    println!("train-attack: final loss {:.4}", trained.loss_curve.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn attack_cmd(ctx: &Ctx, input: Option<PathBuf>, utterance: Option<u32>, out: Option<PathBuf>) -> Result<()> {
    let dest = out.unwrap_or_else(|| ctx.path(ADVERSARIAL_FILE));
    let x = match (&input, utterance) {
        (Some(p), _) => {
            if same_file(p, &dest) {
                return Err(Error::config("--out", "refusing to overwrite the input file"));
            }
            read_wav(p)?
        }
        (None, Some(id)) => ctx.corpus()?.synthesize(id)?,
        (None, None) => return Err(Error::config("--input", "give --input or --utterance")),
    };
    let theta = ctx.theta()?;
    let adv = match ctx.cfg.attack.kind {
        AttackKind::Ssed => {
            let gen = ctx.generator()?;
            attack(&gen, &ctx.cfg.attack.to_attack_config(theta), &x).adversarial
        }
        kind => {
            let (net, db) = (ctx.target()?, ctx.enrollment()?);
            let sys = advsal_core::target::TargetSystem::new(&net, &db);
            let bc = ctx.cfg.attack.to_baseline_config(theta);
            match kind {
                AttackKind::Fgsm => Attacker::Fgsm(&bc),
                AttackKind::Bim => Attacker::Bim(&bc),
                _ => Attacker::Cw(&bc),
            }
            .perturb(&sys, &x)?
        }
    };
    write_wav(&dest, &adv)?;
    println!("attack: wrote {}", dest.display());
    Ok(())
}

fn eval_cmd(ctx: &Ctx) -> Result<()> {
    let exp = ctx.experiment()?;
    let theta = ctx.theta()?;
    let a = &ctx.cfg.attack;
    let utts = exp.imposters(a.t)?;
    let sys = exp.system();
    let seeds = [ctx.cfg.corpus.seed, ctx.cfg.target.seed, a.seed];
    let hash = ctx.cfg.attacker_hash();

    let clean = evaluate_attack(&Attacker::None { task: a.task, target: a.t, theta }, &sys, &exp.manifest, &utts, ctx.workers)?;
    write_report(&ctx.out, "report-none", &clean, &ctx.cfg, &hash, &seeds)?;

    let ssed_cfg;
    let gen;
    let bc = a.to_baseline_config(theta);
    let attacker = match a.kind {
        AttackKind::Ssed => {
            gen = ctx.generator()?;
            ssed_cfg = a.to_attack_config(theta);
            Attacker::Ssed { generator: &gen, config: &ssed_cfg }
        }
        AttackKind::Fgsm => Attacker::Fgsm(&bc),
        AttackKind::Bim => Attacker::Bim(&bc),
        AttackKind::Cw => Attacker::Cw(&bc),
    };
    let report = evaluate_attack(&attacker, &sys, &exp.manifest, &utts, ctx.workers)?;
    write_report(&ctx.out, &format!("report-{}", a.kind.as_str()), &report, &ctx.cfg, &hash, &seeds)?;
    for r in [&clean, &report] {
        let g = &r.aggregates;
        println!(
            "eval {:>4}: tasr {:.3}  snr {}  time {:.4}s  ({} utterances)",
            r.attack,
            g.tasr,
            g.mean_snr_db.map_or("-".into(), |v| format!("{v:.2} dB")),
            g.mean_time_s,
            r.rows.len()
        );
    }
    Ok(())
}

fn ablate_cmd(ctx: &Ctx, component: Component) -> Result<()> {
    ctx.require_ssed("ablate")?;
    let exp = ctx.experiment()?;
    let cfg = ctx.cfg.attack.to_attack_config(ctx.theta()?);
    let ab = match component {
        Component::Saliency => run_ablation_saliency(&exp, &cfg, ctx.workers)?,
        Component::Angular => run_ablation_angular(&exp, &cfg, ctx.workers)?,
    };
    let hash = ctx.cfg.attacker_hash();
    let seeds = [ctx.cfg.corpus.seed, ctx.cfg.target.seed, cfg.seed];
    let stem = format!("ablation-{}", ab.component);
    write_report(&ctx.out, &format!("{stem}-with"), &ab.with, &ctx.cfg, &hash, &seeds)?;
    write_report(&ctx.out, &format!("{stem}-without"), &ab.without, &ctx.cfg, &hash, &seeds)?;
    let doc = AblationDoc { config_hash: &hash, component: &ab.component, with: ab.with.aggregates, without: ab.without.aggregates };
    write_json(ctx.path(&format!("{stem}.json")), &doc)?;
    for (label, r) in [("with", &ab.with), ("without", &ab.without)] {
        println!(
            "ablate {} {label}: tasr {:.3}  snr {}",
            ab.component,
            r.aggregates.tasr,
            r.aggregates.mean_snr_db.map_or("-".into(), |v| format!("{v:.2} dB"))
        );
    }
    Ok(())
}

fn sweep_cmd(ctx: &Ctx, name: Hyperparameter, grid: &[f64]) -> Result<()> {
    ctx.require_ssed("sweep")?;
    crate::harness::validate_grid(grid)?;
    let exp = ctx.experiment()?;
    let cfg = ctx.cfg.attack.to_attack_config(ctx.theta()?);
    let res = sweep_hyperparameter(&exp, name, grid, &cfg, ctx.workers)?;
    res.write_csv(ctx.path(&format!("sweep-{name}.csv")))?;
    write_json(ctx.path(&format!("sweep-{name}.json")), &Stamped { config_hash: ctx.cfg.attacker_hash(), body: &res })?;
    for p in &res.points {
        println!("sweep {name}={}: tasr {:.3}  snr {}", p.value, p.tasr, p.mean_snr_db.map_or("-".into(), |v| format!("{v:.2} dB")));
    }
    Ok(())
}
