//! On-disk artifacts: JSON documents, checkpoints (raw little-endian `f64`
//! weights plus a JSON sidecar) and the output-directory lock.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use advsal_core::nn::Params;
use advsal_core::ssed::{ArchPlan, AttackConfig, Generator};
use advsal_core::target::{EmbeddingNet, TargetConfig, TrainingMeta};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact types serialize");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>, what: &'static str) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        what,
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Hex SHA-256 of the canonical JSON encoding of `value`, truncated to 16
/// characters.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_weights(path: &Path, values: &[f64]) -> Result<String> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn read_weights(path: &Path, expected_sha: &str) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| if e.kind() == std::io::ErrorKind::NotFound { Error::MissingArtifact(path.to_path_buf()) } else { Error::io(path, e) })?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let parse = |message: String| Error::Parse { what: "weights", path: path.to_path_buf(), message };
    if bytes.len() % 8 != 0 {
        return Err(parse(format!("{} bytes is not a whole number of f64 values", bytes.len())));
    }
    if sha256_hex(&bytes) != expected_sha {
        return Err(parse("checksum does not match the sidecar".into()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

/// JSON sidecar of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar<A> {
    pub kind: String,
    pub config_hash: String,
    /// Weight file name, relative to the sidecar.
    pub weights: String,
    pub weights_sha256: String,
    /// Length of each parameter array, then of each buffer array.
    pub param_shapes: Vec<usize>,
    pub buffer_shapes: Vec<usize>,
    pub arch: A,
    pub seed: u64,
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
}

fn save_checkpoint<P: Params, A: Serialize>(
    sidecar_path: &Path,
    kind: &str,
    net: &P,
    arch: A,
    meta: &TrainingMeta,
    config_hash: &str,
) -> Result<()> {
    let weights = sidecar_path.with_extension("bin");
    let sha = write_weights(&weights, &net.flat_state())?;
    let sidecar = Sidecar {
        kind: kind.to_owned(),
        config_hash: config_hash.to_owned(),
        weights: weights.file_name().and_then(|n| n.to_str()).expect("utf-8 file name").to_owned(),
        weights_sha256: sha,
        param_shapes: net.params().iter().map(|p| p.len()).collect(),
        buffer_shapes: net.buffers().iter().map(|p| p.len()).collect(),
        arch,
        seed: meta.seed,
        epochs: meta.epochs,
        loss_curve: meta.loss_curve.clone(),
    };
    write_json(sidecar_path, &sidecar)
}

fn load_checkpoint<P: Params, A: DeserializeOwned>(
    sidecar_path: &Path,
    kind: &str,
    build: impl FnOnce(&A) -> P,
) -> Result<(P, Sidecar<A>)> {
    let sidecar: Sidecar<A> = read_json(sidecar_path, "checkpoint sidecar")?;
    let parse = |message: String| Error::Parse { what: "checkpoint sidecar", path: sidecar_path.to_path_buf(), message };
    if sidecar.kind != kind {
        return Err(parse(format!("kind `{}`, expected `{kind}`", sidecar.kind)));
    }
    let mut net = build(&sidecar.arch);
    let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let buffers: Vec<usize> = net.buffers().iter().map(|p| p.len()).collect();
    if shapes != sidecar.param_shapes || buffers != sidecar.buffer_shapes {
        return Err(parse("array shapes do not match the architecture".into()));
    }
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let values = read_weights(&dir.join(&sidecar.weights), &sidecar.weights_sha256)?;
    net.load_state(&values)?;
    Ok((net, sidecar))
}

pub fn save_target(path: impl AsRef<Path>, net: &EmbeddingNet, cfg: &TargetConfig, config_hash: &str) -> Result<()> {
    save_checkpoint(path.as_ref(), "embedding-net", net, cfg, &net.meta, config_hash)
}

pub fn load_target(path: impl AsRef<Path>) -> Result<(EmbeddingNet, Sidecar<TargetConfig>)> {
    let (mut net, sidecar) = load_checkpoint(path.as_ref(), "embedding-net", EmbeddingNet::new)?;
    net.meta = TrainingMeta { epochs: sidecar.epochs, seed: sidecar.seed, loss_curve: sidecar.loss_curve.clone() };
    Ok((net, sidecar))
}

/// Architecture section of a generator sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub plan: ArchPlan,
    pub saliency: bool,
    pub config: AttackConfig,
}

pub fn save_generator(
    path: impl AsRef<Path>,
    gen: &Generator,
    cfg: &AttackConfig,
    loss_curve: &[f64],
    config_hash: &str,
) -> Result<()> {
    let arch = GeneratorArch { plan: gen.plan, saliency: gen.has_saliency(), config: cfg.clone() };
    let meta = TrainingMeta { epochs: cfg.epochs, seed: cfg.seed, loss_curve: loss_curve.to_vec() };
    save_checkpoint(path.as_ref(), "generator", gen, arch, &meta, config_hash)
}

pub fn load_generator(path: impl AsRef<Path>) -> Result<(Generator, Sidecar<GeneratorArch>)> {
    load_checkpoint(path.as_ref(), "generator", |a: &GeneratorArch| Generator::new(a.plan, a.saliency, a.config.seed))
}

/// Exclusive lock on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub const FILE: &'static str = ".advsal.lock";

    pub fn acquire(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse { what: "csv row", path: path.to_path_buf(), message: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
