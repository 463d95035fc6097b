//! Network weight checkpoints.
//!
//! A checkpoint file is one line of JSON describing the network, a newline,
//! then the flat parameter vector as little-endian `f64`.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Sender};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::neural_field::{Mlp, MlpConfig};

const FORMAT: &str = "nfinv-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: MlpConfig,
    pub seed: u64,
    pub epoch: usize,
    pub n_params: usize,
}

pub fn write_checkpoint(path: &Path, mlp: &Mlp, epoch: usize) -> Result<()> {
    write_raw(path, mlp.config(), mlp.seed(), epoch, &mlp.params())
}

fn write_raw(path: &Path, config: &MlpConfig, seed: u64, epoch: usize, params: &[f64]) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.to_string(),
        version: VERSION,
        config: config.clone(),
        seed,
        epoch,
        n_params: params.len(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| invalid(e.to_string()))?;
    bytes.push(b'\n');
    bytes.reserve(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(Mlp, CheckpointHeader)> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| invalid(format!("{}: bad checkpoint header: {e}", path.display())))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(invalid(format!("{}: unsupported checkpoint {} v{}", path.display(), header.format, header.version)));
    }
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    if raw.len() != header.n_params * 8 {
        return Err(invalid(format!(
            "{}: expected {} parameters, found {} bytes",
            path.display(),
            header.n_params,
            raw.len()
        )));
    }
    let params: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mlp = Mlp::from_params(header.config.clone(), &params, header.seed)?;
    Ok((mlp, header))
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint_{epoch:06}.bin"))
}

struct Job {
    path: PathBuf,
    config: MlpConfig,
    seed: u64,
    epoch: usize,
    params: Vec<f64>,
}

/// Writes checkpoints on a background thread so the training loop only
/// pays for a parameter copy.
pub struct AsyncCheckpointWriter {
    dir: PathBuf,
    tx: Option<Sender<Job>>,
    handle: Option<JoinHandle<Result<Vec<PathBuf>>>>,
}

impl AsyncCheckpointWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let (tx, rx) = channel::<Job>();
        let handle = std::thread::spawn(move || {
            let mut written = Vec::new();
            for job in rx {
                write_raw(&job.path, &job.config, job.seed, job.epoch, &job.params)?;
                written.push(job.path);
            }
            Ok(written)
        });
        Ok(Self { dir: dir.to_path_buf(), tx: Some(tx), handle: Some(handle) })
    }

    /// Queue a snapshot; returns the path it will be written to.
    pub fn submit(&self, mlp: &Mlp, epoch: usize) -> PathBuf {
        let path = checkpoint_path(&self.dir, epoch);
        let job = Job { path: path.clone(), config: mlp.config().clone(), seed: mlp.seed(), epoch, params: mlp.params() };
        if let Some(tx) = &self.tx {
            // a send error means the writer thread already failed; finish() reports it
            let _ = tx.send(job);
        }
        path
    }

    /// Wait for queued writes and return the written paths.
    pub fn finish(mut self) -> Result<Vec<PathBuf>> {
        self.join()
    }

    fn join(&mut self) -> Result<Vec<PathBuf>> {
        drop(self.tx.take());
        match self.handle.take() {
            Some(h) => h.join().map_err(|_| Error::Numerical("checkpoint writer panicked".into()))?,
            None => Ok(Vec::new()),
        }
    }
}

impl Drop for AsyncCheckpointWriter {
    fn drop(&mut self) {
        let _ = self.join();
    }
}

impl std::fmt::Debug for AsyncCheckpointWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AsyncCheckpointWriter").field("dir", &self.dir).finish()
    }
}
