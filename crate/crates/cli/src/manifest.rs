//! The reproducibility ledger of an output directory: the resolved config
//! echo, a stable experiment id, and content hashes of every artifact. The
//! manifest is written before a command produces outputs, and commands
//! refuse to consume artifacts whose hashes have drifted (unless `--force`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use primetrace::util::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::config::{Context, ExperimentConfig};
use crate::errors::{io_err, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestData {
    pub tool_version: String,
    pub experiment_id: String,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub config: ExperimentConfig,
    /// Keys are out-dir-relative paths for artifacts and `in:`-prefixed
    /// labels for external inputs; values are SHA-256 of the file bytes.
    pub artifacts: BTreeMap<String, String>,
}

pub struct Manifest {
    pub data: ManifestData,
    path: PathBuf,
    out_dir: PathBuf,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Manifest {
    /// Load the directory's manifest or start a fresh one, refusing an id
    /// mismatch (the config or seed changed under an existing experiment).
    /// With `--force` the echo is replaced and recorded hashes are kept;
    /// they get re-verified or re-recorded as commands touch them.
    pub fn open_or_create(ctx: &Context) -> Result<Manifest, CliError> {
        let path = ctx.out_dir.join(MANIFEST_FILE);
        let now = unix_now();
        let data = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let mut data: ManifestData = serde_json::from_str(&text).map_err(|e| {
                CliError::Data(format!("{} is not a valid manifest: {e}", path.display()))
            })?;
            if data.experiment_id != ctx.experiment_id {
                if !ctx.force {
                    return Err(CliError::Data(format!(
                        "{} was produced under experiment {} but the current config resolves \
                         to {}; the directory's artifacts are stale. Rerun with --force to \
                         adopt the new config, or point --out elsewhere",
                        ctx.out_dir.display(),
                        &data.experiment_id[..12],
                        &ctx.experiment_id[..12],
                    )));
                }
                data.experiment_id = ctx.experiment_id.clone();
                data.config = ctx.config.clone();
                data.tool_version = env!("CARGO_PKG_VERSION").to_string();
            }
            data
        } else {
            std::fs::create_dir_all(&ctx.out_dir).map_err(|e| io_err(&ctx.out_dir, e))?;
            ManifestData {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                experiment_id: ctx.experiment_id.clone(),
                created_unix: now,
                updated_unix: now,
                config: ctx.config.clone(),
                artifacts: BTreeMap::new(),
            }
        };
        let mut m = Manifest { data, path, out_dir: ctx.out_dir.clone() };
        m.save()?; // exists before any output does
        Ok(m)
    }

    pub fn save(&mut self) -> Result<(), CliError> {
        self.data.updated_unix = unix_now();
        let json = serde_json::to_string_pretty(&self.data).expect("manifest serializes");
        let tmp = self.path.with_extension("json.tmp");
        std::fs::write(&tmp, json).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, &self.path).map_err(|e| io_err(&self.path, e))?;
        Ok(())
    }

    /// Hash an artifact inside the out dir and record it under its relative
    /// path.
    pub fn record(&mut self, rel: &str) -> Result<(), CliError> {
        let hash = hash_file(&self.out_dir.join(rel))?;
        self.data.artifacts.insert(rel.to_string(), hash);
        Ok(())
    }

    /// Record an external input under an `in:` label.
    pub fn record_input(&mut self, label: &str, path: &Path) -> Result<(), CliError> {
        let hash = hash_file(path)?;
        self.data.artifacts.insert(format!("in:{label}"), hash);
        Ok(())
    }

    /// Check that an artifact this command is about to consume still has the
    /// recorded hash. Unknown or drifted files are data errors; `--force`
    /// re-records instead.
    pub fn require(&mut self, rel: &str, force: bool, produced_by: &str) -> Result<(), CliError> {
        let path = self.out_dir.join(rel);
        if !path.exists() {
            return Err(CliError::Data(format!(
                "{} is missing; run `{produced_by}` first",
                path.display()
            )));
        }
        let actual = hash_file(&path)?;
        match self.data.artifacts.get(rel) {
            Some(recorded) if *recorded == actual => Ok(()),
            Some(recorded) => {
                if force {
                    self.data.artifacts.insert(rel.to_string(), actual);
                    Ok(())
                } else {
                    Err(CliError::Data(format!(
                        "{} has changed since it was recorded (manifest {}, file {}); \
                         regenerate it with `{produced_by}` or pass --force to accept it",
                        path.display(),
                        &recorded[..12],
                        &actual[..12],
                    )))
                }
            }
            None => {
                if force {
                    self.data.artifacts.insert(rel.to_string(), actual);
                    Ok(())
                } else {
                    Err(CliError::Data(format!(
                        "{} is not recorded in the manifest (was it produced by a different \
                         run?); regenerate it with `{produced_by}` or pass --force to adopt it",
                        path.display(),
                    )))
                }
            }
        }
    }
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// One command per output directory. The guard file names the holder; a
/// crashed run leaves it behind, which the error message explains.
pub struct Lock {
    path: PathBuf,
}

impl Lock {
    pub fn acquire(out_dir: &Path, command: &str) -> Result<Lock, CliError> {
        std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
        let path = out_dir.join(".lock");
        let content = format!("pid {} command {command}\n", std::process::id());
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = f.write_all(content.as_bytes());
                Ok(Lock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = std::fs::read_to_string(&path).unwrap_or_default();
                Err(CliError::Interrupted(format!(
                    "{} is locked by another command ({}); if that run crashed, delete the file",
                    out_dir.display(),
                    holder.trim(),
                )))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
