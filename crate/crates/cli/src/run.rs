//! Run directories: resolved config, outputs, a run manifest and a log.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_err, CliError};

pub const RUN_MANIFEST: &str = "run.json";
pub const CONFIG_COPY: &str = "config.toml";
pub const LOG_FILE: &str = "log.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    params: &'a serde_json::Value,
    /// Output file (relative to the run directory) to its sha256.
    outputs: &'a BTreeMap<String, String>,
}

pub struct RunDir {
    path: PathBuf,
    command: &'static str,
    seed: u64,
    outputs: BTreeMap<String, String>,
    log: File,
}

impl RunDir {
    /// Uses `exact` when given, else `<root>/<command>-<UTC timestamp>-seed<seed>`.
    pub fn create(
        exact: Option<&Path>,
        root: &Path,
        command: &'static str,
        seed: u64,
        config: &RunConfig,
    ) -> Result<Self, CliError> {
        let path = match exact {
            Some(p) => p.to_path_buf(),
            None => {
                let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
                let base = root.join(format!("{command}-{stamp}-seed{seed}"));
                let mut p = base.clone();
                let mut k = 2;
                while p.exists() {
                    p = PathBuf::from(format!("{}-{k}", base.display()));
                    k += 1;
                }
                p
            }
        };
        fs::create_dir_all(&path).map_err(|e| io_err(&path, e))?;
        let log_path = path.join(LOG_FILE);
        let log = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
        let mut run = RunDir {
            path,
            command,
            seed,
            outputs: BTreeMap::new(),
            log,
        };
        let mut resolved = config.clone();
        resolved.seed = Some(seed);
        run.write(CONFIG_COPY, resolved.to_toml()?.as_bytes())?;
        Ok(run)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends a line to the run log and echoes it to stderr.
    pub fn log(&mut self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        eprintln!("{msg}");
        let _ = writeln!(self.log, "{msg}");
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.path.join(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(p)
    }

    /// Records a file that a library call already wrote inside the run directory.
    pub fn record(&mut self, name: &str) -> Result<(), CliError> {
        let p = self.path.join(name);
        let bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
        self.outputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(mut self, params: serde_json::Value) -> Result<PathBuf, CliError> {
        let m = RunManifest {
            tool: "qmrkit",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            params: &params,
            outputs: &self.outputs,
        };
        let text = serde_json::to_string_pretty(&m)
            .map_err(|e| CliError::Runtime(format!("run manifest: {e}")))?;
        let p = self.path.join(RUN_MANIFEST);
        fs::write(&p, text + "\n").map_err(|e| io_err(&p, e))?;
        self.log(format!("outputs in {}", self.path.display()));
        Ok(self.path)
    }
}
