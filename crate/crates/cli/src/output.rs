use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::FORMAT_VERSION;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub(crate) struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub(crate) fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub(crate) fn digest(path: &Path) -> Result<FileDigest, CliError> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// Files written by one command, hashed for the run manifest.
pub(crate) struct Outputs {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Output {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|source| CliError::Output { path, source })?;
        self.record(name)
    }

    /// Register a file some other writer already produced.
    pub fn record(&mut self, name: &str) -> Result<(), CliError> {
        let sha256 = sha256_file(&self.path(name))?;
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn finish(
        self,
        command: &str,
        seed: Option<u64>,
        threads: Option<usize>,
        settings: serde_json::Value,
        inputs: Vec<FileDigest>,
    ) -> Result<(), CliError> {
        let manifest = RunManifest {
            command,
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            format_version: FORMAT_VERSION,
            seed,
            threads,
            settings,
            inputs,
            outputs: self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join(format!("run_manifest_{command}.json"));
        fs::write(&path, text).map_err(|source| CliError::Output { path, source })
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    tool: &'a str,
    version: &'a str,
    format_version: u32,
    seed: Option<u64>,
    threads: Option<usize>,
    settings: serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}
