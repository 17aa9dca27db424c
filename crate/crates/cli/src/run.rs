use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use structdepth::{io, Error, Result};

use crate::config::RunConfig;

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config_sha256: String,
    config: &'a RunConfig,
    inputs: &'a [FileHash],
    outputs: &'a [FileHash],
}

/// One command invocation: records every file read and written so the
/// manifest can list them with their hashes.
pub struct Run {
    command: &'static str,
    out: PathBuf,
    pub config: RunConfig,
    pub seed: Option<u64>,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Run {
    pub fn new(
        command: &'static str,
        out: &Path,
        config: RunConfig,
        seed: Option<u64>,
    ) -> Result<Run> {
        std::fs::create_dir_all(out).map_err(|source| Error::Io {
            path: out.to_path_buf(),
            source,
        })?;
        Ok(Run {
            command,
            out: out.to_path_buf(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = io::read_bytes(path)?;
        self.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256(&bytes),
        });
        Ok(bytes)
    }

    pub fn json<T: DeserializeOwned>(&mut self, path: &Path) -> Result<T> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }

    /// Writes `bytes` to `name` inside the output directory.
    pub fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        io::write_bytes(&self.out.join(name), &bytes)?;
        self.outputs.push(FileHash {
            path: name.to_string(),
            sha256: sha256(&bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, io::to_json_bytes(value)?)
    }

    pub fn finish(self) -> Result<()> {
        let config_bytes = io::to_json_bytes(&self.config)?;
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config_sha256: sha256(&config_bytes),
            config: &self.config,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        io::write_json(&self.out.join("manifest.json"), &manifest)
    }
}
