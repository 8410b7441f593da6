//! Artifact files: every one starts with a `#` metadata header.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::CliError;

pub const TOOL: &str = concat!("ridesim ", env!("CARGO_PKG_VERSION"));

/// Prefix of the only header line that varies between identical runs.
pub const GENERATED_AT: &str = "# generated_at ";

#[derive(Debug, Clone)]
pub struct Header {
    pub config_hash: String,
    pub seed: u64,
    pub generated_at: String,
}

impl Header {
    pub fn for_config(cfg: &RunConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed(),
            generated_at: chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        }
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# tool {TOOL}")?;
        writeln!(out, "# config_hash sha256:{}", self.config_hash)?;
        writeln!(out, "# seed {}", self.seed)?;
        writeln!(out, "{GENERATED_AT}{}", self.generated_at)
    }
}

/// An output directory whose files share one header.
#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
    header: Header,
}

impl Store {
    pub fn new(dir: impl Into<PathBuf>, header: Header) -> Self {
        Self { dir: dir.into(), header }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Renders the body in memory and writes header plus body in one go.
    pub fn write<F>(&self, name: &str, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> ridesim_core::Result<()>,
    {
        let mut buf = Vec::new();
        self.header.write_to(&mut buf).map_err(runtime)?;
        body(&mut buf).map_err(runtime)?;
        fs::create_dir_all(&self.dir).map_err(|e| runtime(format!("{}: {e}", self.dir.display())))?;
        let path = self.path(name);
        fs::write(&path, buf).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Path of an upstream artifact, or a validation error naming the
    /// subcommand that produces it.
    pub fn require(&self, name: &str, producer: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::Validation(format!(
                "missing {}; run `ridesim {producer}` first",
                path.display()
            )))
        }
    }
}

pub fn open(path: &Path) -> Result<BufReader<fs::File>, CliError> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}
