//! Run manifests: what a command read and wrote, with checksums of outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::dataset::{sha256_hex, write_file};
use crate::error::{Error, Result};

pub const FILE: &str = "run.manifest";

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    /// Configuration snapshot in key-value form.
    pub config: String,
    pub checkpoint: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    started: SystemTime,
}

fn unix_seconds(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, config: String) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            checkpoint: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: SystemTime::now(),
        }
    }

    /// Writes `run.manifest` into `dir`, hashing every listed output.
    pub fn finish(&self, dir: &Path) -> Result<PathBuf> {
        let mut text = String::new();
        let w = &mut text;
        writeln!(w, "command = {}", self.command).unwrap();
        writeln!(w, "seed = {}", self.seed).unwrap();
        writeln!(w, "started_unix = {}", unix_seconds(self.started)).unwrap();
        writeln!(w, "finished_unix = {}", unix_seconds(SystemTime::now())).unwrap();
        if let Some(c) = &self.checkpoint {
            writeln!(w, "checkpoint = {}", c.display()).unwrap();
        }
        for i in &self.inputs {
            writeln!(w, "input = {}", i.display()).unwrap();
        }
        for o in &self.outputs {
            let bytes = std::fs::read(o).map_err(Error::io(o))?;
            writeln!(w, "output = {} sha256:{}", o.display(), sha256_hex(&bytes)).unwrap();
        }
        writeln!(w, "\n[config]").unwrap();
        w.push_str(&self.config);
        let path = dir.join(FILE);
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }
}
