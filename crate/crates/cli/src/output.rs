//! Run metadata and file emission.
//!
//! Every file carries the tool version, the SHA-256 of the canonical run
//! configuration and the seed. JSON files hold them under `meta`; CSV files
//! start with a `#` comment line. Nothing time- or host-dependent is
//! written, so identical configurations give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use dimg_core::{DimgError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(command: &str, scenario: &str, config: &impl Serialize, seed: u64) -> Self {
        let canonical = serde_json::to_vec(config).expect("run configuration serializes");
        Meta {
            tool: "dimg",
            version: VERSION,
            command: command.into(),
            scenario: scenario.into(),
            config_hash: hex::encode(Sha256::digest(&canonical)),
            seed,
        }
    }

    fn csv_header(&self) -> String {
        format!(
            "# {} {} command={} scenario={} config_hash={} seed={}\n",
            self.tool, self.version, self.command, self.scenario, self.config_hash, self.seed
        )
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a Meta,
    #[serde(flatten)]
    body: &'a T,
}

/// Writes run artifacts into one directory and remembers what it wrote.
pub struct OutputDir {
    root: PathBuf,
    meta: Meta,
    pub written: Vec<PathBuf>,
}

fn io_err(path: &Path, source: std::io::Error) -> DimgError {
    DimgError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl OutputDir {
    pub fn create(root: &Path, meta: Meta) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            meta,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<()> {
        let env = Envelope { meta: &self.meta, body };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| DimgError::Parse(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut text = self.meta.csv_header();
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|c| csv_cell(c)).collect();
            writeln!(text, "{}", cells.join(",")).unwrap();
        }
        self.write(name, &text)
    }
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Shortest round-trip text of a float, as in the JSON files.
pub fn num(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_are_quoted_when_needed() {
        assert_eq!(csv_cell("x0 a1 x2"), "x0 a1 x2");
        assert_eq!(csv_cell("0,1,0|1,0,1"), "\"0,1,0|1,0,1\"");
        assert_eq!(csv_cell("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn hash_depends_on_config_only() {
        let a = Meta::new("solve-dm", "s", &("x", 1), 7);
        let b = Meta::new("solve-dm", "s", &("x", 1), 7);
        let c = Meta::new("solve-dm", "s", &("x", 2), 7);
        assert_eq!(a.config_hash, b.config_hash);
        assert_ne!(a.config_hash, c.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }
}
