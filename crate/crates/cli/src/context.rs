//! Shared run state, argument parsers and output writers with manifests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context as _, Result};
use ozlab_core::{Budget, OzError};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub struct Context {
    pub argv: Vec<String>,
    pub budget: Budget,
    started: Instant,
}

/// Provenance record written next to every output file as `<out>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub seed: Option<u64>,
    /// Every parameter, cutoff and tolerance of the run.
    pub config: Value,
    pub version: &'static str,
    pub output: String,
    pub output_sha256: String,
    pub wall_time_seconds: f64,
}

impl Context {
    pub fn new(argv: Vec<String>, budget: Budget) -> Self {
        Context { argv, budget, started: Instant::now() }
    }

    /// Writes `contents` to `out` with its manifest, or to stdout.
    pub fn emit(&self, out: Option<&Path>, contents: &str, config: Value, seed: Option<u64>) -> Result<()> {
        let Some(path) = out else {
            print!("{contents}");
            return Ok(());
        };
        std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        let manifest = RunManifest {
            command_line: self.argv.clone(),
            config_hash: hex::encode(Sha256::digest(serde_json::to_vec(&config)?)),
            seed,
            config,
            version: env!("CARGO_PKG_VERSION"),
            output: path.display().to_string(),
            output_sha256: hex::encode(Sha256::digest(contents.as_bytes())),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mpath = manifest_path(path);
        std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", mpath.display()))?;
        Ok(())
    }

    pub fn emit_json<T: Serialize>(&self, out: Option<&Path>, value: &T, config: Value, seed: Option<u64>) -> Result<()> {
        self.emit(out, &(serde_json::to_string_pretty(value)? + "\n"), config, seed)
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Parses `"1,0"` or `"1 0"` into a real vector.
pub fn parse_vector(s: &str) -> Result<Vec<f64>, OzError> {
    let v: Result<Vec<f64>, _> =
        s.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).map(str::parse::<f64>).collect();
    match v {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(OzError::precondition(format!("cannot parse vector {s:?}"))),
    }
}

pub fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

/// Renders rows as CSV with a header line.
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
