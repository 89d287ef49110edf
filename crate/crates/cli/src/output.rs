use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::Run;

/// Writes result files into one directory and records them for the manifest.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: &'a str,
    seed: u64,
    tol: Option<f64>,
    files: &'a [String],
}

/// Shortest round-trip form, so reruns compare byte for byte.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl Output {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn manifest(&mut self, command: &str, run: &Run) -> anyhow::Result<()> {
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: &run.config.sha256,
            seed: run.seed,
            tol: run.tol,
            files: &self.files,
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// Header helper: `prefix0, prefix1, …`.
pub fn indexed(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

/// Writes an infinite exponent as `"inf"`, which JSON numbers cannot hold.
pub fn exponent<S: serde::Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*x)
    }
}
