use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dispersa::symbol::{OperatorFile, OperatorSpec};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use sha2::{Digest, Sha256};

/// Raw configuration text with its location and digest.
pub struct Loaded {
    pub text: String,
    pub dir: PathBuf,
    pub sha256: String,
}

impl Loaded {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let sha256 = format!("{:x}", Sha256::digest(text.as_bytes()));
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { text, dir, sha256 })
    }

    pub fn parse<C: DeserializeOwned>(&self) -> anyhow::Result<C> {
        serde_json::from_str(&self.text).context("parsing configuration")
    }
}

/// An operator given inline or as a path relative to the configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OperatorSource {
    Path(PathBuf),
    Inline(OperatorFile),
}

impl OperatorSource {
    pub fn load(&self, base: &Path) -> anyhow::Result<OperatorSpec<f64>> {
        match self {
            OperatorSource::Path(p) => {
                let full = base.join(p);
                let text = std::fs::read_to_string(&full).with_context(|| format!("reading {}", full.display()))?;
                Ok(OperatorSpec::from_json(&text)?)
            }
            OperatorSource::Inline(f) => Ok(OperatorSpec::from_file(f)?),
        }
    }
}

/// Either an explicit list of values or a generated grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Samples {
    List(Vec<f64>),
    Range { start: f64, end: f64, count: usize, #[serde(default)] spacing: Spacing },
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Geometric,
    Linear,
}

impl Samples {
    pub fn values(&self) -> anyhow::Result<Vec<f64>> {
        match *self {
            Samples::List(ref v) => Ok(v.clone()),
            Samples::Range { start, end, count, spacing } => {
                if count == 0 {
                    bail!("sample count must be positive");
                }
                Ok(match spacing {
                    Spacing::Geometric => {
                        if !(start > 0.0 && end > 0.0) {
                            bail!("geometric samples need positive endpoints");
                        }
                        dispersa::oscillatory::geometric_grid(start, end, count)
                    }
                    Spacing::Linear => dispersa::symbol::linspace(start, end, count),
                })
            }
        }
    }
}

/// Sampling density of the hyperbolicity certificate.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default)]
pub struct CertificateConfig {
    pub t_samples: usize,
    pub sphere_samples: usize,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        CertificateConfig { t_samples: 201, sphere_samples: 16 }
    }
}

/// A Lebesgue exponent: a number, or `"inf"` for the sup norm.
pub fn exponent<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(x) => Ok(x),
        Raw::Text(s) if matches!(s.as_str(), "inf" | "infinity") => Ok(f64::INFINITY),
        Raw::Text(s) => Err(serde::de::Error::custom(format!("exponent must be a number or \"inf\", got {s:?}"))),
    }
}

pub fn optional_exponent<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    exponent(d).map(Some)
}
