//! Run configurations, their content hash, and writers that stamp the
//! hash into every output file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::hierarchy::ConstructionOptions;
use crate::params::ScheduleDoc;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Everything a run depends on. The output directory is recorded but
/// excluded from the hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub schedule: ScheduleDoc,
    pub options: ConstructionOptions,
    pub seed: u64,
    pub format: Format,
    /// Command-specific settings.
    pub args: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Compact JSON with sorted map keys and without `out`.
    pub fn canonical_json(&self) -> Result<String> {
        let c = RunConfig { out: None, ..self.clone() };
        let v = serde_json::to_value(&c)?;
        Ok(serde_json::to_string(&v)?)
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }
}

/// An output directory bound to one run.
pub struct Output {
    dir: PathBuf,
    hash: String,
}

impl Output {
    /// Creates `dir` and writes `config.json` into it.
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let hash = config.hash()?;
        let out = Output { dir: dir.to_path_buf(), hash };
        let v: serde_json::Value = serde_json::from_str(&config.canonical_json()?)?;
        out.json("config.json", &v)?;
        Ok(out)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// CSV preceded by a `# config_sha256=` comment line.
    pub fn csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = format!("# config_sha256={}\n", self.hash).into_bytes();
        body(&mut buf)?;
        self.put(name, &buf)
    }

    /// `{"config_sha256": …, "report": …}`, pretty-printed.
    pub fn json<T: Serialize>(&self, name: &str, report: &T) -> Result<PathBuf> {
        let v = serde_json::json!({ "config_sha256": self.hash, "report": report });
        let mut buf = serde_json::to_vec_pretty(&v)?;
        buf.push(b'\n');
        self.put(name, &buf)
    }

    /// JSON lines whose first record is `{"config_sha256": …}`.
    pub fn jsonl(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = serde_json::to_vec(&serde_json::json!({ "config_sha256": self.hash }))?;
        buf.push(b'\n');
        body(&mut buf)?;
        self.put(name, &buf)
    }

    fn put(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RunConfig {
        RunConfig {
            command: "build".into(),
            schedule: ScheduleDoc::toy(),
            options: ConstructionOptions::toy(),
            seed: 7,
            format: Format::Csv,
            args: BTreeMap::new(),
            out: Some("a".into()),
        }
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = cfg();
        let b = RunConfig { out: Some("b".into()), ..cfg() };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = RunConfig { seed: 8, ..cfg() };
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }
}
