//! `manifest.toml`, written next to every output.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command-line arguments after the program name, enough to rerun.
    pub args: Vec<String>,
    pub config_path: Option<String>,
    /// Config text as read at run time, so a rerun does not depend on the
    /// file still being unchanged.
    pub config: Option<String>,
    pub seed: u64,
    pub out: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config_path: Option<&Path>, config: Option<&str>, seed: u64, out: &Path) -> Self {
        Self {
            command: command.to_string(),
            args,
            config_path: config_path.map(|p| p.display().to_string()),
            config: config.map(str::to_string),
            seed,
            out: out.display().to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing manifest")?;
        let path = dir.join("manifest.toml");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(
            "solve",
            vec!["solve".into(), "p.txt".into()],
            Some(Path::new("c.toml")),
            Some("[fipd]\nalpha = 3\n"),
            7,
            dir.path(),
        );
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(&dir.path().join("manifest.toml")).unwrap(), m);
    }
}
