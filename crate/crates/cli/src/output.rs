use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// A file produced by a command, kept in memory until written.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub name: String,
    pub contents: String,
}

/// Run identity stamped on every artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stamp {
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn line(&self) -> String {
        format!("# kacwalk {} config_sha256={} seed={}", self.command, self.config_hash, self.seed)
    }

    /// CSV with the stamp as a leading comment line. `body` carries its own column header.
    pub fn csv(&self, name: impl Into<String>, body: &str) -> Artifact {
        Artifact {
            name: name.into(),
            contents: format!("{}\n{body}", self.line()),
        }
    }

    /// JSON has no comments, so the stamp goes into `header`, `config_sha256` and `master_seed` fields.
    /// Bodies may carry their own derived `seed`.
    pub fn json<T: Serialize>(&self, name: impl Into<String>, body: &T) -> CliResult<Artifact> {
        #[derive(Serialize)]
        struct Stamped<'a, T> {
            header: String,
            config_sha256: &'a str,
            master_seed: u64,
            #[serde(flatten)]
            body: &'a T,
        }
        let v = Stamped {
            header: self.line(),
            config_sha256: &self.config_hash,
            master_seed: self.seed,
            body,
        };
        let mut s = serde_json::to_string_pretty(&v).map_err(|e| CliError::Check(format!("serializing manifest: {e}")))?;
        s.push('\n');
        Ok(Artifact {
            name: name.into(),
            contents: s,
        })
    }
}

pub fn write_all(dir: &Path, artifacts: &[Artifact]) -> CliResult<Vec<PathBuf>> {
    artifacts
        .iter()
        .map(|a| {
            let path = dir.join(&a.name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                    path: parent.display().to_string(),
                    source,
                })?;
            }
            std::fs::write(&path, &a.contents).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stamp() -> Stamp {
        Stamp {
            command: "lln",
            config_hash: "ab".repeat(32),
            seed: 7,
        }
    }

    #[test]
    fn csv_starts_with_stamp() {
        let a = stamp().csv("x.csv", "a,b\n1,2\n");
        let mut lines = a.contents.lines();
        assert!(lines.next().unwrap().starts_with("# kacwalk lln config_sha256=abab"));
        assert_eq!(lines.next(), Some("a,b"));
    }

    #[test]
    fn json_carries_stamp_fields() {
        #[derive(Serialize)]
        struct Body {
            kappa: f64,
        }
        let a = stamp().json("m.json", &Body { kappa: 1.5 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&a.contents).unwrap();
        assert_eq!(v["master_seed"], 7);
        assert_eq!(v["kappa"], 1.5);
        assert!(v["header"].as_str().unwrap().ends_with("seed=7"));
    }
}
