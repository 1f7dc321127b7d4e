//! Self-describing artifacts.
//!
//! Every file a stage writes records the configuration hash, the root seed
//! and the SHA-256 digests of the upstream files it was computed from. CSV
//! and Markdown artifacts carry these as leading `#` comment lines; JSON
//! artifacts carry them in a `provenance` object wrapping the payload.
//! Downstream stages refuse upstream artifacts whose recorded configuration
//! hash differs from the current one.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Resolved;
use crate::Failure;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    /// Upstream file digests keyed by a short stable name.
    #[serde(default)]
    pub uses: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(resolved: &Resolved) -> Self {
        Self {
            config_hash: resolved.hash.clone(),
            seed: resolved.config.seed,
            uses: BTreeMap::new(),
        }
    }

    /// Records that `path` was consumed, under its file name.
    pub fn record(&mut self, path: &Path) -> Result<(), Failure> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let digest = sha256_file(path)?;
        self.uses.insert(name, digest);
        Ok(())
    }

    /// The `#`-comment header block for CSV and Markdown artifacts.
    pub fn header(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# config_hash={}", self.config_hash).unwrap();
        writeln!(out, "# seed={}", self.seed).unwrap();
        for (name, digest) in &self.uses {
            writeln!(out, "# uses={name}:{digest}").unwrap();
        }
        out
    }
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::input)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `body` prefixed with the provenance header.
pub fn write_commented(path: &Path, provenance: &Provenance, body: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))
                .map_err(Failure::input)?;
        }
    }
    let mut text = provenance.header();
    text.push_str(body);
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::input)
}

/// Prepends the provenance header to an existing file (used after writers
/// that produce the body directly on disk).
pub fn prepend_header(path: &Path, provenance: &Provenance) -> Result<(), Failure> {
    let body = std::fs::read(path)
        .with_context(|| format!("cannot reread {}", path.display()))
        .map_err(Failure::input)?;
    let mut text = provenance.header().into_bytes();
    text.extend_from_slice(&body);
    std::fs::write(path, text)
        .with_context(|| format!("cannot rewrite {}", path.display()))
        .map_err(Failure::input)
}

/// Parses the leading `#` comment block of a CSV or Markdown artifact.
pub fn read_commented_provenance(path: &Path) -> Result<Provenance, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::input)?;
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut uses = BTreeMap::new();
    for line in text.lines() {
        let Some(rest) = line.trim_start().strip_prefix('#') else {
            break;
        };
        if let Some((k, v)) = rest.split_once('=') {
            let (k, v) = (k.trim(), v.trim());
            if k == "uses" {
                if let Some((name, digest)) = v.split_once(':') {
                    uses.insert(name.to_string(), digest.to_string());
                }
            } else {
                fields.insert(k.to_string(), v.to_string());
            }
        }
    }
    let config_hash = fields
        .get("config_hash")
        .cloned()
        .ok_or_else(|| missing_provenance(path, "config_hash"))?;
    let seed = fields
        .get("seed")
        .ok_or_else(|| missing_provenance(path, "seed"))?
        .parse::<u64>()
        .with_context(|| format!("bad seed header in {}", path.display()))
        .map_err(Failure::input)?;
    Ok(Provenance {
        config_hash,
        seed,
        uses,
    })
}

fn missing_provenance(path: &Path, what: &str) -> Failure {
    Failure::input(anyhow!(
        "{} has no '# {what}=' header; was it produced by this pipeline?",
        path.display()
    ))
}

#[derive(Serialize, Deserialize)]
struct Wrapped {
    provenance: Provenance,
    payload: serde_json::Value,
}

/// Writes a JSON artifact as `{provenance, payload}`.
pub fn write_json(
    path: &Path,
    provenance: &Provenance,
    payload: serde_json::Value,
) -> Result<(), Failure> {
    let wrapped = Wrapped {
        provenance: provenance.clone(),
        payload,
    };
    let text = serde_json::to_string_pretty(&wrapped)
        .context("cannot serialize artifact")
        .map_err(Failure::input)?;
    write_commented_parentless(path, text)
}

fn write_commented_parentless(path: &Path, text: String) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))
                .map_err(Failure::input)?;
        }
    }
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::input)
}

/// Reads a JSON artifact and returns its provenance and payload.
pub fn read_json(path: &Path) -> Result<(Provenance, serde_json::Value), Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::input)?;
    let wrapped: Wrapped = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse artifact {}", path.display()))
        .map_err(Failure::input)?;
    Ok((wrapped.provenance, wrapped.payload))
}

/// Fails when an artifact was produced under a different configuration.
pub fn check_fresh(path: &Path, recorded: &Provenance, resolved: &Resolved) -> Result<(), Failure> {
    if recorded.config_hash != resolved.hash {
        return Err(Failure::input(anyhow!(
            "stale artifact {}: produced under config hash {}, current is {}; rerun its stage",
            path.display(),
            &recorded.config_hash[..12.min(recorded.config_hash.len())],
            &resolved.hash[..12]
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comment_header_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut p = Provenance {
            config_hash: "abc".into(),
            seed: 7,
            uses: BTreeMap::new(),
        };
        p.uses.insert("x.csv".into(), "0011".into());
        write_commented(&path, &p, "a,b\n1,2\n").unwrap();
        let back = read_commented_provenance(&path).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn json_wrapper_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let p = Provenance {
            config_hash: "h".into(),
            seed: 3,
            uses: BTreeMap::new(),
        };
        write_json(&path, &p, serde_json::json!({"k": [1.5, 2.25]})).unwrap();
        let (back, payload) = read_json(&path).unwrap();
        assert_eq!(back, p);
        assert_eq!(payload["k"][1], serde_json::json!(2.25));
    }
}
