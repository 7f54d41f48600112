use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use xalign::store::vocab_path;
use xalign::{Error, Result};

/// Provenance record written next to the primary output of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand words, e.g. `eval` or `analyze polysemy`.
    pub subcommand: String,
    /// Every flag after defaults were applied, keyed by long name.
    pub flags: BTreeMap<String, Value>,
    /// sha256 of each input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    pub version: String,
    pub seeds: Vec<u64>,
}

impl RunManifest {
    pub fn new(subcommand: &str, args: &impl Serialize) -> Self {
        let flags = match serde_json::to_value(args).expect("arguments serialise") {
            Value::Object(map) => map
                .into_iter()
                .filter(|(_, v)| !v.is_null() && *v != Value::Bool(false))
                .collect(),
            _ => BTreeMap::new(),
        };
        RunManifest {
            subcommand: subcommand.to_owned(),
            flags,
            inputs: BTreeMap::new(),
            version: xalign::VERSION.to_owned(),
            seeds: Vec::new(),
        }
    }

    pub fn with_flags(subcommand: &str, flags: BTreeMap<String, Value>) -> Self {
        RunManifest {
            subcommand: subcommand.to_owned(),
            flags,
            inputs: BTreeMap::new(),
            version: xalign::VERSION.to_owned(),
            seeds: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Records an embedding file together with its vocab sidecar.
    pub fn space_input(&mut self, path: &Path) -> Result<()> {
        self.input(path)?;
        self.input(&vocab_path(path))
    }

    pub fn seed(&mut self, seed: u64) {
        if !self.seeds.contains(&seed) {
            self.seeds.push(seed);
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            reason: e.to_string(),
        })
    }

    /// Fails when an input no longer has the recorded digest.
    pub fn verify_inputs(&self) -> Result<()> {
        for (path, digest) in &self.inputs {
            let now = sha256_file(Path::new(path))?;
            if &now != digest {
                return Err(Error::Validation(format!(
                    "input {path} changed since the manifest was written"
                )));
            }
        }
        Ok(())
    }

    /// Command line that reproduces the run (without the program name).
    pub fn argv(&self) -> Vec<String> {
        let mut argv: Vec<String> = self
            .subcommand
            .split_whitespace()
            .map(str::to_owned)
            .collect();
        for (key, value) in &self.flags {
            match value {
                Value::Bool(true) => argv.push(format!("--{key}")),
                Value::String(s) => argv.extend([format!("--{key}"), s.clone()]),
                other => argv.extend([format!("--{key}"), other.to_string()]),
            }
        }
        argv
    }
}

/// `PATH.manifest.json`.
pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
