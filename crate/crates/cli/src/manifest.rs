use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Crate version plus `git describe` output when built from a checkout.
pub const VERSION: &str = env!("DEXPT_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::data(path.display(), e))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Provenance record written next to every artifact. `argv` is the full
/// command line with every implicit value (timestamps, seeds) made explicit,
/// so running it again reproduces the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// `<artifact>.manifest.json`.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

pub struct ManifestBuilder {
    command: String,
    argv: Vec<String>,
    started_at: String,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            started_at: now_rfc3339(),
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
        }
    }

    /// Appends `--flag value` to the recorded command line unless the flag
    /// was already given.
    pub fn pin(&mut self, flag: &str, value: &str) {
        if !self.argv.iter().any(|a| a == flag || a.starts_with(&format!("{flag}="))) {
            self.argv.push(flag.to_string());
            self.argv.push(value.to_string());
        }
    }

    pub fn config(&mut self, config: impl Serialize) -> &mut Self {
        self.config = serde_json::to_value(config).expect("config serializes");
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    /// Digests inputs and outputs and writes the manifest beside
    /// `outputs[0]`.
    pub fn write(&self, outputs: &[&Path]) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            command: self.command.clone(),
            argv: self.argv.clone(),
            config: self.config.clone(),
            seed: self.seed,
            inputs: self.inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?,
            outputs: outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?,
            version: VERSION.to_string(),
            started_at: self.started_at.clone(),
            finished_at: now_rfc3339(),
        };
        let path = manifest_path(outputs[0]);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        dexpt_core::checkpoint::write_file_atomic(&path, format!("{text}\n").as_bytes())
            .map_err(|e| CliError::data(path.display(), e))?;
        Ok(path)
    }
}

#[cfg(test)]
fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(path.display(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pin_respects_explicit_flags() {
        let argv: Vec<String> = ["dexpt", "expand", "--seed", "9", "--n=4"].iter().map(|s| s.to_string()).collect();
        let mut m = ManifestBuilder::new("expand", &argv);
        m.pin("--seed", "1");
        m.pin("--n", "3");
        m.pin("--created-at", "2024-01-01T00:00:00Z");
        assert_eq!(&m.argv[2..], ["--seed", "9", "--n=4", "--created-at", "2024-01-01T00:00:00Z"]);
    }

    #[test]
    fn manifest_round_trips_and_digests_files() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        let output = dir.path().join("out.bin");
        std::fs::write(&input, b"abc").unwrap();
        std::fs::write(&output, b"").unwrap();
        let mut m = ManifestBuilder::new("encode", &["dexpt".to_string(), "encode".to_string()]);
        m.input(&input).seed(5).config(serde_json::json!({"k": 1}));
        let path = m.write(&[&output]).unwrap();
        assert_eq!(path, dir.path().join("out.bin.manifest.json"));
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.seed, Some(5));
        assert_eq!(back.inputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(back.outputs[0].sha256, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(back.config["k"], 1);
    }
}
