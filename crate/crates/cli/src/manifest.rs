//! Run manifests: the resolved configuration, the library version and the
//! checksums of every input file, written before any result.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub command: Command,
    pub run: RunConfig,
    /// Input path as given -> SHA-256 of its contents.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: Command, run: RunConfig) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            run,
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize manifest: {e}")))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest '{}': {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("invalid manifest '{}': {e}", path.display())))
    }

    /// Checks that every recorded input still has its recorded contents.
    pub fn verify_inputs(&self) -> CliResult<()> {
        for (path, expected) in &self.inputs {
            let actual = sha256_file(Path::new(path))?;
            if &actual != expected {
                return Err(CliError::Data(format!(
                    "input '{path}' changed since the manifest was written"
                )));
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open input '{}': {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = file.read(&mut buf)?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips_and_detects_changed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.csv");
        std::fs::write(&data, "a").unwrap();
        let run = RunConfig {
            data: Some(data.clone()),
            lambda: Some(0.5),
            ..Default::default()
        };
        let mut m = Manifest::new(Command::Estimate, run);
        m.add_input(&data).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        std::fs::write(&path, m.to_toml().unwrap()).unwrap();
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back, m);
        back.verify_inputs().unwrap();
        std::fs::write(&data, "b").unwrap();
        assert!(matches!(back.verify_inputs(), Err(CliError::Data(_))));
    }
}
