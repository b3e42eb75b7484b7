//! Run manifests: one key=value text file per run, recording everything
//! needed to re-derive the outputs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use aq_core::Result;

pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(subcommand: &str) -> Manifest {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Manifest {
            entries: vec![
                ("subcommand".into(), subcommand.into()),
                ("timestamp_unix".into(), timestamp.to_string()),
            ],
        }
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// `<path>.manifest` next to an output file.
pub fn sibling_path(output: &Path) -> std::path::PathBuf {
    let mut os = output.as_os_str().to_owned();
    os.push(".manifest");
    std::path::PathBuf::from(os)
}
