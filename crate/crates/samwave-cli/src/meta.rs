//! Sidecar `*.meta.json` files written next to every produced artifact.

use std::path::Path;
use std::time::Instant;

use samwave_core::error::Result;
use serde::Serialize;

#[derive(Serialize)]
struct Meta<'a> {
    command: String,
    config: &'a serde_json::Value,
    seed: u64,
    duration_ms: u128,
    version: &'static str,
}

pub struct MetaWriter {
    started: Instant,
    command: String,
}

impl MetaWriter {
    /// Capture the invocation; call [`MetaWriter::write`] after the artifact
    /// exists.
    pub fn start() -> Self {
        MetaWriter {
            started: Instant::now(),
            command: std::env::args().collect::<Vec<_>>().join(" "),
        }
    }

    pub fn write(&self, artifact: &Path, config: &serde_json::Value, seed: u64) -> Result<()> {
        let meta = Meta {
            command: self.command.clone(),
            config,
            seed,
            duration_ms: self.started.elapsed().as_millis(),
            version: env!("CARGO_PKG_VERSION"),
        };
        let mut name = artifact
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "artifact".into());
        name.push_str(".meta.json");
        let path = artifact.with_file_name(name);
        std::fs::write(path, serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }
}
