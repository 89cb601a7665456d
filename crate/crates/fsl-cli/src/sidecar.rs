//! Per-output-file JSON sidecars: config hash, tool version, wall time.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    command: &'a str,
    config_sha256: &'a str,
    tool_version: &'a str,
    wall_time_ms: u128,
    #[serde(flatten)]
    extra: T,
}

/// Hex SHA-256 of the effective config bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Timer started when the command begins.
pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Timer(Instant::now())
    }

    pub fn elapsed_ms(&self) -> u128 {
        self.0.elapsed().as_millis()
    }
}

/// Write `<file>.meta.json` next to an output file.
pub fn write<T: Serialize>(
    output: &Path,
    command: &str,
    config_hash: &str,
    timer: &Timer,
    extra: T,
) -> Result<(), CliError> {
    let sidecar = Sidecar {
        command,
        config_sha256: config_hash,
        tool_version: env!("CARGO_PKG_VERSION"),
        wall_time_ms: timer.elapsed_ms(),
        extra,
    };
    let mut path = output.as_os_str().to_owned();
    path.push(".meta.json");
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(path, json)?;
    Ok(())
}
