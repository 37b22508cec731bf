//! Output plumbing: versioned JSON envelopes and atomic file writes.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use cbayes_core::Result;

pub const FORMAT_VERSION: u32 = 1;

/// Every output file carries the format version and the fully resolved
/// configuration (defaults included) so runs can be reproduced from the
/// artifact alone.
#[derive(Serialize)]
pub struct Envelope<C: Serialize, R: Serialize> {
    pub format_version: u32,
    pub config: C,
    pub results: Vec<R>,
}

/// Write bytes to `path` atomically: temp file in the same directory, then
/// rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp.{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Pretty JSON to the given path (atomically) or stdout.
pub fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value).expect("serializable output");
    body.push('\n');
    match out {
        Some(path) => write_atomic(path, body.as_bytes()),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

/// A `# config: {...}` header line for CSV outputs (readers skip `#` lines).
pub fn config_comment<C: Serialize>(config: &C) -> String {
    format!("# config: {}\n", serde_json::to_string(config).expect("serializable config"))
}
