//! Data input, atomic output and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliError;

/// Reads a single numeric column with an optional non-numeric header row.
pub fn read_column(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        if record.len() != 1 {
            return Err(CliError::usage(format!(
                "{}: line {} has {} columns, expected 1",
                path.display(),
                line + 1,
                record.len()
            )));
        }
        let field = &record[0];
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(_) => return Err(CliError::usage(format!("{}: line {} is not finite", path.display(), line + 1))),
            Err(_) if line == 0 => {}
            Err(_) => {
                return Err(CliError::usage(format!("{}: line {} is not numeric: {field:?}", path.display(), line + 1)))
            }
        }
    }
    if values.is_empty() {
        return Err(CliError::usage(format!("{}: no data rows", path.display())));
    }
    Ok(values)
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Provenance record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    /// Subcommand.
    pub command: String,
    /// Resolved arguments or experiment configuration.
    pub config: serde_json::Value,
    /// Package version.
    pub version: String,
    /// Master seed, when the command is random.
    pub master_seed: Option<u64>,
    /// Written artifacts.
    pub outputs: Vec<String>,
    /// Start time in seconds since the Unix epoch.
    pub started_unix: f64,
    /// Elapsed wall-clock seconds.
    pub wall_clock_seconds: f64,
}

/// Clock started at the beginning of a command.
pub struct RunClock {
    started_unix: f64,
    start: Instant,
}

impl RunClock {
    pub fn start() -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        Self { started_unix, start: Instant::now() }
    }

    pub fn manifest(
        &self,
        command: &str,
        config: serde_json::Value,
        master_seed: Option<u64>,
        outputs: &[PathBuf],
    ) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started_unix: self.started_unix,
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

/// Manifest path for a single-file output: `<out>.manifest.json`.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::numerical(format!("serialization: {e}")))
}

/// Writes a single-result output to `out` (with its manifest) or to stdout.
pub fn emit(
    clock: &RunClock,
    command: &str,
    config: serde_json::Value,
    master_seed: Option<u64>,
    body: &str,
    out: Option<&Path>,
    manifest: Option<&Path>,
) -> Result<(), CliError> {
    match out {
        Some(path) => {
            write_atomic(path, body.as_bytes())?;
            let mpath = manifest.map(Path::to_path_buf).unwrap_or_else(|| manifest_path_for(path));
            let m = clock.manifest(command, config, master_seed, &[path.to_path_buf()]);
            write_atomic(&mpath, to_json(&m)?.as_bytes())
        }
        None => {
            print!("{body}");
            if let Some(mpath) = manifest {
                let m = clock.manifest(command, config, master_seed, &[]);
                write_atomic(mpath, to_json(&m)?.as_bytes())?;
            }
            Ok(())
        }
    }
}
