//! Report files and their manifests.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anchorscope::manifest::{digest_file, RunManifest};
use serde::Serialize;

use crate::error::CliResult;

/// Bookkeeping for one subcommand run.
pub struct Run {
    subcommand: &'static str,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    started: Instant,
    started_at: u64,
}

impl Run {
    pub fn new(subcommand: &'static str, config: &impl Serialize) -> Self {
        Run {
            subcommand,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: Vec::new(),
            started: Instant::now(),
            started_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) {
        self.inputs.push(path.as_ref().to_path_buf());
    }

    /// Writes `<report>.manifest.json`.
    pub fn manifest_for(&self, report: &Path) -> CliResult<()> {
        let inputs = self
            .inputs
            .iter()
            .map(digest_file)
            .collect::<Result<Vec<_>, _>>()?;
        let m = RunManifest {
            subcommand: self.subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
            config: self.config.clone(),
            started_at: self.started_at,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = m.write_beside(report)?;
        log::debug!("wrote {}", path.display());
        Ok(())
    }
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// A file if given, stdout otherwise.
pub fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_csv<T: Serialize>(
    out: impl Write,
    rows: impl IntoIterator<Item = T>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(mut out: impl Write, value: &impl Serialize) -> CliResult<()> {
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::from)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Writes a CSV report to `path` with its manifest.
pub fn csv_report<T: Serialize>(
    run: &Run,
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> CliResult<()> {
    write_csv(create(path)?, rows)?;
    run.manifest_for(path)
}
