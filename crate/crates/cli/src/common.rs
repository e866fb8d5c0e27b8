//! Shared plumbing for the subcommands: the two-level failure type that
//! drives exit codes, capture loading, and feature-matrix CSV I/O.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use resipscope::capture::{ingest_capture, IngestCounters};
use resipscope::pipeline::PipelineError;
use resipscope::{AssemblyConfig, DnsMap, Flow};

/// A subcommand failure. Configuration problems (missing files, invalid
/// flags or config files) exit 2; everything that breaks while processing
/// exits 1.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Failure::Config(msg.to_string())
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        Failure::Runtime(msg.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "{msg}"),
            Failure::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(err: PipelineError) -> Self {
        match err.exit_code() {
            2 => Failure::Config(err.to_string()),
            _ => Failure::Runtime(err.to_string()),
        }
    }
}

/// Require that a user-named input file exists before doing any work.
pub fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::config(format!("{what} {} does not exist", path.display())))
    }
}

/// One ingested capture, kept separate so DNS context stays scoped to the
/// file it came from.
pub struct LoadedCapture {
    pub path: PathBuf,
    pub flows: Vec<Flow>,
    pub dns: DnsMap,
    pub counters: IngestCounters,
}

/// Ingest every capture. Missing files are config errors; decode failures
/// are runtime errors.
pub fn load_captures(
    paths: &[PathBuf],
    assembly: &AssemblyConfig,
) -> Result<Vec<LoadedCapture>, Failure> {
    for path in paths {
        require_file(path, "capture")?;
    }
    paths
        .iter()
        .map(|path| {
            let ingest = ingest_capture(path, assembly).map_err(Failure::runtime)?;
            Ok(LoadedCapture {
                path: path.clone(),
                flows: ingest.flows,
                dns: ingest.dns,
                counters: ingest.counters,
            })
        })
        .collect()
}

pub fn create_out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|err| Failure::runtime(format!("cannot create {}: {err}", dir.display())))
}

pub fn write_artifact(dir: &Path, name: &str, content: &[u8]) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    fs::write(&path, content)
        .map_err(|err| Failure::runtime(format!("cannot write {}: {err}", path.display())))?;
    Ok(path)
}

/// Serialize one value per line into a JSONL buffer.
pub fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item).map_err(Failure::runtime)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// A feature matrix read back from `features.csv`: flow identifiers, the
/// header names after the `flow` column, and one row of values per flow.
pub struct Matrix {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_matrix(path: &Path) -> Result<Matrix, Failure> {
    require_file(path, "feature matrix")?;
    let mut reader = csv::Reader::from_path(path)
        .map_err(|err| Failure::runtime(format!("{}: {err}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|err| Failure::runtime(format!("{}: {err}", path.display())))?;
    if headers.get(0) != Some("flow") {
        return Err(Failure::runtime(format!(
            "{}: first column must be \"flow\", found {:?}",
            path.display(),
            headers.get(0).unwrap_or("")
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (number, record) in reader.records().enumerate() {
        let record =
            record.map_err(|err| Failure::runtime(format!("{}: {err}", path.display())))?;
        let mut fields = record.iter();
        let id = fields
            .next()
            .ok_or_else(|| Failure::runtime(format!("{}: empty row {}", path.display(), number + 2)))?;
        let mut row = Vec::with_capacity(names.len());
        for field in fields {
            let value: f64 = field.parse().map_err(|_| {
                Failure::runtime(format!(
                    "{} row {}: {:?} is not a number",
                    path.display(),
                    number + 2,
                    field
                ))
            })?;
            row.push(value);
        }
        if row.len() != names.len() {
            return Err(Failure::runtime(format!(
                "{} row {}: {} values for {} columns",
                path.display(),
                number + 2,
                row.len(),
                names.len()
            )));
        }
        ids.push(id.to_string());
        rows.push(row);
    }
    Ok(Matrix { ids, names, rows })
}

/// Print aligned columns: every row padded to the widest cell per column.
pub fn print_table(out: &mut impl Write, rows: &[Vec<String>]) {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in rows {
        for (cell, width) in row.iter().zip(widths.iter_mut()) {
            *width = (*width).max(cell.len());
        }
    }
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<width$}", width = widths[i]));
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
}
