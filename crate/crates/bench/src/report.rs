//! Report rows, metadata, and CSV/JSON emission.
//!
//! CSV output starts with `# key = value` metadata lines followed by a header
//! in the field order of [`ReportRow`]. Columns that do not apply to a row are
//! left empty.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ExperimentSpec;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report has no rows")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_FAILED: &str = "failed";
pub const STATUS_SKIPPED: &str = "skipped";
pub const STATUS_UNREACHABLE: &str = "unreachable";
pub const STATUS_WARNING: &str = "warning";

/// One measurement. Carries every parameter needed to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportRow {
    pub experiment: String,
    /// `to-end-time`, `fixed-steps`, `slope`, `fit`, `strong`, `weak`, `dim-compare`.
    pub mode: String,
    pub equation: String,
    pub dim: usize,
    pub order: usize,
    pub rk: String,
    /// Cells per axis joined by `x`, e.g. `64x64`.
    pub cells: String,
    pub nk: Option<usize>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub cfl: f64,
    pub t_end: Option<f64>,
    pub steps: Option<usize>,
    pub dof: Option<usize>,
    pub dt_min: Option<f64>,
    pub dt_max: Option<f64>,
    pub wall_time: Option<f64>,
    pub exchange_time: Option<f64>,
    pub time_per_dof: Option<f64>,
    /// `wall_time * workers / dof`: the per-worker cost used for weak scaling.
    pub worker_time_per_dof: Option<f64>,
    pub l2_error: Option<f64>,
    pub slope: Option<f64>,
    pub peak_slope: Option<f64>,
    pub fine_slope: Option<f64>,
    pub target_error: Option<f64>,
    pub fitted_c: Option<f64>,
    pub reference_c: Option<f64>,
    pub speedup: Option<f64>,
    pub efficiency: Option<f64>,
    pub power_watts: Option<f64>,
    pub energy_j: Option<f64>,
    pub energy_per_dof: Option<f64>,
    pub status: String,
    pub note: String,
}

impl ReportRow {
    pub fn is_failed(&self) -> bool {
        self.status == STATUS_FAILED
    }

    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    /// SHA-256 of the JSON-serialized experiment spec.
    pub spec_hash: String,
    /// Seconds since the Unix epoch when the report was created.
    pub timestamp: u64,
}

impl Metadata {
    pub fn for_spec(spec: &ExperimentSpec) -> Self {
        let json = serde_json::to_string(spec).unwrap_or_default();
        let hash = Sha256::digest(json.as_bytes());
        Metadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            spec_hash: hash.iter().map(|b| format!("{b:02x}")).collect(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub metadata: Metadata,
    pub rows: Vec<ReportRow>,
}

impl BenchReport {
    pub fn new(spec: &ExperimentSpec) -> Self {
        BenchReport {
            metadata: Metadata::for_spec(spec),
            rows: Vec::new(),
        }
    }

    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(ReportRow::is_failed)
    }

    /// Rows of one mode.
    pub fn mode<'a>(&'a self, mode: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.mode == mode)
    }
}

pub fn write_csv<W: Write>(report: &BenchReport, mut out: W) -> Result<(), ReportError> {
    writeln!(out, "# version = {}", report.metadata.version)?;
    writeln!(out, "# spec_hash = {}", report.metadata.spec_hash)?;
    writeln!(out, "# timestamp = {}", report.metadata.timestamp)?;
    let mut w = csv::Writer::from_writer(out);
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(report: &BenchReport, out: W) -> Result<(), ReportError> {
    serde_json::to_writer_pretty(out, report)?;
    Ok(())
}

/// Writes `report` to `path`, or to stdout when `path` is `None`. No file is
/// created for an empty report.
pub fn emit_report(report: &BenchReport, format: Format, path: Option<&Path>) -> Result<(), ReportError> {
    if report.rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_csv(report, &mut buf)?,
        Format::Json => {
            write_json(report, &mut buf)?;
            buf.push(b'\n');
        }
    }
    match path {
        Some(p) => fs::write(p, &buf).map_err(|source| ReportError::Write {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            std::io::stdout().write_all(&buf)?;
            Ok(())
        }
    }
}

/// Reads rows back from CSV written by [`write_csv`]; metadata lines are
/// skipped.
pub fn read_csv_rows<R: std::io::Read>(input: R) -> Result<Vec<ReportRow>, ReportError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<ReportRow>, ReportError> {
    read_csv_rows(fs::File::open(path)?)
}

pub fn read_json_file(path: &Path) -> Result<BenchReport, ReportError> {
    Ok(serde_json::from_reader(fs::File::open(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Experiment, ExperimentSpec};

    fn sample() -> BenchReport {
        let spec = ExperimentSpec::new(Experiment::Timing);
        let mut r = BenchReport::new(&spec);
        r.rows.push(ReportRow {
            experiment: "timing".into(),
            mode: "fixed-steps".into(),
            equation: "advection".into(),
            dim: 2,
            order: 4,
            rk: "rk4".into(),
            cells: "8x8".into(),
            seed: Some(3),
            workers: 1,
            cfl: 0.4,
            steps: Some(100),
            dof: Some(1024),
            wall_time: Some(0.1 + 0.2),
            time_per_dof: Some((0.1 + 0.2) / 1024.0),
            status: STATUS_OK.into(),
            note: "comma, \"quoted\"".into(),
            ..Default::default()
        });
        r.rows.push(ReportRow {
            experiment: "timing".into(),
            status: STATUS_FAILED.into(),
            l2_error: Some(1e-300),
            ..Default::default()
        });
        r
    }

    #[test]
    fn csv_round_trip() {
        let r = sample();
        let mut buf = Vec::new();
        write_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# version = "));
        let header = text.lines().nth(3).unwrap();
        assert!(header.starts_with("experiment,mode,equation,dim,order,rk,cells,"));
        assert!(header.ends_with(",status,note"));
        assert_eq!(read_csv_rows(buf.as_slice()).unwrap(), r.rows);
        assert!(r.any_failed());
    }

    #[test]
    fn json_and_csv_agree() {
        let r = sample();
        let mut j = Vec::new();
        write_json(&r, &mut j).unwrap();
        let back: BenchReport = serde_json::from_slice(&j).unwrap();
        let mut c = Vec::new();
        write_csv(&r, &mut c).unwrap();
        assert_eq!(back.rows, read_csv_rows(c.as_slice()).unwrap());
        assert_eq!(back.metadata, r.metadata);
    }

    #[test]
    fn empty_report_writes_nothing() {
        let dir = std::env::temp_dir().join(format!("ndg-empty-{}", std::process::id()));
        let spec = ExperimentSpec::new(Experiment::Timing);
        let r = BenchReport::new(&spec);
        assert!(matches!(emit_report(&r, Format::Csv, Some(&dir)), Err(ReportError::Empty)));
        assert!(!dir.exists());
    }

    #[test]
    fn spec_hash_tracks_spec() {
        let a = Metadata::for_spec(&ExperimentSpec::new(Experiment::Timing));
        let b = Metadata::for_spec(&ExperimentSpec::new(Experiment::Timing));
        let c = Metadata::for_spec(&ExperimentSpec::new(Experiment::Scale));
        assert_eq!(a.spec_hash, b.spec_hash);
        assert_ne!(a.spec_hash, c.spec_hash);
        assert_eq!(a.spec_hash.len(), 64);
    }
}
