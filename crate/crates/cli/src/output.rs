//! Atomic file output. Every artifact is written to a temporary file in the
//! destination directory and renamed into place only once complete.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;
use thermofew::dynamics::Sample;

use crate::error::{CliError, CliResult};

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_JSON: &str = "report.json";
pub const THERMO_CSV: &str = "thermo.csv";
pub const THERMO_JSON: &str = "thermo.json";
pub const ENSEMBLE_JSONL: &str = "ensemble.jsonl";
pub const ENSEMBLE_JSON: &str = "ensemble.json";

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_header(n_dof: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n_dof).map(|i| format!("q{i}")));
    cols.extend((0..n_dof).map(|i| format!("p{i}")));
    cols.extend(["H", "f", "Omega", "P"].map(String::from));
    cols.join(",")
}

pub fn trajectory_row(s: &Sample) -> String {
    let mut vals = vec![s.t];
    vals.extend_from_slice(&s.state.q);
    vals.extend_from_slice(&s.state.p);
    vals.extend([s.energy, s.constraint, s.omega, s.power]);
    vals.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",")
}

/// A file under construction; dropped without `commit` it leaves nothing.
pub struct PendingFile {
    path: PathBuf,
    writer: BufWriter<NamedTempFile>,
}

impl PendingFile {
    pub fn create(dir: &Path, name: &str) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            path: dir.join(name),
            writer: BufWriter::new(tmp),
        })
    }

    pub fn write_line(&mut self, line: &str) -> CliResult<()> {
        writeln!(self.writer, "{line}").map_err(|e| CliError::io(&self.path, e))
    }

    pub fn commit(self) -> CliResult<PathBuf> {
        let path = self.path;
        let tmp = self.writer.into_inner().map_err(|e| CliError::io(&path, e.into_error()))?;
        tmp.as_file().sync_all().map_err(|e| CliError::io(&path, e))?;
        tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let mut f = PendingFile::create(dir, name)?;
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    f.write_line(&text)?;
    f.commit()
}
