use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// An output directory verified to accept writes.
#[derive(Clone, Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let probe = root.join(".densbranch-write-probe");
        fs::write(&probe, b"").map_err(|e| Error::io(root, e))?;
        fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// RFC 4180 CSV at `name` plus a JSON sidecar with the same stem.
    pub fn write_csv<I, R>(
        &self,
        name: &str,
        header: &[&str],
        rows: I,
        meta: &impl Serialize,
    ) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let sidecar = Path::new(name).with_extension("json");
        self.write_json(&sidecar.to_string_lossy(), meta)
    }
}

/// Numbers from the last column of a headed CSV.
pub fn read_last_column(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let cell = record.iter().next_back().unwrap_or("");
        out.push(cell.trim().parse().map_err(|_| {
            Error::invalid(
                "observations",
                format!(
                    "{}: row {} has no number in its last column",
                    path.display(),
                    i + 1
                ),
            )
        })?);
    }
    if out.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(out)
}
