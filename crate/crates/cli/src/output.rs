//! Outputs are staged in temporary files next to their targets and only
//! renamed into place once the whole command has succeeded.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clickbias::artifact::Provenance;
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::CliError;

#[derive(Default)]
pub struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(
        &mut self,
        path: &Path,
        body: impl FnOnce(&mut BufWriter<&mut File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
        {
            let mut out = BufWriter::new(tmp.as_file_mut());
            body(&mut out).map_err(|e| CliError::io(path, e))?;
            out.flush().map_err(|e| CliError::io(path, e))?;
        }
        self.files.push((tmp, path.to_owned()));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        self.write(path, |out| {
            serde_json::to_writer_pretty(&mut *out, value)?;
            out.write_all(b"\n")
        })
    }

    /// CSV with `# key=value` provenance lines above the header row.
    pub fn csv<T: Serialize>(
        &mut self,
        path: &Path,
        provenance: &Provenance,
        rows: impl IntoIterator<Item = T>,
    ) -> Result<(), CliError> {
        let bytes = csv_bytes(provenance, rows).map_err(|e| CliError::at(path, e))?;
        self.write(path, |out| out.write_all(&bytes))
    }

    /// Moves every staged file into place. Files left unpersisted by an error
    /// are deleted when dropped.
    pub fn commit(self) -> Result<(), CliError> {
        for (tmp, path) in self.files {
            tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
        }
        Ok(())
    }
}

pub fn csv_bytes<T: Serialize>(
    provenance: &Provenance,
    rows: impl IntoIterator<Item = T>,
) -> Result<Vec<u8>, csv::Error> {
    let mut buf = Vec::new();
    for line in provenance.header_lines() {
        buf.extend_from_slice(format!("# {line}\n").as_bytes());
    }
    let mut writer = csv::Writer::from_writer(buf);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.into_inner().map_err(|e| e.into_error().into())
}
