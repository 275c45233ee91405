use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tempfile::NamedTempFile;

/// A file written next to its destination and renamed into place on
/// [`Staged::commit`]. Dropping it uncommitted removes the temporary file.
pub struct Staged {
    dest: PathBuf,
    file: BufWriter<NamedTempFile>,
}

impl Staged {
    pub fn new(dest: &Path) -> Result<Self> {
        let dir = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let tmp = NamedTempFile::new_in(dir).with_context(|| format!("staging {}", dest.display()))?;
        Ok(Self {
            dest: dest.to_owned(),
            file: BufWriter::new(tmp),
        })
    }

    pub fn commit(self) -> Result<()> {
        let tmp = self.file.into_inner().map_err(io::IntoInnerError::into_error)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.dest)
            .with_context(|| format!("writing {}", self.dest.display()))?;
        Ok(())
    }
}

impl Write for Staged {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.file.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()
    }
}
