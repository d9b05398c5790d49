//! Outputs are written to hidden `.partial` siblings first and renamed into
//! place only once every file has been written.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

fn partial_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.partial"))
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    /// Writes every staged file, then renames them all into place. On a
    /// write failure the partial files are removed and nothing is renamed.
    pub fn commit(self) -> Result<(), (PathBuf, io::Error)> {
        let mut written: Vec<PathBuf> = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                if let Err(e) = fs::create_dir_all(parent) {
                    cleanup(&written);
                    return Err((parent.to_path_buf(), e));
                }
            }
            let tmp = partial_path(path);
            if let Err(e) = fs::write(&tmp, bytes) {
                cleanup(&written);
                return Err((path.clone(), e));
            }
            written.push(tmp);
        }
        for ((path, _), tmp) in self.files.iter().zip(&written) {
            fs::rename(tmp, path).map_err(|e| (path.clone(), e))?;
        }
        Ok(())
    }
}

fn cleanup(paths: &[PathBuf]) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}
