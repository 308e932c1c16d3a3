//! All-or-nothing output writing.
//!
//! Commands assemble every artifact in memory first. [`Artifacts::commit`]
//! then writes each one to a temporary file next to its destination and only
//! renames them into place once all temporaries are on disk, so a failed run
//! leaves no partial outputs behind.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Artifacts {
    files: Vec<(PathBuf, String)>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queue `contents` for `relative` (a path inside the output directory).
    pub fn add(&mut self, relative: impl Into<PathBuf>, contents: String) {
        self.files.push((relative.into(), contents));
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn get(&self, relative: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(p, _)| p == Path::new(relative))
            .map(|(_, c)| c.as_str())
    }

    /// Write everything under `dir`; returns the final paths in insertion order.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(self.files.len());
        let cleanup = |staged: &[(PathBuf, PathBuf)]| {
            for (tmp, _) in staged {
                let _ = fs::remove_file(tmp);
            }
        };
        for (relative, contents) in &self.files {
            let target = dir.join(relative);
            let parent = target.parent().unwrap_or(dir).to_path_buf();
            let tmp = parent.join(format!(
                ".{}.tmp-{}",
                target.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
                std::process::id()
            ));
            let result = fs::create_dir_all(&parent)
                .map_err(|e| CliError::io(&parent, e))
                .and_then(|_| fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e)));
            if let Err(e) = result {
                let _ = fs::remove_file(&tmp);
                cleanup(&staged);
                return Err(e);
            }
            staged.push((tmp, target));
        }
        for (i, (tmp, target)) in staged.iter().enumerate() {
            if let Err(e) = fs::rename(tmp, target) {
                cleanup(&staged[i..]);
                return Err(CliError::io(target, e));
            }
        }
        Ok(staged.into_iter().map(|(_, target)| target).collect())
    }
}

/// A file-name-safe version of a parameter name (`size^2` → `size_2`).
pub fn sanitize(name: &str) -> String {
    let mut out: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    while out.contains("__") {
        out = out.replace("__", "_");
    }
    let trimmed = out.trim_matches('_');
    if trimmed.is_empty() {
        "param".into()
    } else {
        trimmed.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sanitizes_names() {
        assert_eq!(sanitize("(Intercept)"), "Intercept");
        assert_eq!(sanitize("size^2"), "size_2");
        assert_eq!(sanitize("prog==2"), "prog_2");
        assert_eq!(sanitize("nu"), "nu");
        assert_eq!(sanitize("^^"), "param");
    }

    #[test]
    fn commits_nested_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::new();
        a.add("top.csv", "a\n".into());
        a.add("plots/inner.csv", "b\n".into());
        let paths = a.commit(dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(fs::read_to_string(dir.path().join("plots/inner.csv")).unwrap(), "b\n");
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with('.'))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn failed_commit_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        // A regular file where a directory is needed makes the second write fail.
        fs::write(dir.path().join("blocker"), "x").unwrap();
        let mut a = Artifacts::new();
        a.add("first.csv", "a\n".into());
        a.add("blocker/second.csv", "b\n".into());
        assert!(a.commit(dir.path()).is_err());
        let names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["blocker".to_string()]);
    }
}
