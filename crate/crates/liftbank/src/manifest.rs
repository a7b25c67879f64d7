//! Plain-text dataset manifests: one `clean_path<TAB>noisy_path` pair per line.

use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub noisy: PathBuf,
}

impl ManifestEntry {
    /// Utterance id: the noisy file's stem.
    pub fn id(&self) -> String {
        self.noisy.file_stem().map_or_else(
            || self.noisy.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        )
    }
}

/// Relative paths resolve against the manifest's directory. Blank lines and
/// lines starting with `#` are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (clean, noisy) = line.split_once('\t').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected clean<TAB>noisy",
                path.display(),
                no + 1
            ))
        })?;
        let resolve = |p: &str| {
            let p = PathBuf::from(p.trim());
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        out.push(ManifestEntry {
            clean: resolve(clean),
            noisy: resolve(noisy),
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), CliError> {
    let mut s = String::new();
    for e in entries {
        s.push_str(&format!("{}\t{}\n", e.clean.display(), e.noisy.display()));
    }
    std::fs::write(path, s)?;
    Ok(())
}
