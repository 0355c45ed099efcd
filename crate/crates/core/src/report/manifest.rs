//! Corpus manifests: `<source_tag> <path> [label]` per line.

use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub source_tag: String,
    pub path: PathBuf,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("manifest line {line}: {reason}")]
pub struct ManifestError {
    pub line: usize,
    pub reason: String,
}

/// Parses a manifest. Relative paths are joined to `base`; blank lines and
/// `#` comments are ignored.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, ManifestError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (tag, path, label) = match fields.as_slice() {
            [t, p] => (*t, *p, None),
            [t, p, l] => (*t, *p, Some(l.to_string())),
            _ => {
                return Err(ManifestError {
                    line: i + 1,
                    reason: format!("expected 2 or 3 fields, found {}", fields.len()),
                })
            }
        };
        let path = Path::new(path);
        out.push(ManifestEntry {
            source_tag: tag.to_string(),
            path: if path.is_relative() { base.join(path) } else { path.to_path_buf() },
            label,
        });
    }
    Ok(out)
}
