//! APK and DEX ingestion.

pub mod dex;
mod opcodes;
pub mod zip;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use crate::ir::{AppModel, ClassDef, FileEntry, Origin, ENTROPY_WINDOW};

pub use dex::{parse_dex, DexError};
pub use zip::CorruptArchive;

/// Largest DEX entry that will be decompressed.
const MAX_DEX_BYTES: u64 = 256 * 1024 * 1024;

const BUNDLED_LIBRARIES: &str = include_str!("../../data/library_prefixes.txt");

/// Package-name prefixes of third-party libraries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LibraryPrefixList {
    prefixes: Vec<String>,
}

impl LibraryPrefixList {
    /// Builds a list from raw prefixes, dropping empties and duplicates.
    pub fn new<I, S>(prefixes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let prefixes = prefixes
            .into_iter()
            .map(Into::into)
            .filter(|p: &String| !p.is_empty() && seen.insert(p.clone()))
            .collect();
        LibraryPrefixList { prefixes }
    }

    /// Parses the prefix-list file format: one prefix per line, `#` comments,
    /// blank lines ignored.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// The list shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LIBRARIES)
    }

    pub fn prefixes(&self) -> &[String] {
        &self.prefixes
    }

    pub fn matches(&self, class_name: &str) -> bool {
        self.prefixes.iter().any(|p| class_name.starts_with(p.as_str()))
    }
}

/// Returns a copy of `app` where `is_library` is set iff the class name
/// starts with one of the prefixes.
pub fn mark_libraries(app: &AppModel, libs: &LibraryPrefixList) -> AppModel {
    let mut out = app.clone();
    for class in &mut out.classes {
        class.is_library = libs.matches(&class.name);
    }
    out
}

/// Non-fatal problems met while ingesting an APK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestWarning {
    /// The archive holds no `classes*.dex`.
    NoDex,
    BadDex { path: String, error: DexError },
    BadEntry { path: String, reason: String },
    DuplicateClass { name: String, path: String },
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestWarning::NoDex => f.write_str("no classes.dex in archive"),
            IngestWarning::BadDex { path, error } => write!(f, "{path}: {error}"),
            IngestWarning::BadEntry { path, reason } => write!(f, "{path}: {reason}"),
            IngestWarning::DuplicateClass { name, path } => {
                write!(f, "{path}: duplicate class {name} ignored")
            }
        }
    }
}

/// Result of [`parse_apk`].
#[derive(Debug, Clone)]
pub struct Ingested {
    pub app: AppModel,
    pub warnings: Vec<IngestWarning>,
    /// Number of DEX files parsed successfully.
    pub dex_parsed: usize,
}

impl Ingested {
    /// Whether any DEX code was recovered from the archive.
    pub fn has_code(&self) -> bool {
        self.dex_parsed > 0
    }
}

/// `classes.dex` -> 1, `classesN.dex` -> N.
fn dex_ordinal(path: &str) -> Option<u32> {
    let n = path.strip_prefix("classes")?.strip_suffix(".dex")?;
    if n.is_empty() {
        Some(1)
    } else if n.starts_with('0') {
        None
    } else {
        n.parse().ok().filter(|&n| n >= 2)
    }
}

/// Parses an APK into an [`AppModel`] with one file entry per zip entry and
/// the merged classes of every `classes*.dex`.
pub fn parse_apk(app_id: &str, bytes: &[u8], libs: &LibraryPrefixList) -> Result<Ingested, CorruptArchive> {
    let archive = zip::ZipArchive::parse(bytes)?;
    let mut app = AppModel::new(app_id, Origin::DexParsed);
    let mut warnings = Vec::new();
    let mut dex_entries = Vec::new();

    for entry in archive.entries().iter().filter(|e| !e.is_dir()) {
        match archive.read_prefix(entry, ENTROPY_WINDOW as u64) {
            Ok(head) => app
                .file_entries
                .push(FileEntry::from_bytes(entry.name.clone(), entry.uncompressed_size, &head)),
            Err(e) => {
                warnings.push(IngestWarning::BadEntry {
                    path: entry.name.clone(),
                    reason: e.to_string(),
                });
                app.file_entries.push(FileEntry {
                    path: entry.name.clone(),
                    size_bytes: entry.uncompressed_size,
                    entropy: 0.0,
                });
                continue;
            }
        }
        if let Some(n) = dex_ordinal(&entry.name) {
            dex_entries.push((n, entry));
        }
    }

    if dex_entries.is_empty() {
        warnings.push(IngestWarning::NoDex);
        return Ok(Ingested {
            app,
            warnings,
            dex_parsed: 0,
        });
    }
    dex_entries.sort_by_key(|(n, _)| *n);

    let mut names = HashSet::new();
    let mut dex_parsed = 0;
    for (_, entry) in dex_entries {
        let bytes = match archive.read_all(entry, MAX_DEX_BYTES) {
            Ok(b) => b,
            Err(e) => {
                warnings.push(IngestWarning::BadEntry {
                    path: entry.name.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match parse_dex(&bytes) {
            Ok(classes) => {
                dex_parsed += 1;
                merge_classes(&mut app.classes, &mut names, classes, &entry.name, &mut warnings);
            }
            Err(error) => warnings.push(IngestWarning::BadDex {
                path: entry.name.clone(),
                error,
            }),
        }
    }
    Ok(Ingested {
        app: mark_libraries(&app, libs),
        warnings,
        dex_parsed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InputError {
    #[error(transparent)]
    Archive(#[from] CorruptArchive),
    #[error("textual IR: {0}")]
    TextIr(String),
    #[error("unrecognized input: neither a zip archive nor textual IR")]
    Unrecognized,
}

/// Loads an APK (zip magic) or a textual-IR dump (`APP ` header).
///
/// `app_id` names APKs; textual IR carries its own id. Library flags in
/// textual IR are kept as written.
pub fn load_input(app_id: &str, bytes: &[u8], libs: &LibraryPrefixList) -> Result<Ingested, InputError> {
    if bytes.starts_with(b"PK") {
        return Ok(parse_apk(app_id, bytes, libs)?);
    }
    if bytes.starts_with(b"APP ") {
        let text = std::str::from_utf8(bytes).map_err(|e| InputError::TextIr(e.to_string()))?;
        let app = crate::ir::load_textual_ir(text).map_err(|e| InputError::TextIr(e.to_string()))?;
        return Ok(Ingested {
            app,
            warnings: Vec::new(),
            dex_parsed: 1,
        });
    }
    Err(InputError::Unrecognized)
}

fn merge_classes(
    into: &mut Vec<ClassDef>,
    names: &mut HashSet<String>,
    classes: Vec<ClassDef>,
    path: &str,
    warnings: &mut Vec<IngestWarning>,
) {
    for class in classes {
        if names.insert(class.name.clone()) {
            into.push(class);
        } else {
            warnings.push(IngestWarning::DuplicateClass {
                name: class.name,
                path: path.to_string(),
            });
        }
    }
}
