//! Writing APK-shaped zip archives.

use std::io::{Cursor, Write};

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipWriter};

/// Placeholder bytes for `AndroidManifest.xml`.
pub const MANIFEST_STUB: &[u8] = b"\x03\x00\x08\x00manifest";

/// Entries of an archive under construction, written in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ApkBuilder {
    entries: Vec<(String, Vec<u8>, bool)>,
}

impl ApkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a deflated entry.
    pub fn file(mut self, path: impl Into<String>, data: impl Into<Vec<u8>>) -> Self {
        self.entries.push((path.into(), data.into(), true));
        self
    }

    /// Adds an entry without compression.
    pub fn stored(mut self, path: impl Into<String>, data: impl Into<Vec<u8>>) -> Self {
        self.entries.push((path.into(), data.into(), false));
        self
    }

    /// Adds `classes.dex`, or `classesN.dex` for later calls.
    pub fn dex(self, bytes: Vec<u8>) -> Self {
        let n = self.entries.iter().filter(|e| e.0.starts_with("classes") && e.0.ends_with(".dex")).count();
        let name = if n == 0 { "classes.dex".to_string() } else { format!("classes{}.dex", n + 1) };
        self.file(name, bytes)
    }

    /// A minimal manifest so the archive looks like an app.
    pub fn with_manifest(self) -> Self {
        self.file("AndroidManifest.xml", MANIFEST_STUB)
    }

    pub fn build(&self) -> Vec<u8> {
        let mut zw = ZipWriter::new(Cursor::new(Vec::new()));
        for (path, data, deflate) in &self.entries {
            let method = if *deflate { CompressionMethod::Deflated } else { CompressionMethod::Stored };
            let opts = SimpleFileOptions::default().compression_method(method);
            zw.start_file(path.as_str(), opts).expect("in-memory zip write");
            zw.write_all(data).expect("in-memory zip write");
        }
        zw.finish().expect("in-memory zip write").into_inner()
    }
}
