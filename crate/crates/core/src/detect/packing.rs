//! Packer identification from file / class signatures, plus structural
//! heuristics for packers not in the database.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PackingConfig;
use crate::ir::{AppModel, ClassDef, OpcodeClass};

const BUNDLED_DB: &str = include_str!("../../data/packers.sig");
const APPLICATION: &str = "android.app.Application";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackerSignature {
    pub packer_name: String,
    pub file_signatures: Vec<String>,
    pub code_signatures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad signature database: line {line}: {reason}")]
pub struct BadSignatureDb {
    pub line: usize,
    pub reason: String,
}

/// Parses the `PACKER` / `FILE` / `CODE` record format.
pub fn parse_signature_db(text: &str) -> Result<Vec<PackerSignature>, BadSignatureDb> {
    let bad = |line: usize, reason: String| BadSignatureDb { line, reason };
    let mut db: Vec<(usize, PackerSignature)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let no = no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (kw, arg) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let arg = arg.trim();
        if arg.is_empty() || arg.contains(char::is_whitespace) {
            return Err(bad(no, format!("`{kw}` takes exactly one argument")));
        }
        match kw {
            "PACKER" => db.push((
                no,
                PackerSignature {
                    packer_name: arg.to_string(),
                    file_signatures: Vec::new(),
                    code_signatures: Vec::new(),
                },
            )),
            "FILE" | "CODE" => {
                let Some((_, current)) = db.last_mut() else {
                    return Err(bad(no, format!("`{kw}` before any PACKER")));
                };
                if kw == "FILE" {
                    if arg.starts_with('*') && !arg.starts_with("*/") || arg.len() < 3 && arg.starts_with("*/") {
                        return Err(bad(no, format!("bad wildcard pattern `{arg}`")));
                    }
                    current.file_signatures.push(arg.to_string());
                } else {
                    current.code_signatures.push(arg.to_string());
                }
            }
            other => return Err(bad(no, format!("unknown keyword `{other}`"))),
        }
    }
    if db.is_empty() {
        return Err(bad(0, "no packers defined".into()));
    }
    let mut names = HashSet::new();
    for (line, p) in &db {
        if p.file_signatures.is_empty() && p.code_signatures.is_empty() {
            return Err(bad(*line, format!("packer `{}` has no signatures", p.packer_name)));
        }
        if !names.insert(p.packer_name.as_str()) {
            return Err(bad(*line, format!("duplicate packer `{}`", p.packer_name)));
        }
    }
    Ok(db.into_iter().map(|(_, p)| p).collect())
}

pub fn load_signature_db(path: &Path) -> Result<Vec<PackerSignature>, BadSignatureDb> {
    let text = std::fs::read_to_string(path).map_err(|e| BadSignatureDb {
        line: 0,
        reason: format!("{}: {e}", path.display()),
    })?;
    parse_signature_db(&text)
}

/// The database shipped with the crate.
pub fn bundled_signature_db() -> Vec<PackerSignature> {
    parse_signature_db(BUNDLED_DB).expect("bundled signature database is valid")
}

/// Renders a database back into the record format.
pub fn format_signature_db(db: &[PackerSignature]) -> String {
    let mut out = String::new();
    for p in db {
        out.push_str(&format!("PACKER {}\n", p.packer_name));
        for f in &p.file_signatures {
            out.push_str(&format!("FILE {f}\n"));
        }
        for c in &p.code_signatures {
            out.push_str(&format!("CODE {c}\n"));
        }
        out.push('\n');
    }
    out
}

/// Exact path, or `*/suffix` matching any path ending in `/suffix`.
pub fn file_pattern_matches(pattern: &str, path: &str) -> bool {
    match pattern.strip_prefix('*') {
        Some(suffix) => path.ends_with(suffix),
        None => path == pattern,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceKind {
    File,
    Code,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub kind: EvidenceKind,
    pub signature: String,
    /// First path or class name that matched.
    pub matched: String,
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {} ({})", self.kind, self.signature, self.matched)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackerMatch {
    pub packer_name: String,
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicFlags {
    pub derived_application: bool,
    pub encrypted_asset: bool,
    pub thin_wrapper: bool,
}

impl HeuristicFlags {
    pub fn count(&self) -> usize {
        [self.derived_application, self.encrypted_asset, self.thin_wrapper]
            .iter()
            .filter(|&&f| f)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingDetection {
    pub matched_packers: Vec<PackerMatch>,
    pub heuristic_flags: HeuristicFlags,
    pub verdict: bool,
}

/// Packed iff some packer matched or at least two heuristics fired.
pub fn packing_verdict(matched: bool, flags: HeuristicFlags) -> bool {
    matched || flags.count() >= 2
}

fn match_packer(app: &AppModel, sig: &PackerSignature) -> Vec<Evidence> {
    let mut evidence = Vec::new();
    for pat in &sig.file_signatures {
        if let Some(f) = app.file_entries.iter().find(|f| file_pattern_matches(pat, &f.path)) {
            evidence.push(Evidence {
                kind: EvidenceKind::File,
                signature: pat.clone(),
                matched: f.path.clone(),
            });
        }
    }
    for prefix in &sig.code_signatures {
        if let Some(c) = app.classes.iter().find(|c| c.name.starts_with(prefix.as_str())) {
            evidence.push(Evidence {
                kind: EvidenceKind::Code,
                signature: prefix.clone(),
                matched: c.name.clone(),
            });
        }
    }
    evidence
}

/// Classes whose superclass chain, followed through app classes, reaches
/// `android.app.Application`.
pub fn application_subclasses(app: &AppModel) -> Vec<&ClassDef> {
    let by_name: HashMap<&str, &ClassDef> = app.classes.iter().map(|c| (c.name.as_str(), c)).collect();
    app.classes
        .iter()
        .filter(|c| {
            let mut seen = HashSet::new();
            let mut cur = c.superclass.as_deref();
            while let Some(s) = cur {
                if s == APPLICATION {
                    return true;
                }
                if !seen.insert(s) {
                    return false;
                }
                cur = by_name.get(s).and_then(|c| c.superclass.as_deref());
            }
            false
        })
        .collect()
}

fn is_thin_wrapper(c: &ClassDef, cfg: &PackingConfig) -> bool {
    let total: usize = c.methods.iter().map(|m| m.instructions.len()).sum();
    let loads_native = c.methods.iter().any(|m| {
        m.is_native
            || m.instructions.iter().any(|i| {
                i.opcode == OpcodeClass::InvokeStatic
                    && i.invoked().is_some_and(|r| r.owner == "java.lang.System" && r.name == "loadLibrary")
            })
    });
    total < cfg.wrapper_max_instructions && loads_native
}

pub fn detect_packing(app: &AppModel, db: &[PackerSignature], cfg: &PackingConfig) -> PackingDetection {
    let matched_packers: Vec<PackerMatch> = db
        .iter()
        .filter_map(|sig| {
            let evidence = match_packer(app, sig);
            (!evidence.is_empty()).then(|| PackerMatch {
                packer_name: sig.packer_name.clone(),
                evidence,
            })
        })
        .collect();

    let derived = application_subclasses(app);
    let signature_paths: HashSet<&str> = matched_packers
        .iter()
        .flat_map(|m| &m.evidence)
        .filter(|e| e.kind == EvidenceKind::File)
        .map(|e| e.matched.as_str())
        .collect();
    let encrypted_asset = app.file_entries.iter().any(|f| {
        (f.path.starts_with("assets/") || f.path.starts_with("lib/"))
            && f.entropy >= cfg.entropy_threshold
            && f.size_bytes >= cfg.min_asset_size
            && (!f.path.ends_with(".so") || signature_paths.contains(f.path.as_str()))
    });
    let heuristic_flags = HeuristicFlags {
        derived_application: !derived.is_empty(),
        encrypted_asset,
        thin_wrapper: derived.iter().any(|c| is_thin_wrapper(c, cfg)),
    };
    PackingDetection {
        verdict: packing_verdict(!matched_packers.is_empty(), heuristic_flags),
        matched_packers,
        heuristic_flags,
    }
}
