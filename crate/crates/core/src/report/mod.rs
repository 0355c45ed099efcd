//! Per-app scan reports and corpus aggregation.

mod corpus;
mod manifest;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ScanConfig;
use crate::detect::overloading::OverloadReport;
use crate::detect::packing::{bundled_signature_db, load_signature_db, BadSignatureDb, PackerSignature, PackingDetection};
use crate::detect::registry::RegistryError;
use crate::detect::renaming::RenamingDetection;
use crate::detect::stringenc::StringEncDetection;
use crate::detect::{Finding, ReflectionReport, TechniqueContext, TechniqueRegistry};
use crate::features::{CharsetId, LinearModel, ModelError};
use crate::ingest::{load_input, LibraryPrefixList};

pub use corpus::{aggregate, top_targets, CorpusReport, TagStats, Tally};
pub use manifest::{parse_manifest, ManifestEntry, ManifestError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub schema_version: u32,
    pub app_id: String,
    pub source_tag: String,
    /// Why the app could not be analysed at all.
    pub skipped: Option<String>,
    /// `None` means the technique did not run (see `warnings`).
    pub renaming: Option<RenamingDetection>,
    pub overloading: Option<OverloadReport>,
    pub stringenc: Option<StringEncDetection>,
    pub reflection: Option<ReflectionReport>,
    pub packing: Option<PackingDetection>,
    pub timings_ms: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
}

impl ScanReport {
    fn empty(app_id: &str, source_tag: &str) -> Self {
        ScanReport {
            schema_version: SCHEMA_VERSION,
            app_id: app_id.to_string(),
            source_tag: source_tag.to_string(),
            skipped: None,
            renaming: None,
            overloading: None,
            stringenc: None,
            reflection: None,
            packing: None,
            timings_ms: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    /// A report for an input that could not be analysed at all.
    pub fn skipped(app_id: &str, source_tag: &str, reason: impl Into<String>) -> Self {
        let mut r = Self::empty(app_id, source_tag);
        r.skipped = Some(reason.into());
        r
    }

    pub fn is_skipped(&self) -> bool {
        self.skipped.is_some()
    }

    /// Canonical JSON: UTF-8, object keys sorted.
    pub fn to_json(&self) -> String {
        canonical_json(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    fn place(&mut self, finding: Finding) {
        match finding {
            Finding::Renaming(f) => self.renaming = Some(f),
            Finding::Overloading(f) => self.overloading = Some(f),
            Finding::StringEnc(f) => self.stringenc = Some(f),
            Finding::Reflection(f) => self.reflection = Some(f),
            Finding::Packing(f) => self.packing = Some(f),
        }
    }
}

/// Pretty JSON with keys in sorted order.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json's Map is ordered by key, so a round trip through Value sorts.
    let v = serde_json::to_value(value).expect("report types serialize");
    serde_json::to_string_pretty(&v).expect("values serialize")
}

/// One unit of work for [`Scanner::scan`].
#[derive(Debug, Clone)]
pub struct ScanInput {
    /// Used for APKs; textual IR names itself.
    pub app_id: String,
    pub source_tag: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error("{path}: {source}")]
    Model { path: String, source: ModelError },
    #[error("{path}: model uses {found}, expected {expected}")]
    Charset {
        path: String,
        expected: CharsetId,
        found: CharsetId,
    },
    #[error(transparent)]
    Signatures(#[from] BadSignatureDb),
    #[error("cannot read library list {path}: {source}")]
    Libs { path: String, source: std::io::Error },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Models, databases and configuration shared by every scan.
pub struct Scanner {
    registry: TechniqueRegistry,
    selected: Vec<&'static str>,
    renaming_model: Option<LinearModel>,
    stringenc_model: Option<LinearModel>,
    signatures: Vec<PackerSignature>,
    libs: LibraryPrefixList,
    config: ScanConfig,
}

impl Scanner {
    /// A scanner with the bundled library list and signature DB and no
    /// models. Model paths in `config` are not read.
    pub fn new(config: ScanConfig) -> Result<Self, SetupError> {
        let registry = TechniqueRegistry::with_defaults();
        let selected = registry
            .select(config.techniques.as_deref())?
            .iter()
            .map(|t| t.name())
            .collect();
        Ok(Scanner {
            registry,
            selected,
            renaming_model: None,
            stringenc_model: None,
            signatures: bundled_signature_db(),
            libs: LibraryPrefixList::bundled(),
            config,
        })
    }

    /// Loads every file named by `config`.
    pub fn from_config(config: ScanConfig) -> Result<Self, SetupError> {
        let load = |path: &std::path::Path, expected: CharsetId| -> Result<LinearModel, SetupError> {
            let shown = path.display().to_string();
            let m = LinearModel::load(path).map_err(|source| SetupError::Model {
                path: shown.clone(),
                source,
            })?;
            if m.charset != expected {
                return Err(SetupError::Charset {
                    path: shown,
                    expected,
                    found: m.charset,
                });
            }
            Ok(m)
        };
        let renaming = config
            .renaming_model
            .as_deref()
            .map(|p| load(p, CharsetId::IdentifierSet))
            .transpose()?;
        let stringenc = config
            .stringenc_model
            .as_deref()
            .map(|p| load(p, CharsetId::AsciiSet))
            .transpose()?;
        let signatures = match &config.signatures {
            Some(p) => load_signature_db(p)?,
            None => bundled_signature_db(),
        };
        let libs = match &config.libs {
            Some(p) => LibraryPrefixList::load(p).map_err(|source| SetupError::Libs {
                path: p.display().to_string(),
                source,
            })?,
            None => LibraryPrefixList::bundled(),
        };
        let mut s = Self::new(config)?;
        s.renaming_model = renaming;
        s.stringenc_model = stringenc;
        s.signatures = signatures;
        s.libs = libs;
        Ok(s)
    }

    pub fn with_models(mut self, renaming: Option<LinearModel>, stringenc: Option<LinearModel>) -> Self {
        self.renaming_model = renaming;
        self.stringenc_model = stringenc;
        self
    }

    pub fn with_signatures(mut self, db: Vec<PackerSignature>) -> Self {
        self.signatures = db;
        self
    }

    pub fn with_libs(mut self, libs: LibraryPrefixList) -> Self {
        self.libs = libs;
        self
    }

    pub fn config(&self) -> &ScanConfig {
        &self.config
    }

    pub fn signatures(&self) -> &[PackerSignature] {
        &self.signatures
    }

    /// Ingests one input and runs every selected technique. Only an
    /// unreadable input aborts the app; a failing technique leaves its slot
    /// empty and adds a warning.
    pub fn scan(&self, input: &ScanInput) -> ScanReport {
        let t0 = Instant::now();
        let ingested = match load_input(&input.app_id, &input.bytes, &self.libs) {
            Ok(i) => i,
            Err(e) => return ScanReport::skipped(&input.app_id, &input.source_tag, e.to_string()),
        };
        let mut report = ScanReport::empty(&input.app_id, &input.source_tag);
        report.timings_ms.insert("ingest".into(), elapsed_ms(t0));
        report.app_id = ingested.app.app_id.clone();
        report.warnings.extend(ingested.warnings.iter().map(ToString::to_string));

        let ctx = TechniqueContext {
            renaming_model: self.renaming_model.as_ref(),
            stringenc_model: self.stringenc_model.as_ref(),
            signatures: &self.signatures,
            config: &self.config,
        };
        for name in &self.selected {
            let Some(t) = self.registry.get(name) else { continue };
            if t.requires_code() && !ingested.has_code() {
                report.warnings.push(format!("{name}: not run, no parsable code"));
                continue;
            }
            let t0 = Instant::now();
            match t.run(&ingested.app, &ctx) {
                Ok(f) => report.place(f),
                Err(e) => report.warnings.push(format!("{name}: {e}")),
            }
            report.timings_ms.insert((*name).to_string(), elapsed_ms(t0));
        }
        report
    }
}

fn elapsed_ms(t0: Instant) -> u64 {
    u64::try_from(t0.elapsed().as_millis()).unwrap_or(u64::MAX)
}

/// Maps `f` over `items` on `parallelism` worker threads pulling from a
/// shared queue. Results keep input order.
pub fn run_parallel<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every item processed"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{dump_textual_ir, AppModel, ClassDef, Instr, MemberRef, MethodDef, OpcodeClass, Origin};

    fn reflective_app() -> AppModel {
        let mut m = MethodDef::new("run", "()V", 5);
        m.push(Instr::const_string(0, "a.B"));
        m.push(Instr::invoke(
            OpcodeClass::InvokeStatic,
            [0],
            MemberRef::new("java.lang.Class", "forName", "(Ljava/lang/String;)Ljava/lang/Class;"),
        ));
        m.push(Instr::new(OpcodeClass::MoveResult, [0]));
        m.push(Instr::const_string(1, "c"));
        m.push(Instr::invoke(
            OpcodeClass::InvokeVirtual,
            [0, 1, 2],
            MemberRef::new(
                "java.lang.Class",
                "getMethod",
                "(Ljava/lang/String;[Ljava/lang/Class;)Ljava/lang/reflect/Method;",
            ),
        ));
        m.push(Instr::new(OpcodeClass::MoveResult, [3]));
        m.push(Instr::invoke(
            OpcodeClass::InvokeVirtual,
            [3, 4, 2],
            MemberRef::new(
                "java.lang.reflect.Method",
                "invoke",
                "(Ljava/lang/Object;[Ljava/lang/Object;)Ljava/lang/Object;",
            ),
        ));
        m.push(Instr::new(OpcodeClass::Return, []));
        let mut c = ClassDef::new("com.x.Main", "java.lang.Object");
        c.methods.push(m);
        let mut app = AppModel::new("refl", Origin::TextualIr);
        app.classes.push(c);
        app
    }

    fn input(bytes: Vec<u8>) -> ScanInput {
        ScanInput {
            app_id: "file".into(),
            source_tag: "t".into(),
            bytes,
        }
    }

    #[test]
    fn textual_ir_with_reflection() {
        let scanner = Scanner::new(ScanConfig::default()).unwrap();
        let r = scanner.scan(&input(dump_textual_ir(&reflective_app()).into_bytes()));
        assert_eq!(r.app_id, "refl");
        assert_eq!(r.reflection.as_ref().unwrap().sites.len(), 1);
        assert!(r.reflection.as_ref().unwrap().uses_reflection);
        // No models configured.
        assert!(r.renaming.is_none() && r.stringenc.is_none());
        assert_eq!(r.warnings.len(), 2);
        assert!(r.packing.is_some() && r.overloading.is_some());
    }

    #[test]
    fn deterministic_minus_timings() {
        let scanner = Scanner::new(ScanConfig::default()).unwrap();
        let inp = input(dump_textual_ir(&reflective_app()).into_bytes());
        let mut a = scanner.scan(&inp);
        let mut b = scanner.scan(&inp);
        a.timings_ms.clear();
        b.timings_ms.clear();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn unreadable_input_is_skipped() {
        let scanner = Scanner::new(ScanConfig::default()).unwrap();
        let r = scanner.scan(&input(b"PK\x03\x04garbage".to_vec()));
        assert!(r.is_skipped());
        assert!(r.packing.is_none());
        assert_eq!(ScanReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn technique_selection() {
        let cfg = ScanConfig {
            techniques: Some(vec!["reflection".into()]),
            ..Default::default()
        };
        let scanner = Scanner::new(cfg).unwrap();
        let r = scanner.scan(&input(dump_textual_ir(&reflective_app()).into_bytes()));
        assert!(r.reflection.is_some());
        assert!(r.packing.is_none() && r.overloading.is_none());
        assert!(r.warnings.is_empty());

        let cfg = ScanConfig {
            techniques: Some(vec!["nonsense".into()]),
            ..Default::default()
        };
        assert!(Scanner::new(cfg).is_err());
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let scanner = Scanner::new(ScanConfig::default()).unwrap();
        let json = scanner.scan(&input(b"junk".to_vec())).to_json();
        let keys: Vec<&str> = json
            .lines()
            .filter(|l| l.starts_with("  \""))
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..100).collect();
        for p in [1, 3, 8, 200] {
            assert_eq!(run_parallel(&items, p, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
        assert!(run_parallel(&[] as &[u8], 4, |x| *x).is_empty());
    }
}
