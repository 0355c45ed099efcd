//! Labelled corpora with known per-technique ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::apps::{build_app, names_app, rng, strings_app, AppSpec, SynthApp};

/// One app of a planned corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedApp {
    pub app_id: String,
    pub source_tag: String,
    pub spec: AppSpec,
    pub seed: u64,
}

impl PlannedApp {
    pub fn build(&self) -> SynthApp {
        build_app(&self.app_id, &self.spec, self.seed)
    }
}

/// Per-tag planted counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TagTruth {
    pub n_apps: u64,
    pub renamed: u64,
    pub overloaded: u64,
    pub encrypted: u64,
    pub reflective: u64,
    pub packed: u64,
    pub sites: u64,
    pub recoverable_sites: u64,
}

/// How many of a tag's apps carry each technique.
#[derive(Debug, Clone, Copy)]
pub struct TagPlan {
    pub tag: &'static str,
    pub apps: usize,
    pub renamed: usize,
    pub overloaded: usize,
    pub encrypted: usize,
    pub reflective: usize,
    pub packed: usize,
    /// Site `j` of app `i` is constant iff `(i + j) % unrecoverable_every != 0`.
    pub unrecoverable_every: usize,
}

pub const EVALUATION_PLAN: [TagPlan; 3] = [
    TagPlan {
        tag: "googleplay",
        apps: 20,
        renamed: 5,
        overloaded: 1,
        encrypted: 2,
        reflective: 6,
        packed: 0,
        unrecoverable_every: 4,
    },
    TagPlan {
        tag: "thirdparty",
        apps: 20,
        renamed: 9,
        overloaded: 3,
        encrypted: 5,
        reflective: 10,
        packed: 2,
        unrecoverable_every: 3,
    },
    TagPlan {
        tag: "malware",
        apps: 20,
        renamed: 14,
        overloaded: 4,
        encrypted: 11,
        reflective: 16,
        packed: 7,
        unrecoverable_every: 2,
    },
];

/// Expands plans into apps. Techniques are assigned with different
/// rotations so they overlap unevenly.
pub fn planned_corpus(plans: &[TagPlan], seed: u64) -> Vec<PlannedApp> {
    let mut out = Vec::new();
    for (t, p) in plans.iter().enumerate() {
        let rot = |i: usize, k: usize, count: usize| (i + k) % p.apps < count;
        for i in 0..p.apps {
            let sites = if rot(i, 5, p.reflective) {
                (0..1 + i % 3).map(|j| (i + j) % p.unrecoverable_every != 0).collect()
            } else {
                Vec::new()
            };
            let renamed = rot(i, 0, p.renamed);
            out.push(PlannedApp {
                app_id: format!("{}-{i:02}", p.tag),
                source_tag: p.tag.to_string(),
                spec: AppSpec {
                    renamed,
                    confusable_rate: (renamed && i % 2 == 0).then_some(40),
                    overloaded: rot(i, 3, p.overloaded),
                    encrypted_strings: rot(i, 7, p.encrypted),
                    reflection_sites: sites,
                    packer: rot(i, 11, p.packed).then_some(i + t),
                },
                seed: seed.wrapping_mul(1_000_003).wrapping_add((t * 1000 + i) as u64),
            });
        }
    }
    out
}

/// The 60-app evaluation corpus.
pub fn evaluation_corpus(seed: u64) -> Vec<PlannedApp> {
    planned_corpus(&EVALUATION_PLAN, seed)
}

pub fn ground_truth(apps: &[PlannedApp]) -> BTreeMap<String, TagTruth> {
    let mut out: BTreeMap<String, TagTruth> = BTreeMap::new();
    for a in apps {
        let t = out.entry(a.source_tag.clone()).or_default();
        let s = &a.spec;
        t.n_apps += 1;
        t.renamed += u64::from(s.renamed);
        t.overloaded += u64::from(s.overloaded);
        t.encrypted += u64::from(s.encrypted_strings);
        t.reflective += u64::from(!s.reflection_sites.is_empty());
        t.packed += u64::from(s.packer.is_some());
        t.sites += s.reflection_sites.len() as u64;
        t.recoverable_sites += s.reflection_sites.iter().filter(|&&r| r).count() as u64;
    }
    out
}

/// Apps with random specs, for training models that see every planted
/// technique.
pub fn mixed_training_corpus(n: usize, seed: u64) -> Vec<PlannedApp> {
    let r = &mut rng(seed);
    (0..n)
        .map(|i| {
            let renamed = r.gen_bool(0.5);
            let reflective = r.gen_bool(0.4);
            let n_sites = r.gen_range(1..=3);
            let spec = AppSpec {
                renamed,
                confusable_rate: (renamed && r.gen_bool(0.5)).then_some(40),
                overloaded: r.gen_bool(0.2),
                encrypted_strings: r.gen_bool(0.5),
                reflection_sites: if reflective { (0..n_sites).map(|_| r.gen_bool(0.6)).collect() } else { Vec::new() },
                packer: r.gen_bool(0.2).then(|| r.gen_range(0..6)),
            };
            PlannedApp {
                app_id: format!("train-{i:04}"),
                source_tag: "train".into(),
                spec,
                seed: r.gen(),
            }
        })
        .collect()
}

/// `per_class` natural and `per_class` obfuscated naming apps, interleaved.
pub fn naming_corpus(per_class: usize, seed: u64) -> Vec<(SynthApp, bool)> {
    (0..2 * per_class)
        .map(|i| {
            let obfuscated = i % 2 == 1;
            (names_app(&format!("names-{i:04}"), obfuscated, seed.wrapping_add(i as u64)), obfuscated)
        })
        .collect()
}

/// `per_class` plaintext and `per_class` encrypted string apps, interleaved.
pub fn strings_corpus(per_class: usize, seed: u64) -> Vec<(SynthApp, bool)> {
    (0..2 * per_class)
        .map(|i| {
            let encrypted = i % 2 == 1;
            (strings_app(&format!("strings-{i:04}"), encrypted, seed.wrapping_add(i as u64)), encrypted)
        })
        .collect()
}

/// On-disk form of written apps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Apk,
    TextualIr,
}

/// Writes each app to `dir` and returns the manifest path. Manifest lines
/// are `<tag> <file> [label]` with paths relative to `dir`.
pub fn write_corpus(dir: &Path, apps: &[(String, SynthApp, Option<String>)], format: Format) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (tag, app, label) in apps {
        let (file, bytes) = match format {
            Format::Apk => (format!("{}.apk", app.model.app_id), app.to_apk().map_err(io::Error::other)?),
            Format::TextualIr => (
                format!("{}.ir", app.model.app_id),
                app.to_textual_ir().map_err(io::Error::other)?.into_bytes(),
            ),
        };
        std::fs::write(dir.join(&file), bytes)?;
        let _ = write!(manifest, "{tag} {file}");
        if let Some(l) = label {
            let _ = write!(manifest, " {l}");
        }
        manifest.push('\n');
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest)?;
    Ok(path)
}
