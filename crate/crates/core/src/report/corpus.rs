//! Folding scan reports into per-tag corpus statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ScanReport, SCHEMA_VERSION};
use crate::detect::reflection::RecoveryStatus;

/// Positive verdicts over apps where the technique produced a verdict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub positive: u64,
    pub evaluated: u64,
}

impl Tally {
    fn add(&mut self, verdict: Option<bool>) {
        if let Some(v) = verdict {
            self.evaluated += 1;
            self.positive += u64::from(v);
        }
    }

    fn merge(&mut self, other: Tally) {
        self.positive += other.positive;
        self.evaluated += other.evaluated;
    }

    /// `None` when nothing was evaluated.
    pub fn ratio(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| self.positive as f64 / self.evaluated as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagStats {
    pub n_apps: u64,
    pub skipped: u64,
    pub renaming: Tally,
    pub overloading: Tally,
    pub stringenc: Tally,
    pub reflection: Tally,
    pub packing: Tally,
    pub renaming_ratio: Option<f64>,
    pub overloading_ratio: Option<f64>,
    pub stringenc_ratio: Option<f64>,
    pub reflection_ratio: Option<f64>,
    pub packing_ratio: Option<f64>,
    pub reflection_sites: u64,
    pub recovered_sites: u64,
    pub reflection_recovery_ratio: Option<f64>,
    /// Every recovered target with its site count.
    pub target_counts: BTreeMap<String, u64>,
    /// Most frequent targets, ties broken by name.
    pub top_reflection_targets: Vec<(String, u64)>,
}

impl TagStats {
    fn add(&mut self, r: &ScanReport) {
        self.n_apps += 1;
        if r.is_skipped() {
            self.skipped += 1;
            return;
        }
        self.renaming.add(r.renaming.as_ref().map(|d| d.verdict));
        self.overloading.add(r.overloading.as_ref().map(|d| d.flagged));
        self.stringenc.add(r.stringenc.as_ref().map(|d| d.verdict));
        self.reflection.add(r.reflection.as_ref().map(|d| d.uses_reflection));
        self.packing.add(r.packing.as_ref().map(|d| d.verdict));
        for site in r.reflection.iter().flat_map(|d| &d.sites) {
            self.reflection_sites += 1;
            if site.status == RecoveryStatus::Recovered {
                self.recovered_sites += 1;
            }
            if let Some(t) = site.target() {
                *self.target_counts.entry(t).or_default() += 1;
            }
        }
    }

    fn merge(&mut self, other: &TagStats) {
        self.n_apps += other.n_apps;
        self.skipped += other.skipped;
        self.renaming.merge(other.renaming);
        self.overloading.merge(other.overloading);
        self.stringenc.merge(other.stringenc);
        self.reflection.merge(other.reflection);
        self.packing.merge(other.packing);
        self.reflection_sites += other.reflection_sites;
        self.recovered_sites += other.recovered_sites;
        for (t, n) in &other.target_counts {
            *self.target_counts.entry(t.clone()).or_default() += n;
        }
    }

    fn finish(&mut self, top_n: usize) {
        self.renaming_ratio = self.renaming.ratio();
        self.overloading_ratio = self.overloading.ratio();
        self.stringenc_ratio = self.stringenc.ratio();
        self.reflection_ratio = self.reflection.ratio();
        self.packing_ratio = self.packing.ratio();
        self.reflection_recovery_ratio =
            (self.reflection_sites > 0).then(|| self.recovered_sites as f64 / self.reflection_sites as f64);
        self.top_reflection_targets = top_targets(&self.target_counts, top_n);
    }
}

/// The `n` highest counts, descending, ties in name order.
pub fn top_targets(counts: &BTreeMap<String, u64>, n: usize) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = counts.iter().map(|(k, c)| (k.clone(), *c)).collect();
    // Stable sort over name-ordered input keeps ties lexicographic.
    v.sort_by(|a, b| b.1.cmp(&a.1));
    v.truncate(n);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub schema_version: u32,
    pub top_n: usize,
    pub tags: BTreeMap<String, TagStats>,
}

impl CorpusReport {
    pub fn empty(top_n: usize) -> Self {
        CorpusReport {
            schema_version: SCHEMA_VERSION,
            top_n,
            tags: BTreeMap::new(),
        }
    }

    /// Combines two corpora; derived fields are recomputed.
    pub fn merge(&self, other: &CorpusReport) -> CorpusReport {
        let mut out = self.clone();
        for (tag, s) in &other.tags {
            out.tags.entry(tag.clone()).or_default().merge(s);
        }
        for s in out.tags.values_mut() {
            s.finish(out.top_n);
        }
        out
    }

    pub fn to_json(&self) -> String {
        super::canonical_json(self)
    }
}

/// Groups `reports` by source tag, in input order.
pub fn aggregate<'a, I>(reports: I, top_n: usize) -> CorpusReport
where
    I: IntoIterator<Item = &'a ScanReport>,
{
    let mut out = CorpusReport::empty(top_n);
    for r in reports {
        out.tags.entry(r.source_tag.clone()).or_default().add(r);
    }
    for s in out.tags.values_mut() {
        s.finish(top_n);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::packing::{HeuristicFlags, PackingDetection};
    use crate::detect::reflection::ReflectionSite;
    use crate::detect::renaming::{PolicyProfile, RenamingDetection};
    use crate::detect::ReflectionReport;
    use crate::ir::MemberRef;

    pub(crate) fn report(tag: &str, renamed: bool) -> ScanReport {
        let mut r = ScanReport::empty("x", tag);
        r.renaming = Some(RenamingDetection {
            verdict: renamed,
            score: 0.0,
            name_count: 1,
            policy: PolicyProfile::default(),
        });
        r.packing = Some(PackingDetection {
            matched_packers: vec![],
            heuristic_flags: HeuristicFlags::default(),
            verdict: false,
        });
        r
    }

    fn site(target: Option<(&str, &str)>) -> ReflectionSite {
        ReflectionSite {
            method: MemberRef::new("a.A", "m", "()V"),
            forname_idx: 0,
            getmethod_idx: 1,
            invoke_idx: 2,
            recovered_class: target.map(|t| t.0.to_string()),
            recovered_method: target.map(|t| t.1.to_string()),
            status: if target.is_some() {
                RecoveryStatus::Recovered
            } else {
                RecoveryStatus::Unrecovered
            },
            partial_info: None,
            declared_method: false,
        }
    }

    #[test]
    fn quarter_ratio() {
        let reports = [report("X", true), report("X", false), report("X", false), report("X", false)];
        let c = aggregate(&reports, 10);
        let x = &c.tags["X"];
        assert_eq!(x.n_apps, 4);
        assert_eq!(x.renaming_ratio, Some(0.25));
        assert_eq!(x.packing_ratio, Some(0.0));
        assert_eq!(x.stringenc_ratio, None);
    }

    #[test]
    fn skipped_apps_leave_denominators() {
        let mut skipped = report("X", true);
        skipped.skipped = Some("corrupt".into());
        let c = aggregate(&[report("X", true), skipped], 10);
        assert_eq!(c.tags["X"].renaming_ratio, Some(1.0));
        assert_eq!(c.tags["X"].skipped, 1);
    }

    #[test]
    fn top_targets_tie_rule() {
        let counts: BTreeMap<String, u64> = [("g", 3), ("h", 1), ("f", 3)].map(|(k, v)| (k.to_string(), v)).into();
        assert_eq!(top_targets(&counts, 2), [("f".to_string(), 3), ("g".to_string(), 3)]);
    }

    #[test]
    fn recovery_accounting() {
        let mut r = report("T", false);
        r.reflection = Some(ReflectionReport::new(vec![
            site(Some(("a.B", "c"))),
            site(Some(("a.B", "c"))),
            site(None),
            site(Some(("x.Y", "z"))),
        ]));
        let c = aggregate([&r], 1);
        let t = &c.tags["T"];
        assert_eq!(t.reflection_recovery_ratio, Some(0.75));
        assert_eq!(t.top_reflection_targets, [("a.B.c".to_string(), 2)]);
        assert_eq!(t.target_counts.len(), 2);
    }

    #[test]
    fn merge_matches_concatenation() {
        let a = [report("X", true), report("Y", false)];
        let b = [report("X", false)];
        let whole = aggregate(a.iter().chain(&b), 5);
        assert_eq!(aggregate(&a, 5).merge(&aggregate(&b, 5)), whole);
        let back: CorpusReport = serde_json::from_str(&whole.to_json()).unwrap();
        assert_eq!(back, whole);
    }
}
