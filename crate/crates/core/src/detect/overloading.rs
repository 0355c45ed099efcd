//! Excessive-overloading detection over same-name method groups.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::cfsig::{cf_signature, cfs_distance};
use crate::config::OverloadConfig;
use crate::ir::{parameter_count, AppModel, MemberRef, MethodDef, OpcodeClass};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("method has no instructions")]
pub struct EmptyMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeature {
    pub first: String,
    pub second: String,
    pub size_sim: f64,
    pub invoke_overlap: f64,
    pub var_overlap: f64,
    pub same_return: u8,
    pub cfs_distance: f64,
}

impl PairFeature {
    /// Unweighted mean of the five similarities.
    pub fn composite(&self) -> f64 {
        (self.size_sim + self.invoke_overlap + self.var_overlap + f64::from(self.same_return) + 1.0
            - self.cfs_distance)
            / 5.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverloadGroup {
    pub class: String,
    pub name: String,
    pub size: usize,
    pub arity_variants: usize,
    pub pair_scores: Vec<PairFeature>,
    /// Mean composite over `pair_scores`; absent when no pair has code.
    pub mean_composite: Option<f64>,
    pub suspicious: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverloadReport {
    pub groups: Vec<OverloadGroup>,
    pub flagged: bool,
}

/// `min(|f1|, |f2|) / max(|f1|, |f2|)` over instruction counts.
pub fn function_size_sim(f1: &MethodDef, f2: &MethodDef) -> Result<f64, EmptyMethod> {
    let (a, b) = (f1.instructions.len(), f2.instructions.len());
    if a == 0 || b == 0 {
        return Err(EmptyMethod);
    }
    Ok(a.min(b) as f64 / a.max(b) as f64)
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn invoked(m: &MethodDef) -> BTreeSet<&MemberRef> {
    m.instructions.iter().filter_map(|i| i.invoked()).collect()
}

fn fields_touched(m: &MethodDef) -> BTreeSet<&MemberRef> {
    m.instructions
        .iter()
        .filter(|i| {
            matches!(
                i.opcode,
                OpcodeClass::FieldRead | OpcodeClass::FieldWrite | OpcodeClass::StaticRead | OpcodeClass::StaticWrite
            )
        })
        .filter_map(|i| i.target.as_ref())
        .collect()
}

/// Distance between two signatures; a token-free signature is only close
/// to another token-free one.
fn signature_distance(s1: &str, s2: &str) -> f64 {
    match (s1.is_empty(), s2.is_empty()) {
        (true, true) => 0.0,
        (false, false) => cfs_distance(s1, s2).unwrap_or(1.0),
        _ => 1.0,
    }
}

pub fn pair_feature(f1: &MethodDef, f2: &MethodDef) -> Result<PairFeature, EmptyMethod> {
    Ok(PairFeature {
        first: f1.proto.clone(),
        second: f2.proto.clone(),
        size_sim: function_size_sim(f1, f2)?,
        invoke_overlap: jaccard(&invoked(f1), &invoked(f2)),
        var_overlap: jaccard(&fields_touched(f1), &fields_touched(f2)),
        same_return: u8::from(f1.return_type() == f2.return_type()),
        cfs_distance: signature_distance(&cf_signature(f1), &cf_signature(f2)),
    })
}

pub fn detect_overloading(app: &AppModel, cfg: &OverloadConfig) -> OverloadReport {
    let mut groups = Vec::new();
    for class in app.app_classes() {
        let mut by_name: BTreeMap<&str, Vec<&MethodDef>> = BTreeMap::new();
        for m in class.methods.iter().filter(|m| !m.is_constructor()) {
            let members = by_name.entry(m.name.as_str()).or_default();
            if !members.iter().any(|o| o.proto == m.proto) {
                members.push(m);
            }
        }
        for (name, members) in by_name.into_iter().filter(|(_, v)| v.len() >= 2) {
            let with_code: Vec<&MethodDef> = members.iter().copied().filter(|m| !m.instructions.is_empty()).collect();
            let mut pair_scores = Vec::new();
            for (i, a) in with_code.iter().enumerate() {
                for b in &with_code[i + 1..] {
                    pair_scores.extend(pair_feature(a, b).ok());
                }
            }
            let mean_composite = (!pair_scores.is_empty())
                .then(|| pair_scores.iter().map(PairFeature::composite).sum::<f64>() / pair_scores.len() as f64);
            let arity_variants = members
                .iter()
                .map(|m| parameter_count(&m.proto))
                .collect::<BTreeSet<_>>()
                .len();
            groups.push(OverloadGroup {
                class: class.name.clone(),
                name: name.to_string(),
                size: members.len(),
                arity_variants,
                suspicious: mean_composite.is_some_and(|c| c < cfg.composite_threshold),
                pair_scores,
                mean_composite,
            });
        }
    }
    let flagged = groups.iter().any(|g| g.suspicious || g.size >= cfg.group_size_floor);
    OverloadReport { groups, flagged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{ClassDef, Instr, Origin};

    fn sized(n: usize) -> MethodDef {
        let mut m = MethodDef::new("f", "()V", 1);
        for _ in 0..n {
            m.push(Instr::new(OpcodeClass::Return, []));
        }
        m
    }

    #[test]
    fn size_similarity() {
        assert_eq!(function_size_sim(&sized(10), &sized(20)), Ok(0.5));
        assert_eq!(function_size_sim(&sized(7), &sized(7)), Ok(1.0));
        assert_eq!(function_size_sim(&sized(1), &sized(1000)), Ok(0.001));
        assert_eq!(function_size_sim(&sized(0), &sized(3)), Err(EmptyMethod));
    }

    fn print_info(proto: &str) -> MethodDef {
        let mut m = MethodDef::new("printInfo", proto, 3);
        m.push(Instr::new(OpcodeClass::StaticRead, [0]).with_target(MemberRef::new(
            "java.lang.System",
            "out",
            "Ljava/io/PrintStream;",
        )));
        m.push(Instr::invoke(
            OpcodeClass::InvokeVirtual,
            [0, 1],
            MemberRef::new("java.io.PrintStream", "println", "(Ljava/lang/Object;)V"),
        ));
        m.push(Instr::new(OpcodeClass::Return, []));
        m
    }

    fn app_of(methods: Vec<MethodDef>) -> AppModel {
        let mut c = ClassDef::new("com.example.Printer", "java.lang.Object");
        c.methods = methods;
        let mut app = AppModel::new("t", Origin::TextualIr);
        app.classes.push(c);
        app
    }

    #[test]
    fn legitimate_overload_passes() {
        let r = detect_overloading(&app_of(vec![print_info("(F)V"), print_info("([F)V")]), &Default::default());
        assert_eq!(r.groups.len(), 1);
        let g = &r.groups[0];
        assert_eq!(g.arity_variants, 1);
        let p = &g.pair_scores[0];
        assert!(p.invoke_overlap > 0.0);
        assert_eq!(p.same_return, 1);
        assert!(!g.suspicious, "composite {:?}", g.mean_composite);
        assert!(!r.flagged);
    }

    #[test]
    fn size_floor_flags_large_groups() {
        let methods = (0..12)
            .map(|i| {
                let mut m = MethodDef::new("a", format!("({})V", "I".repeat(i)), 13);
                m.push(Instr::invoke(
                    OpcodeClass::InvokeStatic,
                    [],
                    MemberRef::new(format!("x.C{i}"), "run", "()V"),
                ));
                m.push(Instr::new(OpcodeClass::Return, []));
                m
            })
            .collect();
        let r = detect_overloading(&app_of(methods), &Default::default());
        assert_eq!(r.groups[0].size, 12);
        assert_eq!(r.groups[0].arity_variants, 12);
        assert!(r.flagged);
    }

    #[test]
    fn unrelated_overloads_are_suspicious() {
        let mut a = MethodDef::new("a", "(I)I", 4);
        a.push(Instr::jump(OpcodeClass::Branch, [0], 3));
        for _ in 0..6 {
            a.push(Instr::new(OpcodeClass::BitOp, [0, 0]));
        }
        a.push(Instr::new(OpcodeClass::Return, [0]));
        let mut b = MethodDef::new("a", "(Ljava/lang/String;)V", 4);
        for i in 0..20 {
            b.push(Instr::new(OpcodeClass::FieldWrite, [0, 1]).with_target(MemberRef::new("x.Y", format!("f{i}"), "I")));
            b.push(Instr::invoke(OpcodeClass::InvokeStatic, [0, 1, 2], MemberRef::new("x.Z", format!("g{i}"), "(II)V")));
        }
        b.push(Instr::new(OpcodeClass::Return, []));
        let r = detect_overloading(&app_of(vec![a, b]), &Default::default());
        assert!(r.groups[0].suspicious, "composite {:?}", r.groups[0].mean_composite);
        assert!(r.flagged);
    }

    #[test]
    fn no_duplicates_no_groups() {
        let mut m2 = print_info("(F)V");
        m2.name = "other".into();
        let r = detect_overloading(&app_of(vec![print_info("(F)V"), m2]), &Default::default());
        assert!(r.groups.is_empty());
        assert!(!r.flagged);
    }
}
