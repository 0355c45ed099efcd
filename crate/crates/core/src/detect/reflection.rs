//! Reflective call sites `Class.forName -> getMethod -> Method.invoke` and
//! recovery of their string arguments.

use serde::{Deserialize, Serialize};

use super::slicing::{resolve_register, SliceState};
use crate::ir::{AppModel, Instr, MemberRef, MethodDef, OpcodeClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecoveryStatus {
    Recovered,
    PartialInfo,
    Unrecovered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionSite {
    /// Method containing the pattern.
    pub method: MemberRef,
    pub forname_idx: usize,
    pub getmethod_idx: usize,
    pub invoke_idx: usize,
    pub recovered_class: Option<String>,
    pub recovered_method: Option<String>,
    pub status: RecoveryStatus,
    pub partial_info: Option<String>,
    /// The lookup used `getDeclaredMethod` rather than `getMethod`.
    pub declared_method: bool,
}

impl ReflectionSite {
    /// `owner.name` of the recovered target, when fully recovered.
    pub fn target(&self) -> Option<String> {
        match (&self.recovered_class, &self.recovered_method) {
            (Some(c), Some(m)) => Some(format!("{c}.{m}")),
            _ => None,
        }
    }
}

fn is_for_name(ins: &Instr) -> bool {
    ins.opcode == OpcodeClass::InvokeStatic
        && ins.invoked().is_some_and(|r| {
            r.owner == "java.lang.Class" && r.name == "forName" && r.descriptor.starts_with("(Ljava/lang/String;")
        })
}

fn method_lookup(ins: &Instr) -> Option<bool> {
    let r = ins.invoked()?;
    if r.owner != "java.lang.Class" {
        return None;
    }
    match r.name.as_str() {
        "getMethod" => Some(false),
        "getDeclaredMethod" => Some(true),
        _ => None,
    }
}

fn is_method_invoke(ins: &Instr) -> bool {
    ins.invoked()
        .is_some_and(|r| r.owner == "java.lang.reflect.Method" && r.name == "invoke")
}

/// Indices of the three calls for every complete pattern in `m`.
///
/// Each `forName` takes the first unused lookup after it, and that lookup
/// takes the first unused `invoke` after it.
pub fn match_patterns(m: &MethodDef) -> Vec<(usize, usize, usize, bool)> {
    let lookups: Vec<(usize, bool)> = m
        .instructions
        .iter()
        .filter_map(|i| method_lookup(i).map(|d| (i.index, d)))
        .collect();
    let invokes: Vec<usize> = m.instructions.iter().filter(|i| is_method_invoke(i)).map(|i| i.index).collect();
    let mut lookup_used = vec![false; lookups.len()];
    let mut invoke_used = vec![false; invokes.len()];
    let mut out = Vec::new();
    for f in m.instructions.iter().filter(|i| is_for_name(i)).map(|i| i.index) {
        let Some(li) = (0..lookups.len()).find(|&k| !lookup_used[k] && lookups[k].0 > f) else {
            continue;
        };
        let (g, declared) = lookups[li];
        let Some(ii) = (0..invokes.len()).find(|&k| !invoke_used[k] && invokes[k] > g) else {
            continue;
        };
        lookup_used[li] = true;
        invoke_used[ii] = true;
        out.push((f, g, invokes[ii], declared));
    }
    out
}

fn argument(m: &MethodDef, idx: usize, pos: usize) -> Option<SliceState> {
    let reg = *m.instructions[idx].operands.get(pos)?;
    Some(resolve_register(m, idx, reg))
}

/// Finds reflective call sites in every method, library code included, and
/// tries to recover the class and method names.
pub fn find_reflection_sites(app: &AppModel) -> Vec<ReflectionSite> {
    let mut sites = Vec::new();
    for class in &app.classes {
        for m in &class.methods {
            for (f, g, inv, declared) in match_patterns(m) {
                let class_arg = argument(m, f, 0);
                // getMethod(String, Class[]) on a Class receiver: name is operand 1.
                let name_arg = argument(m, g, 1);
                let recovered_class = class_arg.as_ref().and_then(|s| s.resolved_value.clone());
                let recovered_method = name_arg.as_ref().and_then(|s| s.resolved_value.clone());
                let partial_info = [&class_arg, &name_arg]
                    .into_iter()
                    .flatten()
                    .find_map(|s| s.partial_info.clone());
                let status = match (&recovered_class, &recovered_method) {
                    (Some(_), Some(_)) => RecoveryStatus::Recovered,
                    (Some(_), None) | (None, Some(_)) => RecoveryStatus::PartialInfo,
                    (None, None) if partial_info.is_some() => RecoveryStatus::PartialInfo,
                    (None, None) => RecoveryStatus::Unrecovered,
                };
                sites.push(ReflectionSite {
                    method: class.method_ref(m),
                    forname_idx: f,
                    getmethod_idx: g,
                    invoke_idx: inv,
                    recovered_class,
                    recovered_method,
                    status,
                    partial_info,
                    declared_method: declared,
                });
            }
        }
    }
    sites
}
