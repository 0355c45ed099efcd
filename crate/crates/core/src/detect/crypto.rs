//! Ranking of candidate decryption functions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::slicing::resolve_register;
use crate::config::CryptoConfig;
use crate::ir::{AppModel, MemberRef, MethodDef, OpcodeClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CryptoFnReport {
    pub method: MemberRef,
    pub bitloop_ratio: f64,
    pub jce_calls: u64,
    pub strop_count: u64,
    pub enc_param_freq: u64,
    pub score: f64,
}

const JCE_PREFIXES: [&str; 2] = ["javax.crypto.", "java.security."];
const STRING_TYPES: [&str; 3] = ["java.lang.String", "java.lang.StringBuilder", "java.lang.Character"];

/// `(#BitOp + #backward jumps) / #instructions`; a jump is backward when its
/// target is at or before itself.
pub fn bitloop_ratio(m: &MethodDef) -> f64 {
    if m.instructions.is_empty() {
        return 0.0;
    }
    let hits = m
        .instructions
        .iter()
        .filter(|i| {
            i.opcode == OpcodeClass::BitOp
                || matches!(i.opcode, OpcodeClass::Branch | OpcodeClass::Goto)
                    && i.branch_target.is_some_and(|t| t <= i.index)
        })
        .count();
    hits as f64 / m.instructions.len() as f64
}

pub fn jce_calls(m: &MethodDef) -> u64 {
    m.instructions
        .iter()
        .filter_map(|i| i.invoked())
        .filter(|r| JCE_PREFIXES.iter().any(|p| r.owner.starts_with(p)))
        .count() as u64
}

pub fn strop_count(m: &MethodDef) -> u64 {
    m.instructions
        .iter()
        .filter_map(|i| i.invoked())
        .filter(|r| STRING_TYPES.contains(&r.owner.as_str()))
        .count() as u64
}

/// Call sites, anywhere in the app, passing an encrypted-looking string
/// constant to each method. A call site counts once however many of its
/// arguments qualify.
pub fn encrypted_argument_sites(app: &AppModel, is_encrypted: &dyn Fn(&str) -> bool) -> HashMap<MemberRef, u64> {
    let mut out = HashMap::new();
    for m in app.classes.iter().flat_map(|c| &c.methods) {
        for ins in &m.instructions {
            let Some(target) = ins.invoked() else { continue };
            let hit = ins.operands.iter().any(|&reg| {
                resolve_register(m, ins.index, reg)
                    .resolved_value
                    .is_some_and(|v| is_encrypted(&v))
            });
            if hit {
                *out.entry(target.clone()).or_insert(0) += 1;
            }
        }
    }
    out
}

/// Scores every non-library method with code and returns those at or above
/// the threshold, best first. Each feature is divided by its maximum over
/// the app before weighting.
pub fn analyze_crypto_functions(
    app: &AppModel,
    is_encrypted: &dyn Fn(&str) -> bool,
    cfg: &CryptoConfig,
) -> Vec<CryptoFnReport> {
    let enc = encrypted_argument_sites(app, is_encrypted);
    let mut reports: Vec<CryptoFnReport> = app
        .app_classes()
        .flat_map(|c| c.methods.iter().map(move |m| (c, m)))
        .filter(|(_, m)| !m.instructions.is_empty())
        .map(|(c, m)| {
            let method = c.method_ref(m);
            CryptoFnReport {
                bitloop_ratio: bitloop_ratio(m),
                jce_calls: jce_calls(m),
                strop_count: strop_count(m),
                enc_param_freq: enc.get(&method).copied().unwrap_or(0),
                method,
                score: 0.0,
            }
        })
        .collect();

    let max = |f: &dyn Fn(&CryptoFnReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
    let maxima = [
        max(&|r| r.bitloop_ratio),
        max(&|r| r.jce_calls as f64),
        max(&|r| r.strop_count as f64),
        max(&|r| r.enc_param_freq as f64),
    ];
    let norm = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    for r in &mut reports {
        let features = [
            r.bitloop_ratio,
            r.jce_calls as f64,
            r.strop_count as f64,
            r.enc_param_freq as f64,
        ];
        r.score = features
            .iter()
            .zip(maxima)
            .zip(cfg.weights)
            .map(|((v, m), w)| w * norm(*v, m))
            .sum();
    }
    reports.retain(|r| r.score >= cfg.threshold);
    reports.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.method.cmp(&b.method)));
    reports
}
