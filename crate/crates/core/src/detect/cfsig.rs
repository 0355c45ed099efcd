//! Control-flow signatures and their compression distance.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;

use flate2::write::DeflateEncoder;
use flate2::Compression;

use crate::ir::{MethodDef, OpcodeClass};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("empty signature")]
pub struct EmptyInput;

/// Start indices of the basic blocks of `m`, ascending.
pub fn block_leaders(m: &MethodDef) -> Vec<usize> {
    let n = m.instructions.len();
    let mut leaders = BTreeSet::new();
    if n > 0 {
        leaders.insert(0);
    }
    for ins in &m.instructions {
        if let Some(t) = ins.branch_target {
            leaders.insert(t);
        }
        if ins.opcode.is_terminator() && ins.index + 1 < n {
            leaders.insert(ins.index + 1);
        }
    }
    leaders.into_iter().filter(|&l| l < n).collect()
}

fn token(op: OpcodeClass, arity: usize) -> Option<String> {
    let t = match op {
        op if op.is_invoke() => return Some(format!("P{}", arity.min(9))),
        OpcodeClass::FieldWrite | OpcodeClass::StaticWrite => "F1",
        OpcodeClass::FieldRead | OpcodeClass::StaticRead => "F0",
        OpcodeClass::Branch => "I",
        OpcodeClass::Goto => "G",
        OpcodeClass::Return => "R",
        _ => return None,
    };
    Some(t.to_string())
}

/// `B[...]` per basic block with one token per structural instruction.
/// Blocks without tokens are omitted.
pub fn cf_signature(m: &MethodDef) -> String {
    let leaders = block_leaders(m);
    let mut out = String::new();
    for (i, &start) in leaders.iter().enumerate() {
        let end = leaders.get(i + 1).copied().unwrap_or(m.instructions.len());
        let body: String = m.instructions[start..end]
            .iter()
            .filter_map(|ins| token(ins.opcode, ins.operands.len()))
            .collect();
        if !body.is_empty() {
            let _ = write!(out, "B[{body}]");
        }
    }
    out
}

/// Level 1 keeps the self-distance of short signatures small: higher levels
/// spend extra header bytes on the doubled input.
const NCD_LEVEL: u32 = 1;

fn compressed_len(data: &[u8]) -> usize {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(NCD_LEVEL));
    enc.write_all(data).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail").len()
}

/// Normalized compression distance under raw deflate.
///
/// The concatenation is compressed in both orders and the smaller length is
/// used, which keeps the distance symmetric.
pub fn cfs_distance(s1: &str, s2: &str) -> Result<f64, EmptyInput> {
    if s1.is_empty() || s2.is_empty() {
        return Err(EmptyInput);
    }
    let c1 = compressed_len(s1.as_bytes());
    let c2 = compressed_len(s2.as_bytes());
    let c12 = compressed_len(format!("{s1}{s2}").as_bytes());
    let c21 = compressed_len(format!("{s2}{s1}").as_bytes());
    let joint = c12.min(c21) as f64;
    let d = (joint - c1.min(c2) as f64) / c1.max(c2) as f64;
    Ok(d.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Instr, MemberRef};

    fn method(ops: &[Instr]) -> MethodDef {
        let mut m = MethodDef::new("m", "()V", 4);
        for i in ops {
            m.push(i.clone());
        }
        m
    }

    fn call(regs: &[u32]) -> Instr {
        Instr::invoke(OpcodeClass::InvokeDirect, regs.to_vec(), MemberRef::new("java.lang.Object", "<init>", "()V"))
    }

    #[test]
    fn single_return() {
        assert_eq!(cf_signature(&method(&[Instr::new(OpcodeClass::Return, [])])), "B[R]");
        assert_eq!(cf_signature(&method(&[])), "");
    }

    #[test]
    fn arity_is_capped() {
        let m = method(&[call(&[0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2]), Instr::new(OpcodeClass::Return, [])]);
        assert_eq!(cf_signature(&m), "B[P9R]");
    }

    #[test]
    fn leaders_include_targets_and_fallthroughs() {
        let m = method(&[
            Instr::jump(OpcodeClass::Branch, [0], 2),
            Instr::new(OpcodeClass::ArithOp, [0]),
            Instr::new(OpcodeClass::Return, []),
        ]);
        assert_eq!(block_leaders(&m), [0, 1, 2]);
        // Block 1 has no structural token.
        assert_eq!(cf_signature(&m), "B[I]B[R]");
    }

    #[test]
    fn identical_signatures_are_close() {
        // Measured values for the fixture signatures.
        for (s, want) in [("B[R]", 1.0 / 6.0), ("B[P1F1F0F0R]", 2.0 / 14.0), ("B[P1F1]B[F0I]B[F0F0G]B[R]", 2.0 / 23.0)] {
            let d = cfs_distance(s, s).unwrap();
            assert!(d <= 0.2, "{s}: {d}");
            assert!((d - want).abs() < 1e-12, "{s}: {d}");
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(cfs_distance("", "B[R]"), Err(EmptyInput));
        assert_eq!(cfs_distance("B[R]", ""), Err(EmptyInput));
    }
}
