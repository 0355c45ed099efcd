//! Intra-procedural backward slicing and constant-string simulation.
//!
//! Reaching definitions are computed over the method's control-flow graph,
//! restricted to instructions that precede the use site. A value resolves
//! only when every reaching definition simulates to the same string.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::ir::{Instr, MemberRef, MethodDef, OpcodeClass};

const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceState {
    pub criterion_register: u32,
    pub use_index: usize,
    /// Contributing instruction indices, strictly ascending, all `< use_index`.
    pub slice: Vec<usize>,
    pub resolved_value: Option<String>,
    /// What blocked resolution, usually the producing method reference.
    pub partial_info: Option<String>,
}

const BUILDERS: [&str; 2] = ["java.lang.StringBuilder", "java.lang.StringBuffer"];

/// Builder methods that read but never modify the receiver.
const BUILDER_READERS: [&str; 10] = [
    "toString",
    "length",
    "charAt",
    "indexOf",
    "lastIndexOf",
    "substring",
    "capacity",
    "subSequence",
    "equals",
    "hashCode",
];

/// An invoke that mutates a `StringBuilder`/`StringBuffer` held in `reg`.
fn is_builder_mutation(ins: &Instr, reg: u32) -> bool {
    match ins.invoked() {
        Some(r) => {
            ins.opcode != OpcodeClass::InvokeStatic
                && ins.operands.first() == Some(&reg)
                && BUILDERS.contains(&r.owner.as_str())
                && !BUILDER_READERS.contains(&r.name.as_str())
        }
        None => false,
    }
}

fn defines(ins: &Instr, reg: u32) -> bool {
    ins.defined_register() == Some(reg) || is_builder_mutation(ins, reg)
}

struct Cfg<'m> {
    m: &'m MethodDef,
    preds: Vec<Vec<usize>>,
    /// Instructions at or beyond this index are invisible.
    limit: usize,
}

impl<'m> Cfg<'m> {
    fn new(m: &'m MethodDef, limit: usize) -> Self {
        let n = m.instructions.len();
        let mut preds = vec![Vec::new(); n];
        for (i, ins) in m.instructions.iter().enumerate() {
            if i + 1 < n && !matches!(ins.opcode, OpcodeClass::Goto | OpcodeClass::Return) {
                preds[i + 1].push(i);
            }
            if let Some(t) = ins.branch_target.filter(|&t| t < n) {
                if t != i + 1 || ins.opcode == OpcodeClass::Goto {
                    preds[t].push(i);
                }
            }
        }
        Cfg { m, preds, limit }
    }

    /// Definitions of `reg` reaching the point just before `point`, plus
    /// whether some path reaches method entry without a definition.
    fn reaching_defs(&self, point: usize, reg: u32) -> (BTreeSet<usize>, bool) {
        let mut defs = BTreeSet::new();
        let mut entry = point == 0;
        let mut seen = HashSet::new();
        let mut stack: Vec<usize> = self.preds_of(point).collect();
        while let Some(q) = stack.pop() {
            if !seen.insert(q) {
                continue;
            }
            if defines(&self.m.instructions[q], reg) {
                defs.insert(q);
                continue;
            }
            if q == 0 {
                entry = true;
            }
            stack.extend(self.preds_of(q));
        }
        (defs, entry)
    }

    fn preds_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.preds
            .get(i)
            .into_iter()
            .flatten()
            .copied()
            .filter(move |&p| p < self.limit)
    }

    /// Registers read by definition `d` of `reg`, each at point `d`.
    fn def_inputs(&self, d: usize, reg: u32) -> (Vec<(u32, usize)>, Option<usize>) {
        let ins = &self.m.instructions[d];
        match ins.opcode {
            OpcodeClass::Move => (ins.operands.get(1).map(|&s| (s, d)).into_iter().collect(), None),
            OpcodeClass::CheckCast => (vec![(reg, d)], None),
            OpcodeClass::MoveResult => match d.checked_sub(1).map(|k| &self.m.instructions[k]) {
                Some(call) if call.opcode.is_invoke() => {
                    (call.operands.iter().map(|&o| (o, d - 1)).collect(), Some(d - 1))
                }
                _ => (Vec::new(), None),
            },
            op if op.is_invoke() => (ins.operands.iter().map(|&o| (o, d)).collect(), None),
            _ => (Vec::new(), None),
        }
    }
}

/// Collects the def-use closure of `reg` as read by instruction `use_idx`.
pub fn backward_slice(m: &MethodDef, use_idx: usize, reg: u32) -> SliceState {
    let mut state = SliceState {
        criterion_register: reg,
        use_index: use_idx,
        slice: Vec::new(),
        resolved_value: None,
        partial_info: None,
    };
    if use_idx >= m.instructions.len() || reg >= m.register_count {
        return state;
    }
    let cfg = Cfg::new(m, use_idx);
    let mut slice = BTreeSet::new();
    let mut queries = HashSet::new();
    let mut work = vec![(reg, use_idx)];
    while let Some((r, point)) = work.pop() {
        if !queries.insert((r, point)) {
            continue;
        }
        for d in cfg.reaching_defs(point, r).0 {
            if slice.insert(d) {
                let (inputs, call) = cfg.def_inputs(d, r);
                slice.extend(call);
                work.extend(inputs);
            }
        }
    }
    state.slice = slice.into_iter().collect();
    state
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Str(String),
    Int(i64),
    Opaque(Option<String>),
}

struct Sim<'a, 'm> {
    cfg: &'a Cfg<'m>,
    allowed: &'a HashSet<usize>,
    memo: HashMap<(u32, usize), Option<Val>>,
    depth: usize,
}

impl Sim<'_, '_> {
    fn eval(&mut self, reg: u32, point: usize) -> Val {
        match self.memo.get(&(reg, point)) {
            Some(Some(v)) => return v.clone(),
            Some(None) => return Val::Opaque(Some("loop-carried value".into())),
            None => {}
        }
        if self.depth >= MAX_DEPTH {
            return Val::Opaque(Some("slice too deep".into()));
        }
        self.memo.insert((reg, point), None);
        self.depth += 1;
        let v = self.eval_uncached(reg, point);
        self.depth -= 1;
        self.memo.insert((reg, point), Some(v.clone()));
        v
    }

    fn eval_uncached(&mut self, reg: u32, point: usize) -> Val {
        let (defs, entry) = self.cfg.reaching_defs(point, reg);
        if defs.is_empty() {
            return Val::Opaque(None);
        }
        let values: Vec<Val> = defs.iter().map(|&d| self.eval_def(d, reg)).collect();
        if values.len() == 1 && !entry {
            return values.into_iter().next().unwrap_or(Val::Opaque(None));
        }
        if !entry && values.iter().all(|v| matches!(v, Val::Str(_)) && *v == values[0]) {
            return values[0].clone();
        }
        Val::Opaque(Some(format!("{} reaching definitions disagree", defs.len() + usize::from(entry))))
    }

    fn eval_def(&mut self, d: usize, reg: u32) -> Val {
        if !self.allowed.contains(&d) {
            return Val::Opaque(None);
        }
        let ins = &self.cfg.m.instructions[d];
        match ins.opcode {
            OpcodeClass::ConstString => Val::Str(ins.string_literal().unwrap_or_default().to_string()),
            OpcodeClass::ConstNumeric => match ins.literal {
                Some(crate::ir::Literal::Int(n)) => Val::Int(n),
                _ => Val::Opaque(None),
            },
            OpcodeClass::Move => match ins.operands.get(1) {
                Some(&src) => self.eval(src, d),
                None => Val::Opaque(None),
            },
            OpcodeClass::CheckCast => self.eval(reg, d),
            OpcodeClass::MoveResult => match d.checked_sub(1) {
                Some(k) if self.cfg.m.instructions[k].opcode.is_invoke() && self.allowed.contains(&k) => {
                    self.eval_call_result(k)
                }
                _ => Val::Opaque(None),
            },
            op if op.is_invoke() => self.eval_builder_update(d),
            _ => Val::Opaque(Some(match &ins.target {
                Some(t) => t.to_string(),
                None => format!("{} at {d}", ins.opcode),
            })),
        }
    }

    fn args(&mut self, k: usize) -> Result<Vec<Val>, Val> {
        let operands = self.cfg.m.instructions[k].operands.clone();
        let mut out = Vec::with_capacity(operands.len());
        for o in operands {
            match self.eval(o, k) {
                v @ Val::Opaque(_) => return Err(v),
                v => out.push(v),
            }
        }
        Ok(out)
    }

    fn eval_call_result(&mut self, k: usize) -> Val {
        let Some(r) = self.cfg.m.instructions[k].target.clone() else {
            return Val::Opaque(None);
        };
        if BUILDERS.contains(&r.owner.as_str()) && r.name == "append" {
            // append returns its receiver.
            return self.eval_builder_update(k);
        }
        if !is_simulated(&r) {
            return Val::Opaque(Some(r.to_string()));
        }
        let args = match self.args(k) {
            Ok(a) => a,
            Err(v) => return v,
        };
        let is_static = self.cfg.m.instructions[k].opcode == OpcodeClass::InvokeStatic;
        let out = match (r.owner.as_str(), r.name.as_str(), args.as_slice()) {
            ("java.lang.String", "concat", [Val::Str(a), Val::Str(b)]) => Some(format!("{a}{b}")),
            ("java.lang.String", "valueOf", [v]) if is_static => render(v, &r.descriptor),
            ("java.lang.String", "trim", [Val::Str(s)]) => Some(s.trim_matches(|c| c <= ' ').to_string()),
            ("java.lang.String", "toLowerCase", [Val::Str(s)]) => Some(s.to_lowercase()),
            ("java.lang.String", "toUpperCase", [Val::Str(s)]) => Some(s.to_uppercase()),
            ("java.lang.String", "toString" | "intern", [Val::Str(s)]) => Some(s.clone()),
            (owner, "toString", [Val::Str(s)]) if BUILDERS.contains(&owner) => Some(s.clone()),
            _ => None,
        };
        out.map_or_else(|| Val::Opaque(Some(r.to_string())), Val::Str)
    }

    /// New builder contents after a mutating call at `d`.
    fn eval_builder_update(&mut self, d: usize) -> Val {
        let Some(r) = self.cfg.m.instructions[d].target.clone() else {
            return Val::Opaque(None);
        };
        if r.name == "<init>" {
            if parameter_types(&r.descriptor).first().is_some_and(|t| t == "I") {
                return Val::Str(String::new());
            }
            let operands = &self.cfg.m.instructions[d].operands;
            return match operands.get(1).copied() {
                None => Val::Str(String::new()),
                Some(src) => match self.eval(src, d) {
                    Val::Str(s) => Val::Str(s),
                    Val::Opaque(p) => Val::Opaque(p),
                    Val::Int(_) => Val::Opaque(Some(r.to_string())),
                },
            };
        }
        if r.name != "append" {
            return Val::Opaque(Some(r.to_string()));
        }
        match self.args(d) {
            Ok(args) => match args.as_slice() {
                [Val::Str(recv), v] => match render(v, &r.descriptor) {
                    Some(s) => Val::Str(format!("{recv}{s}")),
                    None => Val::Opaque(Some(r.to_string())),
                },
                _ => Val::Opaque(Some(r.to_string())),
            },
            Err(v) => v,
        }
    }
}

fn is_simulated(r: &MemberRef) -> bool {
    match r.owner.as_str() {
        "java.lang.String" => matches!(
            r.name.as_str(),
            "concat" | "valueOf" | "trim" | "toLowerCase" | "toUpperCase" | "toString" | "intern"
        ),
        o if BUILDERS.contains(&o) => r.name == "toString",
        _ => false,
    }
}

fn parameter_types(desc: &str) -> Vec<String> {
    let params = desc
        .strip_prefix('(')
        .and_then(|d| d.split_once(')'))
        .map(|(p, _)| p)
        .unwrap_or("");
    let mut out = Vec::new();
    let mut rest = params;
    while !rest.is_empty() {
        let dims = rest.len() - rest.trim_start_matches('[').len();
        let body = &rest[dims..];
        let len = if body.starts_with('L') {
            body.find(';').map_or(body.len(), |i| i + 1)
        } else {
            1.min(body.len())
        };
        out.push(rest[..dims + len].to_string());
        rest = &rest[dims + len..];
    }
    out
}

/// Renders a simulated argument the way `valueOf`/`append` would.
fn render(v: &Val, descriptor: &str) -> Option<String> {
    let ty = parameter_types(descriptor).first().cloned().unwrap_or_default();
    match (v, ty.as_str()) {
        (Val::Str(s), "Ljava/lang/String;" | "Ljava/lang/Object;" | "Ljava/lang/CharSequence;") => Some(s.clone()),
        (Val::Int(n), "I" | "J" | "S" | "B") => Some(n.to_string()),
        (Val::Int(n), "C") => u32::try_from(*n).ok().and_then(char::from_u32).map(String::from),
        (Val::Int(n), "Z") => Some((*n != 0).to_string()),
        _ => None,
    }
}

/// Abstractly executes the instructions of `s.slice` to compute the value of
/// the criterion register. Definitions outside the slice are treated as
/// unknown.
pub fn simulate_slice(m: &MethodDef, s: &SliceState) -> SliceState {
    let mut out = s.clone();
    out.resolved_value = None;
    out.partial_info = None;
    if s.use_index >= m.instructions.len() || s.criterion_register >= m.register_count {
        return out;
    }
    let cfg = Cfg::new(m, s.use_index);
    let allowed: HashSet<usize> = s.slice.iter().copied().collect();
    let mut sim = Sim {
        cfg: &cfg,
        allowed: &allowed,
        memo: HashMap::new(),
        depth: 0,
    };
    match sim.eval(s.criterion_register, s.use_index) {
        Val::Str(v) => out.resolved_value = Some(v),
        Val::Int(n) => out.partial_info = Some(format!("numeric constant {n}")),
        Val::Opaque(p) => out.partial_info = p,
    }
    out
}

/// [`backward_slice`] followed by [`simulate_slice`].
pub fn resolve_register(m: &MethodDef, use_idx: usize, reg: u32) -> SliceState {
    simulate_slice(m, &backward_slice(m, use_idx, reg))
}
