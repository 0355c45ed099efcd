//! Immutable app / bytecode intermediate representation.
//!
//! Every detector works on an [`AppModel`]: the file inventory of an APK plus
//! the classes recovered from its DEX files. Dalvik opcodes are collapsed into
//! [`OpcodeClass`] groups, which is all the detectors need.

mod text;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use text::{dump_textual_ir, load_textual_ir, TextIrError};

/// Bytes of a file considered when computing its entropy.
pub const ENTROPY_WINDOW: usize = 64 * 1024;

/// Where an [`AppModel`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    DexParsed,
    TextualIr,
}

/// IR of one application.
#[derive(Debug, Clone, PartialEq)]
pub struct AppModel {
    pub app_id: String,
    pub file_entries: Vec<FileEntry>,
    pub classes: Vec<ClassDef>,
    pub origin: Origin,
}

impl AppModel {
    pub fn new(app_id: impl Into<String>, origin: Origin) -> Self {
        AppModel {
            app_id: app_id.into(),
            file_entries: Vec::new(),
            classes: Vec::new(),
            origin,
        }
    }

    pub fn class(&self, name: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Looks up an app-defined method. `None` means the reference is external.
    pub fn resolve_method(&self, r: &MemberRef) -> Option<&MethodDef> {
        self.class(&r.owner)?
            .methods
            .iter()
            .find(|m| m.name == r.name && m.proto == r.descriptor)
    }

    /// Classes that are not third-party library code.
    pub fn app_classes(&self) -> impl Iterator<Item = &ClassDef> {
        self.classes.iter().filter(|c| !c.is_library)
    }

    /// Checks the structural invariants of the model.
    pub fn validate(&self) -> Result<(), InvariantError> {
        let mut seen = HashSet::new();
        for class in &self.classes {
            if !seen.insert(class.name.as_str()) {
                return Err(InvariantError::DuplicateClass(class.name.clone()));
            }
            if let Some(f) = class.fields.iter().find(|f| !is_type_descriptor(&f.type_desc)) {
                return Err(InvariantError::FieldType {
                    class: class.name.clone(),
                    field: f.name.clone(),
                });
            }
            for method in &class.methods {
                method.validate().map_err(|reason| InvariantError::Method {
                    class: class.name.clone(),
                    method: method.name.clone(),
                    reason,
                })?;
            }
        }
        for file in &self.file_entries {
            if file.path.is_empty() {
                return Err(InvariantError::EmptyPath);
            }
            if !(0.0..=8.0).contains(&file.entropy) {
                return Err(InvariantError::EntropyRange(file.path.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvariantError {
    #[error("duplicate class name `{0}`")]
    DuplicateClass(String),
    #[error("{class}.{field}: invalid type descriptor")]
    FieldType { class: String, field: String },
    #[error("empty file path")]
    EmptyPath,
    #[error("entropy of `{0}` outside [0, 8]")]
    EntropyRange(String),
    #[error("{class}.{method}: {reason}")]
    Method {
        class: String,
        method: String,
        reason: String,
    },
}

/// One entry of the APK archive.
#[derive(Debug, Clone, PartialEq)]
pub struct FileEntry {
    pub path: String,
    pub size_bytes: u64,
    /// Shannon entropy in bits per byte of the first [`ENTROPY_WINDOW`] bytes.
    pub entropy: f64,
}

impl FileEntry {
    pub fn from_bytes(path: impl Into<String>, size_bytes: u64, data: &[u8]) -> Self {
        FileEntry {
            path: path.into(),
            size_bytes,
            entropy: shannon_entropy(&data[..data.len().min(ENTROPY_WINDOW)]),
        }
    }
}

/// Shannon entropy of `data` in bits per byte. Empty input has entropy 0.
pub fn shannon_entropy(data: &[u8]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut counts = [0u64; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    let n = data.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.clamp(0.0, 8.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDef {
    /// Java binary name, e.g. `com.example.Foo`.
    pub name: String,
    /// `None` only for `java.lang.Object` itself.
    pub superclass: Option<String>,
    pub fields: Vec<FieldDef>,
    pub methods: Vec<MethodDef>,
    pub is_library: bool,
}

impl ClassDef {
    pub fn new(name: impl Into<String>, superclass: impl Into<String>) -> Self {
        ClassDef {
            name: name.into(),
            superclass: Some(superclass.into()),
            fields: Vec::new(),
            methods: Vec::new(),
            is_library: false,
        }
    }

    /// Last dot-separated segment of the class name.
    pub fn simple_name(&self) -> &str {
        self.name.rsplit('.').next().unwrap_or(&self.name)
    }

    pub fn method_ref(&self, m: &MethodDef) -> MemberRef {
        MemberRef::new(self.name.clone(), m.name.clone(), m.proto.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDef {
    pub name: String,
    /// JVM type descriptor.
    pub type_desc: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodDef {
    pub name: String,
    /// Method descriptor, `(params)ret`.
    pub proto: String,
    pub register_count: u32,
    pub instructions: Vec<Instr>,
    pub is_native: bool,
}

impl MethodDef {
    pub fn new(name: impl Into<String>, proto: impl Into<String>, register_count: u32) -> Self {
        MethodDef {
            name: name.into(),
            proto: proto.into(),
            register_count,
            instructions: Vec::new(),
            is_native: false,
        }
    }

    pub fn is_constructor(&self) -> bool {
        self.name == "<init>" || self.name == "<clinit>"
    }

    /// Return type descriptor, the part of the proto after `)`.
    pub fn return_type(&self) -> &str {
        self.proto.rsplit_once(')').map(|(_, r)| r).unwrap_or("")
    }

    /// Appends an instruction, assigning it the next index.
    pub fn push(&mut self, mut instr: Instr) -> usize {
        let index = self.instructions.len();
        instr.index = index;
        self.instructions.push(instr);
        index
    }

    fn validate(&self) -> Result<(), String> {
        if !is_method_descriptor(&self.proto) {
            return Err(format!("malformed proto `{}`", self.proto));
        }
        let n = self.instructions.len();
        for (pos, ins) in self.instructions.iter().enumerate() {
            if ins.index != pos {
                return Err(format!("instruction {pos} carries index {}", ins.index));
            }
            if let Some(&r) = ins.operands.iter().find(|&&r| r >= self.register_count) {
                return Err(format!(
                    "instruction {pos} uses register {r} but method has {} registers",
                    self.register_count
                ));
            }
            match ins.opcode {
                OpcodeClass::ConstString if !matches!(ins.literal, Some(Literal::Str(_))) => {
                    return Err(format!("instruction {pos}: ConstString without string literal"));
                }
                OpcodeClass::ConstNumeric if !matches!(ins.literal, Some(Literal::Int(_))) => {
                    return Err(format!("instruction {pos}: ConstNumeric without integer literal"));
                }
                op if op.is_invoke() && !ins.target.as_ref().is_some_and(MemberRef::is_method) => {
                    return Err(format!("instruction {pos}: invoke without method reference"));
                }
                OpcodeClass::Branch | OpcodeClass::Goto => match ins.branch_target {
                    Some(t) if t < n => {}
                    Some(t) => return Err(format!("instruction {pos}: branch target {t} out of range")),
                    None => return Err(format!("instruction {pos}: branch without target")),
                },
                _ => {}
            }
            if let Some(r) = &ins.target {
                if r.owner.is_empty() || r.name.is_empty() || r.descriptor.is_empty() {
                    return Err(format!("instruction {pos}: reference with empty component"));
                }
            }
        }
        Ok(())
    }
}

/// Collapsed Dalvik opcode groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpcodeClass {
    ConstString,
    ConstNumeric,
    Move,
    MoveResult,
    InvokeStatic,
    InvokeVirtual,
    InvokeDirect,
    InvokeInterface,
    FieldRead,
    FieldWrite,
    StaticRead,
    StaticWrite,
    ArrayOp,
    Branch,
    Goto,
    Return,
    BitOp,
    ArithOp,
    NewInstance,
    NewArray,
    CheckCast,
    Other,
}

impl OpcodeClass {
    pub const ALL: [OpcodeClass; 22] = [
        OpcodeClass::ConstString,
        OpcodeClass::ConstNumeric,
        OpcodeClass::Move,
        OpcodeClass::MoveResult,
        OpcodeClass::InvokeStatic,
        OpcodeClass::InvokeVirtual,
        OpcodeClass::InvokeDirect,
        OpcodeClass::InvokeInterface,
        OpcodeClass::FieldRead,
        OpcodeClass::FieldWrite,
        OpcodeClass::StaticRead,
        OpcodeClass::StaticWrite,
        OpcodeClass::ArrayOp,
        OpcodeClass::Branch,
        OpcodeClass::Goto,
        OpcodeClass::Return,
        OpcodeClass::BitOp,
        OpcodeClass::ArithOp,
        OpcodeClass::NewInstance,
        OpcodeClass::NewArray,
        OpcodeClass::CheckCast,
        OpcodeClass::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpcodeClass::ConstString => "ConstString",
            OpcodeClass::ConstNumeric => "ConstNumeric",
            OpcodeClass::Move => "Move",
            OpcodeClass::MoveResult => "MoveResult",
            OpcodeClass::InvokeStatic => "InvokeStatic",
            OpcodeClass::InvokeVirtual => "InvokeVirtual",
            OpcodeClass::InvokeDirect => "InvokeDirect",
            OpcodeClass::InvokeInterface => "InvokeInterface",
            OpcodeClass::FieldRead => "FieldRead",
            OpcodeClass::FieldWrite => "FieldWrite",
            OpcodeClass::StaticRead => "StaticRead",
            OpcodeClass::StaticWrite => "StaticWrite",
            OpcodeClass::ArrayOp => "ArrayOp",
            OpcodeClass::Branch => "Branch",
            OpcodeClass::Goto => "Goto",
            OpcodeClass::Return => "Return",
            OpcodeClass::BitOp => "BitOp",
            OpcodeClass::ArithOp => "ArithOp",
            OpcodeClass::NewInstance => "NewInstance",
            OpcodeClass::NewArray => "NewArray",
            OpcodeClass::CheckCast => "CheckCast",
            OpcodeClass::Other => "Other",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == s)
    }

    pub fn is_invoke(self) -> bool {
        matches!(
            self,
            OpcodeClass::InvokeStatic
                | OpcodeClass::InvokeVirtual
                | OpcodeClass::InvokeDirect
                | OpcodeClass::InvokeInterface
        )
    }

    /// Instructions that end a basic block.
    pub fn is_terminator(self) -> bool {
        matches!(self, OpcodeClass::Branch | OpcodeClass::Goto | OpcodeClass::Return)
    }

    /// Whether the first operand register may be written by this instruction.
    ///
    /// The collapsed taxonomy loses exact def information for `ArrayOp` and
    /// `Other`; they are treated as writers, which only ever hides values.
    pub fn may_define_first_operand(self) -> bool {
        !matches!(
            self,
            OpcodeClass::InvokeStatic
                | OpcodeClass::InvokeVirtual
                | OpcodeClass::InvokeDirect
                | OpcodeClass::InvokeInterface
                | OpcodeClass::FieldWrite
                | OpcodeClass::StaticWrite
                | OpcodeClass::Branch
                | OpcodeClass::Goto
                | OpcodeClass::Return
        )
    }
}

impl fmt::Display for OpcodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Literal {
    Str(String),
    Int(i64),
}

/// A method or field reference. Methods carry a `(params)ret` descriptor,
/// fields a type descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemberRef {
    pub owner: String,
    pub name: String,
    pub descriptor: String,
}

impl MemberRef {
    pub fn new(owner: impl Into<String>, name: impl Into<String>, descriptor: impl Into<String>) -> Self {
        MemberRef {
            owner: owner.into(),
            name: name.into(),
            descriptor: descriptor.into(),
        }
    }

    pub fn is_method(&self) -> bool {
        self.descriptor.starts_with('(')
    }

    pub fn return_type(&self) -> &str {
        self.descriptor.rsplit_once(')').map(|(_, r)| r).unwrap_or("")
    }
}

impl fmt::Display for MemberRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}:{}", self.owner, self.name, self.descriptor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instr {
    pub index: usize,
    pub opcode: OpcodeClass,
    pub operands: Vec<u32>,
    pub literal: Option<Literal>,
    pub target: Option<MemberRef>,
    pub branch_target: Option<usize>,
}

impl Instr {
    pub fn new(opcode: OpcodeClass, operands: impl Into<Vec<u32>>) -> Self {
        Instr {
            index: 0,
            opcode,
            operands: operands.into(),
            literal: None,
            target: None,
            branch_target: None,
        }
    }

    pub fn const_string(reg: u32, value: impl Into<String>) -> Self {
        Instr::new(OpcodeClass::ConstString, [reg]).with_literal(Literal::Str(value.into()))
    }

    pub fn const_int(reg: u32, value: i64) -> Self {
        Instr::new(OpcodeClass::ConstNumeric, [reg]).with_literal(Literal::Int(value))
    }

    pub fn invoke(opcode: OpcodeClass, regs: impl Into<Vec<u32>>, target: MemberRef) -> Self {
        Instr::new(opcode, regs).with_target(target)
    }

    pub fn jump(opcode: OpcodeClass, regs: impl Into<Vec<u32>>, target: usize) -> Self {
        let mut i = Instr::new(opcode, regs);
        i.branch_target = Some(target);
        i
    }

    pub fn with_literal(mut self, lit: Literal) -> Self {
        self.literal = Some(lit);
        self
    }

    pub fn with_target(mut self, target: MemberRef) -> Self {
        self.target = Some(target);
        self
    }

    pub fn string_literal(&self) -> Option<&str> {
        match &self.literal {
            Some(Literal::Str(s)) => Some(s),
            _ => None,
        }
    }

    /// Register written by this instruction, if any.
    pub fn defined_register(&self) -> Option<u32> {
        if self.opcode.may_define_first_operand() {
            self.operands.first().copied()
        } else {
            None
        }
    }

    /// The method this instruction invokes.
    pub fn invoked(&self) -> Option<&MemberRef> {
        if self.opcode.is_invoke() {
            self.target.as_ref()
        } else {
            None
        }
    }
}

/// Converts a class descriptor (`Lcom/a/B;`) to a binary name (`com.a.B`).
/// Array and primitive descriptors are returned unchanged.
pub fn descriptor_to_binary_name(desc: &str) -> String {
    match desc.strip_prefix('L').and_then(|d| d.strip_suffix(';')) {
        Some(inner) => inner.replace('/', "."),
        None => desc.to_string(),
    }
}

fn field_descriptor_len(s: &[u8]) -> Option<usize> {
    let mut i = 0;
    while s.get(i) == Some(&b'[') {
        i += 1;
    }
    match s.get(i)? {
        b'Z' | b'B' | b'S' | b'C' | b'I' | b'J' | b'F' | b'D' => Some(i + 1),
        b'L' => {
            let end = s[i..].iter().position(|&b| b == b';')?;
            if end < 2 {
                return None;
            }
            Some(i + end + 1)
        }
        _ => None,
    }
}

/// Whether `s` is exactly one JVM field type descriptor.
pub fn is_type_descriptor(s: &str) -> bool {
    field_descriptor_len(s.as_bytes()) == Some(s.len())
}

/// Whether `s` is a method descriptor `(params)ret`.
pub fn is_method_descriptor(s: &str) -> bool {
    let Some(rest) = s.strip_prefix('(') else {
        return false;
    };
    let Some((params, ret)) = rest.split_once(')') else {
        return false;
    };
    let mut p = params.as_bytes();
    while !p.is_empty() {
        match field_descriptor_len(p) {
            Some(n) => p = &p[n..],
            None => return false,
        }
    }
    ret == "V" || is_type_descriptor(ret)
}

/// Number of parameters declared by a method descriptor.
pub fn parameter_count(proto: &str) -> usize {
    let Some(params) = proto.strip_prefix('(').and_then(|r| r.split_once(')')).map(|(p, _)| p) else {
        return 0;
    };
    let mut p = params.as_bytes();
    let mut n = 0;
    while let Some(len) = field_descriptor_len(p) {
        p = &p[len..];
        n += 1;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_extremes() {
        assert_eq!(shannon_entropy(&[7u8; 4096]), 0.0);
        assert_eq!(shannon_entropy(&[]), 0.0);
        let all: Vec<u8> = (0..=255u8).cycle().take(ENTROPY_WINDOW).collect();
        assert!((shannon_entropy(&all) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_uniform_random_bytes() {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut buf = vec![0u8; ENTROPY_WINDOW];
        rng.fill_bytes(&mut buf);
        assert!(shannon_entropy(&buf) >= 7.9);
    }

    #[test]
    fn entropy_window_is_bounded() {
        let mut data = vec![0u8; ENTROPY_WINDOW];
        data.extend((0..=255u8).cycle().take(ENTROPY_WINDOW));
        assert_eq!(FileEntry::from_bytes("x", data.len() as u64, &data).entropy, 0.0);
    }

    #[test]
    fn descriptors() {
        assert!(is_type_descriptor("I"));
        assert!(is_type_descriptor("[[Ljava/lang/String;"));
        assert!(!is_type_descriptor("L;"));
        assert!(!is_type_descriptor("II"));
        assert!(is_method_descriptor("()V"));
        assert!(is_method_descriptor("(I[FLjava/lang/String;)Ljava/lang/Object;"));
        assert!(!is_method_descriptor("(I"));
        assert!(!is_method_descriptor("()"));
        assert_eq!(parameter_count("(IJLa/B;[F)V"), 4);
        assert_eq!(descriptor_to_binary_name("Lcom/a/B;"), "com.a.B");
        assert_eq!(descriptor_to_binary_name("[I"), "[I");
    }

    #[test]
    fn validate_rejects_bad_register_and_target() {
        let mut app = AppModel::new("t", Origin::TextualIr);
        let mut c = ClassDef::new("a", "java.lang.Object");
        let mut m = MethodDef::new("a", "()V", 1);
        m.push(Instr::new(OpcodeClass::Return, [3]));
        c.methods.push(m);
        app.classes.push(c);
        assert!(matches!(app.validate(), Err(InvariantError::Method { .. })));

        let m = &mut app.classes[0].methods[0];
        m.instructions.clear();
        m.push(Instr::jump(OpcodeClass::Goto, [], 4));
        assert!(app.validate().is_err());
        app.classes[0].methods[0].instructions[0].branch_target = Some(0);
        assert!(app.validate().is_ok());
    }
}
