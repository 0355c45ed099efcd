//! Assembles IR classes into a DEX file.
//!
//! Each [`OpcodeClass`] is encoded with one representative Dalvik opcode, so
//! parsing the output gives back the same instructions. Pools are sorted as
//! DEX requires. The SHA-1 signature is left zeroed and no map list is
//! written; the Adler-32 checksum is filled in.

use std::collections::{BTreeMap, BTreeSet};

use obfuscan_core::ir::{ClassDef, Instr, Literal, MemberRef, MethodDef, OpcodeClass};

const HEADER_SIZE: usize = 0x70;
const NO_INDEX: u32 = 0xffff_ffff;
const ACC_PUBLIC: u32 = 0x1;
const ACC_STATIC: u32 = 0x8;
const ACC_NATIVE: u32 = 0x100;
const ACC_CONSTRUCTOR: u32 = 0x1_0000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{method} #{index}: {reason}")]
pub struct AssembleError {
    pub method: String,
    pub index: usize,
    pub reason: String,
}

/// `a.b.C` -> `La/b/C;`. Array and primitive descriptors pass through.
pub fn binary_name_to_descriptor(name: &str) -> String {
    let is_primitive = name.len() == 1 && "ZBSCIJFDV".contains(name);
    if name.starts_with('[') || is_primitive {
        name.to_string()
    } else {
        format!("L{};", name.replace('.', "/"))
    }
}

/// Splits `(params)ret` into parameter descriptors and the return type.
fn split_proto(proto: &str) -> (Vec<String>, String) {
    let (params, ret) = proto
        .strip_prefix('(')
        .and_then(|p| p.split_once(')'))
        .unwrap_or(("", "V"));
    let b = params.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let start = i;
        while b[i] == b'[' {
            i += 1;
        }
        if b[i] == b'L' {
            i += params[i..].find(';').map_or(params.len() - i, |e| e + 1);
        } else {
            i += 1;
        }
        out.push(params[start..i.min(b.len())].to_string());
    }
    (out, ret.to_string())
}

fn shorty_char(desc: &str) -> char {
    match desc.as_bytes()[0] {
        b'[' | b'L' => 'L',
        c => c as char,
    }
}

/// Dalvik register words used by a parameter list.
fn param_words(params: &[String]) -> u32 {
    params.iter().map(|p| if p == "J" || p == "D" { 2 } else { 1 }).sum()
}

fn is_direct(m: &MethodDef) -> bool {
    m.name == "<init>" || m.name == "<clinit>"
}

/// Field and method pool keys, before index assignment.
#[derive(Default)]
struct PoolBuilder {
    strings: BTreeSet<String>,
    types: BTreeSet<String>,
    protos: BTreeSet<String>,
    fields: BTreeSet<(String, String, String)>,
    methods: BTreeSet<(String, String, String)>,
}

impl PoolBuilder {
    fn add_type(&mut self, desc: String) {
        self.strings.insert(desc.clone());
        self.types.insert(desc);
    }

    fn add_proto(&mut self, proto: &str) {
        let (params, ret) = split_proto(proto);
        let shorty: String = std::iter::once(shorty_char(&ret)).chain(params.iter().map(|p| shorty_char(p))).collect();
        self.strings.insert(shorty);
        for p in params {
            self.add_type(p);
        }
        self.add_type(ret);
        self.protos.insert(proto.to_string());
    }

    fn add_member(&mut self, r: &MemberRef, is_method: bool) {
        let owner = binary_name_to_descriptor(&r.owner);
        self.add_type(owner.clone());
        self.strings.insert(r.name.clone());
        if is_method {
            self.add_proto(&r.descriptor);
            self.methods.insert((owner, r.name.clone(), r.descriptor.clone()));
        } else {
            self.add_type(r.descriptor.clone());
            self.fields.insert((owner, r.name.clone(), r.descriptor.clone()));
        }
    }
}

/// Final pools with lookup maps.
struct Pools {
    strings: Vec<String>,
    string_idx: BTreeMap<String, u32>,
    types: Vec<String>,
    type_idx: BTreeMap<String, u32>,
    protos: Vec<(u32, Vec<u32>, u32)>,
    fields: Vec<(u32, u32, u32)>,
    field_idx: BTreeMap<(String, String, String), u32>,
    methods: Vec<(u32, u32, u32)>,
    method_idx: BTreeMap<(String, String, String), u32>,
}

impl Pools {
    fn build(p: PoolBuilder) -> Pools {
        let strings: Vec<String> = p.strings.into_iter().collect();
        let string_idx: BTreeMap<String, u32> = strings.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        // Strings are sorted, so sorting types by string index is sorting by descriptor.
        let types: Vec<String> = p.types.into_iter().collect();
        let type_idx: BTreeMap<String, u32> = types.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();

        let mut protos: Vec<(u32, Vec<u32>, u32, String)> = p
            .protos
            .into_iter()
            .map(|proto| {
                let (params, ret) = split_proto(&proto);
                let shorty: String =
                    std::iter::once(shorty_char(&ret)).chain(params.iter().map(|p| shorty_char(p))).collect();
                (
                    type_idx[&ret],
                    params.iter().map(|t| type_idx[t]).collect(),
                    string_idx[&shorty],
                    proto,
                )
            })
            .collect();
        protos.sort();
        let proto_idx: BTreeMap<String, u32> = protos.iter().enumerate().map(|(i, p)| (p.3.clone(), i as u32)).collect();
        let protos = protos.into_iter().map(|(r, ps, s, _)| (s, ps, r)).collect();

        let mut fields: Vec<((u32, u32, u32), (String, String, String))> = p
            .fields
            .into_iter()
            .map(|k| ((type_idx[&k.0], string_idx[&k.1], type_idx[&k.2]), k))
            .collect();
        fields.sort();
        let field_idx = fields.iter().enumerate().map(|(i, f)| (f.1.clone(), i as u32)).collect();
        let fields = fields.into_iter().map(|f| f.0).collect();

        let mut methods: Vec<((u32, u32, u32), (String, String, String))> = p
            .methods
            .into_iter()
            .map(|k| ((type_idx[&k.0], string_idx[&k.1], proto_idx[&k.2]), k))
            .collect();
        methods.sort();
        let method_idx = methods.iter().enumerate().map(|(i, m)| (m.1.clone(), i as u32)).collect();
        let methods = methods.into_iter().map(|m| m.0).collect();

        Pools {
            strings,
            string_idx,
            types,
            type_idx,
            protos,
            fields,
            field_idx,
            methods,
            method_idx,
        }
    }

    fn member_key(r: &MemberRef) -> (String, String, String) {
        (binary_name_to_descriptor(&r.owner), r.name.clone(), r.descriptor.clone())
    }
}

fn collect_pools(classes: &[ClassDef]) -> PoolBuilder {
    let mut p = PoolBuilder::default();
    for c in classes {
        p.add_type(binary_name_to_descriptor(&c.name));
        if let Some(s) = &c.superclass {
            p.add_type(binary_name_to_descriptor(s));
        }
        for f in &c.fields {
            p.add_member(&MemberRef::new(c.name.clone(), f.name.clone(), f.type_desc.clone()), false);
        }
        for m in &c.methods {
            p.add_member(&c.method_ref(m), true);
            for ins in &m.instructions {
                if let Some(Literal::Str(s)) = &ins.literal {
                    p.strings.insert(s.clone());
                }
                match ins.opcode {
                    OpcodeClass::NewInstance | OpcodeClass::CheckCast | OpcodeClass::NewArray => {
                        p.add_type(type_operand(ins));
                    }
                    OpcodeClass::Other if ins.operands.len() == 2 => p.add_type(type_operand(ins)),
                    _ => {}
                }
                if let Some(t) = &ins.target {
                    if ins.opcode.is_invoke() {
                        p.add_member(t, true);
                    } else if matches!(
                        ins.opcode,
                        OpcodeClass::FieldRead | OpcodeClass::FieldWrite | OpcodeClass::StaticRead | OpcodeClass::StaticWrite
                    ) {
                        p.add_member(t, false);
                    }
                }
            }
        }
    }
    p
}

/// Type referenced by type-pool instructions. The parser drops it, so any
/// class descriptor works; the target owner is used when present.
fn type_operand(ins: &Instr) -> String {
    match (ins.opcode, &ins.target) {
        (OpcodeClass::NewArray, _) => "[I".to_string(),
        (_, Some(t)) => binary_name_to_descriptor(&t.owner),
        _ => "Ljava/lang/Object;".to_string(),
    }
}

fn uleb(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn mutf8(s: &str) -> (u32, Vec<u8>) {
    let units: Vec<u16> = s.encode_utf16().collect();
    let mut out = Vec::new();
    for &u in &units {
        match u {
            0x01..=0x7f => out.push(u as u8),
            0x00 | 0x80..=0x7ff => {
                out.push(0xc0 | (u >> 6) as u8);
                out.push(0x80 | (u & 0x3f) as u8);
            }
            _ => {
                out.push(0xe0 | (u >> 12) as u8);
                out.push(0x80 | ((u >> 6) & 0x3f) as u8);
                out.push(0x80 | (u & 0x3f) as u8);
            }
        }
    }
    (units.len() as u32, out)
}

/// One encoded instruction; `branch` is patched once offsets are known.
struct Encoded {
    units: Vec<u16>,
    branch: Option<(usize, BranchSlot)>,
}

#[derive(Clone, Copy)]
enum BranchSlot {
    /// 16-bit offset in unit 1.
    Short,
    /// 32-bit offset in units 1-2.
    Wide,
}

struct Encoder<'a> {
    pools: &'a Pools,
    method: String,
}

impl Encoder<'_> {
    fn err(&self, index: usize, reason: impl Into<String>) -> AssembleError {
        AssembleError {
            method: self.method.clone(),
            index,
            reason: reason.into(),
        }
    }

    fn encode(&self, ins: &Instr) -> Result<Encoded, AssembleError> {
        use OpcodeClass as C;
        let r = &ins.operands;
        let i = ins.index;
        let fits4 = |regs: &[u32]| regs.iter().all(|&x| x < 16);
        let fits8 = |regs: &[u32]| regs.iter().all(|&x| x < 256);
        let need = |ok: bool, what: &str| if ok { Ok(()) } else { Err(self.err(i, what.to_string())) };
        let u = |x: u32| x as u16;
        let plain = |units: Vec<u16>| Ok(Encoded { units, branch: None });
        let op_aa = |op: u16, a: u32| op | (u(a) << 8);
        let op_ab = |op: u16, a: u32, b: u32| op | (u(a) << 8) | (u(b) << 12);

        match (ins.opcode, r.len()) {
            (C::ConstString, 1) => {
                need(fits8(r), "register out of range")?;
                let Some(Literal::Str(s)) = &ins.literal else {
                    return Err(self.err(i, "ConstString without a string literal"));
                };
                let idx = self.pools.string_idx[s];
                if idx <= 0xffff {
                    plain(vec![op_aa(0x1a, r[0]), idx as u16])
                } else {
                    plain(vec![op_aa(0x1b, r[0]), idx as u16, (idx >> 16) as u16])
                }
            }
            (C::ConstNumeric, 1) => {
                need(fits8(r), "register out of range")?;
                let v = match ins.literal {
                    Some(Literal::Int(v)) => v,
                    _ => return Err(self.err(i, "ConstNumeric without an integer literal")),
                };
                match i32::try_from(v) {
                    Ok(v32) => plain(vec![op_aa(0x14, r[0]), v32 as u16, (v32 as u32 >> 16) as u16]),
                    Err(_) => {
                        let w = v as u64;
                        plain(vec![op_aa(0x18, r[0]), w as u16, (w >> 16) as u16, (w >> 32) as u16, (w >> 48) as u16])
                    }
                }
            }
            (C::Move, 2) => {
                need(r.iter().all(|&x| x <= 0xffff), "register out of range")?;
                plain(vec![0x03, u(r[0]), u(r[1])])
            }
            (C::MoveResult, 1) => {
                need(fits8(r), "register out of range")?;
                plain(vec![op_aa(0x0c, r[0])])
            }
            (op, n) if op.is_invoke() => {
                let t = ins.target.as_ref().ok_or_else(|| self.err(i, "invoke without target"))?;
                let idx = self.pools.method_idx[&Pools::member_key(t)];
                need(idx <= 0xffff, "method index out of range")?;
                let (short, range) = match op {
                    C::InvokeVirtual => (0x6e, 0x74),
                    C::InvokeDirect => (0x70, 0x76),
                    C::InvokeStatic => (0x71, 0x77),
                    _ => (0x72, 0x78),
                };
                if n <= 5 && fits4(r) {
                    let mut regs = [0u16; 5];
                    for (k, &x) in r.iter().enumerate() {
                        regs[k] = u(x);
                    }
                    let first = short | ((n as u16) << 12) | (regs[4] << 8);
                    plain(vec![first, idx as u16, regs[0] | (regs[1] << 4) | (regs[2] << 8) | (regs[3] << 12)])
                } else if n < 256 && r.windows(2).all(|w| w[1] == w[0] + 1) && r[0] + (n as u32) <= 0x10000 {
                    plain(vec![range | ((n as u16) << 8), idx as u16, u(r[0])])
                } else {
                    Err(self.err(i, "invoke registers neither fit 35c nor form a range"))
                }
            }
            (C::FieldRead | C::FieldWrite, 2) => {
                need(fits4(r), "register out of range")?;
                let t = ins.target.as_ref().ok_or_else(|| self.err(i, "field access without target"))?;
                let idx = self.pools.field_idx[&Pools::member_key(t)];
                need(idx <= 0xffff, "field index out of range")?;
                let op = if ins.opcode == C::FieldRead { 0x52 } else { 0x59 };
                plain(vec![op_ab(op, r[0], r[1]), idx as u16])
            }
            (C::StaticRead | C::StaticWrite, 1) => {
                need(fits8(r), "register out of range")?;
                let t = ins.target.as_ref().ok_or_else(|| self.err(i, "field access without target"))?;
                let idx = self.pools.field_idx[&Pools::member_key(t)];
                need(idx <= 0xffff, "field index out of range")?;
                let op = if ins.opcode == C::StaticRead { 0x60 } else { 0x67 };
                plain(vec![op_aa(op, r[0]), idx as u16])
            }
            (C::ArrayOp, 3) => {
                need(fits8(r), "register out of range")?;
                plain(vec![op_aa(0x44, r[0]), u(r[1]) | (u(r[2]) << 8)])
            }
            (C::ArrayOp, 2) => {
                need(fits4(r), "register out of range")?;
                plain(vec![op_ab(0x21, r[0], r[1])])
            }
            (C::BitOp | C::ArithOp, 3) => {
                need(fits8(r), "register out of range")?;
                let op = if ins.opcode == C::BitOp { 0x97 } else { 0x90 };
                plain(vec![op_aa(op, r[0]), u(r[1]) | (u(r[2]) << 8)])
            }
            (C::BitOp | C::ArithOp, 2) => {
                need(fits4(r), "register out of range")?;
                let op = if ins.opcode == C::BitOp { 0xb7 } else { 0xb0 };
                plain(vec![op_ab(op, r[0], r[1])])
            }
            (C::Branch, 1) => {
                need(fits8(r), "register out of range")?;
                let t = ins.branch_target.ok_or_else(|| self.err(i, "branch without target"))?;
                Ok(Encoded {
                    units: vec![op_aa(0x38, r[0]), 0],
                    branch: Some((t, BranchSlot::Short)),
                })
            }
            (C::Branch, 2) => {
                need(fits4(r), "register out of range")?;
                let t = ins.branch_target.ok_or_else(|| self.err(i, "branch without target"))?;
                Ok(Encoded {
                    units: vec![op_ab(0x32, r[0], r[1]), 0],
                    branch: Some((t, BranchSlot::Short)),
                })
            }
            (C::Goto, 0) => {
                let t = ins.branch_target.ok_or_else(|| self.err(i, "goto without target"))?;
                Ok(Encoded {
                    units: vec![0x2a, 0, 0],
                    branch: Some((t, BranchSlot::Wide)),
                })
            }
            (C::Return, 0) => plain(vec![0x0e]),
            (C::Return, 1) => {
                need(fits8(r), "register out of range")?;
                plain(vec![op_aa(0x11, r[0])])
            }
            (C::NewInstance | C::CheckCast, 1) => {
                need(fits8(r), "register out of range")?;
                let op = if ins.opcode == C::NewInstance { 0x22 } else { 0x1f };
                plain(vec![op_aa(op, r[0]), self.pools.type_idx[&type_operand(ins)] as u16])
            }
            (C::NewArray, 2) => {
                need(fits4(r), "register out of range")?;
                plain(vec![op_ab(0x23, r[0], r[1]), self.pools.type_idx[&type_operand(ins)] as u16])
            }
            (C::Other, 0) => plain(vec![0x00]),
            (C::Other, 1) => {
                need(fits8(r), "register out of range")?;
                plain(vec![op_aa(0x1d, r[0])])
            }
            (C::Other, 2) => {
                need(fits4(r), "register out of range")?;
                plain(vec![op_ab(0x20, r[0], r[1]), self.pools.type_idx[&type_operand(ins)] as u16])
            }
            (op, n) => Err(self.err(i, format!("no encoding for {} with {n} operands", op.name()))),
        }
    }

    fn encode_method(&self, m: &MethodDef) -> Result<Vec<u16>, AssembleError> {
        let encoded: Vec<Encoded> = m.instructions.iter().map(|ins| self.encode(ins)).collect::<Result<_, _>>()?;
        let mut pcs = Vec::with_capacity(encoded.len());
        let mut pc = 0usize;
        for e in &encoded {
            pcs.push(pc);
            pc += e.units.len();
        }
        let mut out = Vec::with_capacity(pc);
        for (k, mut e) in encoded.into_iter().enumerate() {
            if let Some((target, slot)) = e.branch {
                let to = *pcs.get(target).ok_or_else(|| self.err(k, "branch target out of range"))?;
                let rel = to as i64 - pcs[k] as i64;
                match slot {
                    BranchSlot::Short => {
                        let rel = i16::try_from(rel).map_err(|_| self.err(k, "branch too far"))?;
                        e.units[1] = rel as u16;
                    }
                    BranchSlot::Wide => {
                        let rel = rel as i32 as u32;
                        e.units[1] = rel as u16;
                        e.units[2] = (rel >> 16) as u16;
                    }
                }
            }
            out.extend(e.units);
        }
        Ok(out)
    }
}

/// Encodes `classes` as one DEX file (version 035).
pub fn assemble_dex(classes: &[ClassDef]) -> Result<Vec<u8>, AssembleError> {
    let pools = Pools::build(collect_pools(classes));

    let n = |v: usize| v as u32;
    let string_ids_off = HEADER_SIZE;
    let type_ids_off = string_ids_off + 4 * pools.strings.len();
    let proto_ids_off = type_ids_off + 4 * pools.types.len();
    let field_ids_off = proto_ids_off + 12 * pools.protos.len();
    let method_ids_off = field_ids_off + 8 * pools.fields.len();
    let class_defs_off = method_ids_off + 8 * pools.methods.len();
    let data_off = class_defs_off + 32 * classes.len();

    let mut data: Vec<u8> = Vec::new();
    let abs = |data: &Vec<u8>| data_off + data.len();
    let align4 = |data: &mut Vec<u8>| {
        while (data_off + data.len()) % 4 != 0 {
            data.push(0);
        }
    };

    let mut string_offs = Vec::with_capacity(pools.strings.len());
    for s in &pools.strings {
        string_offs.push(n(abs(&data)));
        let (len, bytes) = mutf8(s);
        uleb(&mut data, len);
        data.extend(bytes);
        data.push(0);
    }

    let mut proto_params_off = Vec::with_capacity(pools.protos.len());
    for (_, params, _) in &pools.protos {
        if params.is_empty() {
            proto_params_off.push(0);
            continue;
        }
        align4(&mut data);
        proto_params_off.push(n(abs(&data)));
        data.extend(n(params.len()).to_le_bytes());
        for &p in params {
            data.extend((p as u16).to_le_bytes());
        }
    }

    let mut class_data_offs = Vec::with_capacity(classes.len());
    for c in classes {
        let mut direct = Vec::new();
        let mut virt = Vec::new();
        for m in &c.methods {
            let key = Pools::member_key(&c.method_ref(m));
            let idx = pools.method_idx[&key];
            let (params, _) = split_proto(&m.proto);
            let is_static = m.name == "<clinit>";
            let mut access = ACC_PUBLIC;
            if is_direct(m) {
                access |= ACC_CONSTRUCTOR;
            }
            if is_static {
                access |= ACC_STATIC;
            }
            if m.is_native {
                access |= ACC_NATIVE;
            }
            let code_off = if m.instructions.is_empty() && m.register_count == 0 {
                0
            } else {
                let enc = Encoder {
                    pools: &pools,
                    method: format!("{}->{}{}", c.name, m.name, m.proto),
                };
                let insns = enc.encode_method(m)?;
                let ins_size = param_words(&params) + u32::from(!is_static);
                align4(&mut data);
                let off = n(abs(&data));
                data.extend((m.register_count as u16).to_le_bytes());
                data.extend((ins_size.min(m.register_count) as u16).to_le_bytes());
                data.extend(5u16.to_le_bytes());
                data.extend(0u16.to_le_bytes());
                data.extend(0u32.to_le_bytes());
                data.extend(n(insns.len()).to_le_bytes());
                for unit in insns {
                    data.extend(unit.to_le_bytes());
                }
                off
            };
            let entry = (idx, access, code_off);
            if is_direct(m) {
                direct.push(entry);
            } else {
                virt.push(entry);
            }
        }
        direct.sort_unstable();
        virt.sort_unstable();
        let mut fields: Vec<u32> = c
            .fields
            .iter()
            .map(|f| {
                pools.field_idx[&(binary_name_to_descriptor(&c.name), f.name.clone(), f.type_desc.clone())]
            })
            .collect();
        fields.sort_unstable();

        if fields.is_empty() && c.methods.is_empty() {
            class_data_offs.push(0);
            continue;
        }
        class_data_offs.push(n(abs(&data)));
        uleb(&mut data, 0);
        uleb(&mut data, n(fields.len()));
        uleb(&mut data, n(direct.len()));
        uleb(&mut data, n(virt.len()));
        let mut prev = 0;
        for f in fields {
            uleb(&mut data, f - prev);
            uleb(&mut data, ACC_PUBLIC);
            prev = f;
        }
        for list in [direct, virt] {
            let mut prev = 0;
            for (idx, access, code_off) in list {
                uleb(&mut data, idx - prev);
                uleb(&mut data, access);
                uleb(&mut data, code_off);
                prev = idx;
            }
        }
    }
    align4(&mut data);

    let file_size = data_off + data.len();
    let mut out = Vec::with_capacity(file_size);
    out.extend(b"dex\n035\0");
    out.extend([0u8; 4 + 20]);
    out.extend(n(file_size).to_le_bytes());
    out.extend(n(HEADER_SIZE).to_le_bytes());
    out.extend(0x1234_5678u32.to_le_bytes());
    out.extend([0u8; 8]); // link
    out.extend(0u32.to_le_bytes()); // map_off
    for (size, off) in [
        (pools.strings.len(), string_ids_off),
        (pools.types.len(), type_ids_off),
        (pools.protos.len(), proto_ids_off),
        (pools.fields.len(), field_ids_off),
        (pools.methods.len(), method_ids_off),
        (classes.len(), class_defs_off),
    ] {
        out.extend(n(size).to_le_bytes());
        out.extend(if size == 0 { 0 } else { n(off) }.to_le_bytes());
    }
    out.extend(n(data.len()).to_le_bytes());
    out.extend(n(data_off).to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_SIZE);

    for off in string_offs {
        out.extend(off.to_le_bytes());
    }
    for t in &pools.types {
        out.extend(pools.string_idx[t].to_le_bytes());
    }
    for ((shorty, _, ret), params_off) in pools.protos.iter().zip(&proto_params_off) {
        out.extend(shorty.to_le_bytes());
        out.extend(ret.to_le_bytes());
        out.extend(params_off.to_le_bytes());
    }
    for &(class, name, ty) in &pools.fields {
        out.extend((class as u16).to_le_bytes());
        out.extend((ty as u16).to_le_bytes());
        out.extend(name.to_le_bytes());
    }
    for &(class, name, proto) in &pools.methods {
        out.extend((class as u16).to_le_bytes());
        out.extend((proto as u16).to_le_bytes());
        out.extend(name.to_le_bytes());
    }
    for (c, cd_off) in classes.iter().zip(class_data_offs) {
        out.extend(pools.type_idx[&binary_name_to_descriptor(&c.name)].to_le_bytes());
        out.extend(ACC_PUBLIC.to_le_bytes());
        let sup = c
            .superclass
            .as_ref()
            .map_or(NO_INDEX, |s| pools.type_idx[&binary_name_to_descriptor(s)]);
        out.extend(sup.to_le_bytes());
        out.extend(0u32.to_le_bytes()); // interfaces
        out.extend(NO_INDEX.to_le_bytes()); // source file
        out.extend(0u32.to_le_bytes()); // annotations
        out.extend(cd_off.to_le_bytes());
        out.extend(0u32.to_le_bytes()); // static values
    }
    out.extend(data);

    let checksum = adler2::adler32_slice(&out[12..]);
    out[8..12].copy_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

/// `classes` with fields and methods in the order they come back from a
/// parse of the assembled file: fields by name then type, constructors
/// first, each group by name then (return type, parameter types).
pub fn canonical_member_order(classes: &[ClassDef]) -> Vec<ClassDef> {
    classes
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.fields.sort_by(|a, b| (&a.name, &a.type_desc).cmp(&(&b.name, &b.type_desc)));
            c.methods.sort_by_cached_key(|m| {
                let (params, ret) = split_proto(&m.proto);
                (!is_direct(m), m.name.clone(), ret, params)
            });
            c
        })
        .collect()
}
