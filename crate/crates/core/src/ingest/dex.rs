//! DEX file parsing into [`ClassDef`]s.
//!
//! Reads the id tables and `class_defs`, then decodes each code item into the
//! collapsed instruction IR. Offsets are validated before any table is
//! allocated, so hostile inputs produce a [`DexError`] rather than a panic.

use std::collections::{HashMap, HashSet};

use super::opcodes::{self, Format, PoolKind};
use crate::ir::{descriptor_to_binary_name, ClassDef, FieldDef, Instr, Literal, MemberRef, MethodDef};

const HEADER_SIZE: usize = 0x70;
const NO_INDEX: u32 = 0xffff_ffff;
const ACC_NATIVE: u32 = 0x100;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DexError {
    #[error("not a dex file (bad magic)")]
    BadMagic,
    #[error("unsupported dex version {0:?}")]
    UnsupportedVersion(String),
    #[error("truncated section `{0}`")]
    TruncatedSection(&'static str),
    #[error("malformed uleb128")]
    MalformedUleb128,
    #[error("malformed {0}")]
    Malformed(String),
}

type Result<T> = std::result::Result<T, DexError>;

struct Reader<'a> {
    data: &'a [u8],
}

impl<'a> Reader<'a> {
    fn slice(&self, off: usize, len: usize, section: &'static str) -> Result<&'a [u8]> {
        off.checked_add(len)
            .and_then(|end| self.data.get(off..end))
            .ok_or(DexError::TruncatedSection(section))
    }

    fn u16(&self, off: usize, section: &'static str) -> Result<u16> {
        let b = self.slice(off, 2, section)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&self, off: usize, section: &'static str) -> Result<u32> {
        let b = self.slice(off, 4, section)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads a uleb128 at `*off`, advancing it.
    fn uleb128(&self, off: &mut usize) -> Result<u32> {
        let mut result: u32 = 0;
        for i in 0..5 {
            let byte = *self.data.get(*off).ok_or(DexError::MalformedUleb128)?;
            *off += 1;
            if i == 4 && byte > 0x0f {
                return Err(DexError::MalformedUleb128);
            }
            result |= u32::from(byte & 0x7f) << (7 * i);
            if byte & 0x80 == 0 {
                return Ok(result);
            }
        }
        Err(DexError::MalformedUleb128)
    }
}

struct Table {
    size: usize,
    off: usize,
}

fn table(r: &Reader<'_>, at: usize, entry: usize, section: &'static str) -> Result<Table> {
    let size = r.u32(at, "header")? as usize;
    let off = r.u32(at + 4, "header")? as usize;
    let bytes = size.checked_mul(entry).ok_or(DexError::TruncatedSection(section))?;
    if size > 0 {
        r.slice(off, bytes, section)?;
    }
    Ok(Table { size, off })
}

/// Decoded constant pools.
struct Pools {
    strings: Vec<String>,
    types: Vec<String>,
    protos: Vec<String>,
    fields: Vec<MemberRef>,
    methods: Vec<MemberRef>,
}

impl Pools {
    fn string(&self, idx: u32) -> Result<&str> {
        self.strings
            .get(idx as usize)
            .map(String::as_str)
            .ok_or_else(|| DexError::Malformed(format!("string index {idx}")))
    }

    fn type_desc(&self, idx: u32) -> Result<&str> {
        self.types
            .get(idx as usize)
            .map(String::as_str)
            .ok_or_else(|| DexError::Malformed(format!("type index {idx}")))
    }

    fn field(&self, idx: u32) -> Result<&MemberRef> {
        self.fields
            .get(idx as usize)
            .ok_or_else(|| DexError::Malformed(format!("field index {idx}")))
    }

    fn method(&self, idx: u32) -> Result<&MemberRef> {
        self.methods
            .get(idx as usize)
            .ok_or_else(|| DexError::Malformed(format!("method index {idx}")))
    }
}

/// Validates magic and version, returning the three version digits.
fn check_magic(bytes: &[u8]) -> Result<&str> {
    if bytes.len() < 8 || &bytes[..4] != b"dex\n" || bytes[7] != 0 {
        return Err(DexError::BadMagic);
    }
    let version = std::str::from_utf8(&bytes[4..7]).map_err(|_| DexError::BadMagic)?;
    if !version.bytes().all(|b| b.is_ascii_digit()) {
        return Err(DexError::BadMagic);
    }
    match version {
        "035" | "036" | "037" | "038" | "039" => Ok(version),
        _ => Err(DexError::UnsupportedVersion(version.to_string())),
    }
}

/// Parses every class defined in a DEX file.
pub fn parse_dex(bytes: &[u8]) -> Result<Vec<ClassDef>> {
    check_magic(bytes)?;
    if bytes.len() < HEADER_SIZE {
        return Err(DexError::TruncatedSection("header"));
    }
    let r = Reader { data: bytes };
    let file_size = r.u32(0x20, "header")? as usize;
    if file_size > bytes.len() || file_size < HEADER_SIZE {
        return Err(DexError::TruncatedSection("header"));
    }
    let r = Reader { data: &bytes[..file_size] };
    if r.u32(0x28, "header")? != 0x1234_5678 {
        return Err(DexError::Malformed("endian tag".into()));
    }

    let string_ids = table(&r, 0x38, 4, "string_ids")?;
    let type_ids = table(&r, 0x40, 4, "type_ids")?;
    let proto_ids = table(&r, 0x48, 12, "proto_ids")?;
    let field_ids = table(&r, 0x50, 8, "field_ids")?;
    let method_ids = table(&r, 0x58, 8, "method_ids")?;
    let class_defs = table(&r, 0x60, 32, "class_defs")?;

    let mut strings = Vec::with_capacity(string_ids.size);
    for i in 0..string_ids.size {
        let off = r.u32(string_ids.off + 4 * i, "string_ids")? as usize;
        strings.push(read_string(&r, off)?);
    }
    let mut pools = Pools {
        strings,
        types: Vec::with_capacity(type_ids.size),
        protos: Vec::with_capacity(proto_ids.size),
        fields: Vec::with_capacity(field_ids.size),
        methods: Vec::with_capacity(method_ids.size),
    };
    for i in 0..type_ids.size {
        let idx = r.u32(type_ids.off + 4 * i, "type_ids")?;
        let desc = pools.string(idx)?.to_string();
        pools.types.push(desc);
    }
    for i in 0..proto_ids.size {
        let base = proto_ids.off + 12 * i;
        let ret = r.u32(base + 4, "proto_ids")?;
        let params_off = r.u32(base + 8, "proto_ids")? as usize;
        let mut proto = String::from("(");
        for t in read_type_list(&r, params_off)? {
            proto.push_str(pools.type_desc(u32::from(t))?);
        }
        proto.push(')');
        proto.push_str(pools.type_desc(ret)?);
        pools.protos.push(proto);
    }
    for i in 0..field_ids.size {
        let base = field_ids.off + 8 * i;
        let class = r.u16(base, "field_ids")?;
        let ty = r.u16(base + 2, "field_ids")?;
        let name = r.u32(base + 4, "field_ids")?;
        pools.fields.push(MemberRef::new(
            descriptor_to_binary_name(pools.type_desc(u32::from(class))?),
            pools.string(name)?,
            pools.type_desc(u32::from(ty))?,
        ));
    }
    for i in 0..method_ids.size {
        let base = method_ids.off + 8 * i;
        let class = r.u16(base, "method_ids")?;
        let proto = r.u16(base + 2, "method_ids")?;
        let name = r.u32(base + 4, "method_ids")?;
        let proto = pools
            .protos
            .get(proto as usize)
            .ok_or_else(|| DexError::Malformed(format!("proto index {proto}")))?
            .clone();
        pools.methods.push(MemberRef::new(
            descriptor_to_binary_name(pools.type_desc(u32::from(class))?),
            pools.string(name)?,
            proto,
        ));
    }

    let mut classes = Vec::with_capacity(class_defs.size);
    let mut seen = HashSet::new();
    for i in 0..class_defs.size {
        let base = class_defs.off + 32 * i;
        let class_idx = r.u32(base, "class_defs")?;
        let super_idx = r.u32(base + 8, "class_defs")?;
        let data_off = r.u32(base + 24, "class_defs")? as usize;
        let name = descriptor_to_binary_name(pools.type_desc(class_idx)?);
        let superclass = if super_idx == NO_INDEX {
            None
        } else {
            Some(descriptor_to_binary_name(pools.type_desc(super_idx)?))
        };
        let mut class = ClassDef {
            name,
            superclass,
            fields: Vec::new(),
            methods: Vec::new(),
            is_library: false,
        };
        if data_off != 0 {
            read_class_data(&r, &pools, data_off, &mut class)?;
        }
        if seen.insert(class.name.clone()) {
            classes.push(class);
        }
    }
    Ok(classes)
}

fn read_type_list(r: &Reader<'_>, off: usize) -> Result<Vec<u16>> {
    if off == 0 {
        return Ok(Vec::new());
    }
    let size = r.u32(off, "type_list")? as usize;
    let raw = r.slice(off + 4, size.checked_mul(2).ok_or(DexError::TruncatedSection("type_list"))?, "type_list")?;
    Ok(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
}

/// Reads a `string_data_item`: uleb128 UTF-16 length, then MUTF-8 bytes
/// terminated by NUL.
fn read_string(r: &Reader<'_>, off: usize) -> Result<String> {
    let mut pos = off;
    let utf16_len = r.uleb128(&mut pos)? as usize;
    let tail = r.data.get(pos..).ok_or(DexError::TruncatedSection("string_data"))?;
    let end = tail.iter().position(|&b| b == 0).ok_or(DexError::TruncatedSection("string_data"))?;
    let units = decode_mutf8(&tail[..end]).ok_or_else(|| DexError::Malformed("string data".into()))?;
    if units.len() != utf16_len {
        return Err(DexError::Malformed("string length".into()));
    }
    Ok(String::from_utf16_lossy(&units))
}

fn decode_mutf8(bytes: &[u8]) -> Option<Vec<u16>> {
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let b0 = u16::from(bytes[i]);
        if b0 < 0x80 {
            out.push(b0);
            i += 1;
        } else if b0 & 0xe0 == 0xc0 {
            let b1 = u16::from(*bytes.get(i + 1)?);
            if b1 & 0xc0 != 0x80 {
                return None;
            }
            out.push(((b0 & 0x1f) << 6) | (b1 & 0x3f));
            i += 2;
        } else if b0 & 0xf0 == 0xe0 {
            let b1 = u16::from(*bytes.get(i + 1)?);
            let b2 = u16::from(*bytes.get(i + 2)?);
            if b1 & 0xc0 != 0x80 || b2 & 0xc0 != 0x80 {
                return None;
            }
            out.push(((b0 & 0x0f) << 12) | ((b1 & 0x3f) << 6) | (b2 & 0x3f));
            i += 3;
        } else {
            return None;
        }
    }
    Some(out)
}

fn read_class_data(r: &Reader<'_>, pools: &Pools, off: usize, class: &mut ClassDef) -> Result<()> {
    let mut pos = off;
    let static_fields = r.uleb128(&mut pos)?;
    let instance_fields = r.uleb128(&mut pos)?;
    let direct_methods = r.uleb128(&mut pos)?;
    let virtual_methods = r.uleb128(&mut pos)?;

    for count in [static_fields, instance_fields] {
        let mut idx: u32 = 0;
        for _ in 0..count {
            idx = idx.wrapping_add(r.uleb128(&mut pos)?);
            let _access = r.uleb128(&mut pos)?;
            let f = pools.field(idx)?;
            class.fields.push(FieldDef {
                name: f.name.clone(),
                type_desc: f.descriptor.clone(),
            });
        }
    }
    for count in [direct_methods, virtual_methods] {
        let mut idx: u32 = 0;
        for _ in 0..count {
            idx = idx.wrapping_add(r.uleb128(&mut pos)?);
            let access = r.uleb128(&mut pos)?;
            let code_off = r.uleb128(&mut pos)? as usize;
            let mref = pools.method(idx)?;
            let mut method = MethodDef::new(mref.name.clone(), mref.descriptor.clone(), 0);
            method.is_native = access & ACC_NATIVE != 0;
            if code_off != 0 {
                read_code(r, pools, code_off, &mut method)?;
            }
            class.methods.push(method);
        }
    }
    Ok(())
}

fn read_code(r: &Reader<'_>, pools: &Pools, off: usize, method: &mut MethodDef) -> Result<()> {
    method.register_count = u32::from(r.u16(off, "code_item")?);
    let insns_size = r.u32(off + 12, "code_item")? as usize;
    let raw = r.slice(off + 16, insns_size.checked_mul(2).ok_or(DexError::TruncatedSection("code_item"))?, "code_item")?;
    let units: Vec<u16> = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    method.instructions = decode_instructions(&units, pools, method.register_count)?;
    Ok(())
}

/// A decoded instruction whose branch target is still a code-unit offset.
struct Pending {
    instr: Instr,
    target_pc: Option<i64>,
}

fn decode_instructions(units: &[u16], pools: &Pools, register_count: u32) -> Result<Vec<Instr>> {
    let mut pending = Vec::new();
    let mut pc_to_index = HashMap::new();
    let mut pc = 0usize;
    while pc < units.len() {
        let unit = units[pc];
        if unit & 0xff == 0 && (1..=3).contains(&(unit >> 8)) {
            pc += payload_width(units, pc)?;
            continue;
        }
        let info = opcodes::info((unit & 0xff) as u8);
        let width = info.format.width();
        let code = units.get(pc..pc + width).ok_or(DexError::TruncatedSection("code"))?;
        let decoded = decode_operands(info.format, (unit & 0xff) as u8, code)?;

        let mut instr = Instr::new(info.class, decoded.regs);
        if let Some(&bad) = instr.operands.iter().find(|&&reg| reg >= register_count) {
            return Err(DexError::Malformed(format!("register v{bad} beyond register count {register_count}")));
        }
        if info.class == crate::ir::OpcodeClass::ConstNumeric {
            instr.literal = Some(Literal::Int(decoded.literal));
        }
        if let Some(idx) = decoded.pool_index {
            match info.pool {
                PoolKind::String => instr.literal = Some(Literal::Str(pools.string(idx)?.to_string())),
                PoolKind::Field => instr.target = Some(pools.field(idx)?.clone()),
                PoolKind::Method => instr.target = Some(pools.method(idx)?.clone()),
                PoolKind::Type => {
                    pools.type_desc(idx)?;
                }
                PoolKind::None | PoolKind::Other => {}
            }
        }
        let is_jump = matches!(info.class, crate::ir::OpcodeClass::Branch | crate::ir::OpcodeClass::Goto);
        let target_pc = decoded.branch.filter(|_| is_jump).map(|rel| pc as i64 + rel);
        pc_to_index.insert(pc, pending.len());
        instr.index = pending.len();
        pending.push(Pending { instr, target_pc });
        pc += width;
    }

    pending
        .into_iter()
        .map(|p| {
            let mut instr = p.instr;
            if let Some(t) = p.target_pc {
                let idx = usize::try_from(t)
                    .ok()
                    .and_then(|t| pc_to_index.get(&t))
                    .ok_or_else(|| DexError::Malformed(format!("branch target {t}")))?;
                instr.branch_target = Some(*idx);
            }
            Ok(instr)
        })
        .collect()
}

/// Width in code units of the switch / array payload starting at `pc`.
fn payload_width(units: &[u16], pc: usize) -> Result<usize> {
    let at = |i: usize| units.get(pc + i).copied().ok_or(DexError::TruncatedSection("code"));
    let width = match units[pc] >> 8 {
        1 => usize::from(at(1)?) * 2 + 4,
        2 => usize::from(at(1)?) * 4 + 2,
        _ => {
            let elem = usize::from(at(1)?);
            let count = (u32::from(at(2)?) | (u32::from(at(3)?) << 16)) as usize;
            elem.checked_mul(count)
                .map(|bytes| bytes.div_ceil(2) + 4)
                .ok_or(DexError::TruncatedSection("code"))?
        }
    };
    if pc + width > units.len() {
        return Err(DexError::TruncatedSection("code"));
    }
    Ok(width)
}

#[derive(Default)]
struct Operands {
    regs: Vec<u32>,
    literal: i64,
    pool_index: Option<u32>,
    branch: Option<i64>,
}

fn decode_operands(format: Format, opcode: u8, u: &[u16]) -> Result<Operands> {
    use Format::*;
    let aa = u32::from(u[0] >> 8);
    let a4 = u32::from((u[0] >> 8) & 0xf);
    let b4 = u32::from(u[0] >> 12);
    let wide32 = |lo: u16, hi: u16| (u32::from(lo) | (u32::from(hi) << 16)) as i32 as i64;
    let mut o = Operands::default();
    match format {
        F10x => {}
        F12x => o.regs = vec![a4, b4],
        F11n => {
            o.regs = vec![a4];
            o.literal = i64::from(((u[0] >> 12) as i8) << 4 >> 4);
        }
        F11x => o.regs = vec![aa],
        F10t => o.branch = Some(i64::from((u[0] >> 8) as u8 as i8)),
        F20t => o.branch = Some(i64::from(u[1] as i16)),
        F22x => o.regs = vec![aa, u32::from(u[1])],
        F21t => {
            o.regs = vec![aa];
            o.branch = Some(i64::from(u[1] as i16));
        }
        F21s => {
            o.regs = vec![aa];
            o.literal = i64::from(u[1] as i16);
        }
        F21h => {
            o.regs = vec![aa];
            let shift = if opcode == 0x19 { 48 } else { 16 };
            o.literal = i64::from(u[1] as i16) << shift;
            if opcode != 0x19 {
                o.literal = o.literal as i32 as i64;
            }
        }
        F21c => {
            o.regs = vec![aa];
            o.pool_index = Some(u32::from(u[1]));
        }
        F23x => o.regs = vec![aa, u32::from(u[1] & 0xff), u32::from(u[1] >> 8)],
        F22b => {
            o.regs = vec![aa, u32::from(u[1] & 0xff)];
            o.literal = i64::from((u[1] >> 8) as u8 as i8);
        }
        F22t => {
            o.regs = vec![a4, b4];
            o.branch = Some(i64::from(u[1] as i16));
        }
        F22s => {
            o.regs = vec![a4, b4];
            o.literal = i64::from(u[1] as i16);
        }
        F22c => {
            o.regs = vec![a4, b4];
            o.pool_index = Some(u32::from(u[1]));
        }
        F30t => o.branch = Some(wide32(u[1], u[2])),
        F32x => o.regs = vec![u32::from(u[1]), u32::from(u[2])],
        F31i => {
            o.regs = vec![aa];
            o.literal = wide32(u[1], u[2]);
        }
        F31t => o.regs = vec![aa],
        F31c => {
            o.regs = vec![aa];
            o.pool_index = Some(u32::from(u[1]) | (u32::from(u[2]) << 16));
        }
        F35c | F45cc => {
            let count = b4 as usize;
            if count > 5 {
                return Err(DexError::Malformed(format!("invoke argument count {count}")));
            }
            let all = [
                u32::from(u[2] & 0xf),
                u32::from((u[2] >> 4) & 0xf),
                u32::from((u[2] >> 8) & 0xf),
                u32::from(u[2] >> 12),
                a4,
            ];
            o.regs = all[..count].to_vec();
            o.pool_index = Some(u32::from(u[1]));
        }
        F3rc | F4rcc => {
            let first = u32::from(u[2]);
            o.regs = (first..first + aa).collect();
            o.pool_index = Some(u32::from(u[1]));
        }
        F51l => {
            o.regs = vec![aa];
            let v = u64::from(u[1]) | (u64::from(u[2]) << 16) | (u64::from(u[3]) << 32) | (u64::from(u[4]) << 48);
            o.literal = v as i64;
        }
    }
    Ok(o)
}
