//! Dalvik instruction formats and the opcode -> [`OpcodeClass`] mapping.
//!
//! Formats follow the published Dalvik instruction-format table; opcodes that
//! are unused in current DEX versions decode as `10x`.

use crate::ir::OpcodeClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    F10x,
    F12x,
    F11n,
    F11x,
    F10t,
    F20t,
    F22x,
    F21t,
    F21s,
    F21h,
    F21c,
    F23x,
    F22b,
    F22t,
    F22s,
    F22c,
    F30t,
    F32x,
    F31i,
    F31t,
    F31c,
    F35c,
    F3rc,
    F45cc,
    F4rcc,
    F51l,
}

impl Format {
    /// Width in 16-bit code units.
    pub fn width(self) -> usize {
        use Format::*;
        match self {
            F10x | F12x | F11n | F11x | F10t => 1,
            F20t | F22x | F21t | F21s | F21h | F21c | F23x | F22b | F22t | F22s | F22c => 2,
            F30t | F32x | F31i | F31t | F31c | F35c | F3rc => 3,
            F45cc | F4rcc => 4,
            F51l => 5,
        }
    }
}

/// What the constant-pool index of a `c`-format instruction refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    None,
    String,
    Type,
    Field,
    Method,
    Other,
}

#[derive(Debug, Clone, Copy)]
pub struct OpInfo {
    pub format: Format,
    pub class: OpcodeClass,
    pub pool: PoolKind,
}

const fn op(format: Format, class: OpcodeClass, pool: PoolKind) -> OpInfo {
    OpInfo { format, class, pool }
}

pub fn info(opcode: u8) -> OpInfo {
    use Format::*;
    use OpcodeClass as C;
    use PoolKind as P;
    match opcode {
        0x00 => op(F10x, C::Other, P::None),
        0x01 | 0x04 | 0x07 => op(F12x, C::Move, P::None),
        0x02 | 0x05 | 0x08 => op(F22x, C::Move, P::None),
        0x03 | 0x06 | 0x09 => op(F32x, C::Move, P::None),
        0x0a..=0x0c => op(F11x, C::MoveResult, P::None),
        0x0d => op(F11x, C::Other, P::None),
        0x0e => op(F10x, C::Return, P::None),
        0x0f..=0x11 => op(F11x, C::Return, P::None),
        0x12 => op(F11n, C::ConstNumeric, P::None),
        0x13 | 0x16 => op(F21s, C::ConstNumeric, P::None),
        0x14 | 0x17 => op(F31i, C::ConstNumeric, P::None),
        0x15 | 0x19 => op(F21h, C::ConstNumeric, P::None),
        0x18 => op(F51l, C::ConstNumeric, P::None),
        0x1a => op(F21c, C::ConstString, P::String),
        0x1b => op(F31c, C::ConstString, P::String),
        0x1c => op(F21c, C::Other, P::Type),
        0x1d | 0x1e => op(F11x, C::Other, P::None),
        0x1f => op(F21c, C::CheckCast, P::Type),
        0x20 => op(F22c, C::Other, P::Type),
        0x21 => op(F12x, C::ArrayOp, P::None),
        0x22 => op(F21c, C::NewInstance, P::Type),
        0x23 => op(F22c, C::NewArray, P::Type),
        0x24 => op(F35c, C::NewArray, P::Type),
        0x25 => op(F3rc, C::NewArray, P::Type),
        0x26 => op(F31t, C::ArrayOp, P::None),
        0x27 => op(F11x, C::Other, P::None),
        0x28 => op(F10t, C::Goto, P::None),
        0x29 => op(F20t, C::Goto, P::None),
        0x2a => op(F30t, C::Goto, P::None),
        0x2b | 0x2c => op(F31t, C::Other, P::None),
        0x2d..=0x31 => op(F23x, C::ArithOp, P::None),
        0x32..=0x37 => op(F22t, C::Branch, P::None),
        0x38..=0x3d => op(F21t, C::Branch, P::None),
        0x44..=0x51 => op(F23x, C::ArrayOp, P::None),
        0x52..=0x58 => op(F22c, C::FieldRead, P::Field),
        0x59..=0x5f => op(F22c, C::FieldWrite, P::Field),
        0x60..=0x66 => op(F21c, C::StaticRead, P::Field),
        0x67..=0x6d => op(F21c, C::StaticWrite, P::Field),
        0x6e | 0x6f => op(F35c, C::InvokeVirtual, P::Method),
        0x70 => op(F35c, C::InvokeDirect, P::Method),
        0x71 => op(F35c, C::InvokeStatic, P::Method),
        0x72 => op(F35c, C::InvokeInterface, P::Method),
        0x74 | 0x75 => op(F3rc, C::InvokeVirtual, P::Method),
        0x76 => op(F3rc, C::InvokeDirect, P::Method),
        0x77 => op(F3rc, C::InvokeStatic, P::Method),
        0x78 => op(F3rc, C::InvokeInterface, P::Method),
        0x7c | 0x7e => op(F12x, C::BitOp, P::None),
        0x7b..=0x8f => op(F12x, C::ArithOp, P::None),
        0x95..=0x9a | 0xa0..=0xa5 => op(F23x, C::BitOp, P::None),
        0x90..=0xaf => op(F23x, C::ArithOp, P::None),
        0xb5..=0xba | 0xc0..=0xc5 => op(F12x, C::BitOp, P::None),
        0xb0..=0xcf => op(F12x, C::ArithOp, P::None),
        0xd5..=0xd7 => op(F22s, C::BitOp, P::None),
        0xd0..=0xd7 => op(F22s, C::ArithOp, P::None),
        0xdd..=0xe2 => op(F22b, C::BitOp, P::None),
        0xd8..=0xe2 => op(F22b, C::ArithOp, P::None),
        0xfa => op(F45cc, C::InvokeVirtual, P::Method),
        0xfb => op(F4rcc, C::InvokeVirtual, P::Method),
        0xfc => op(F35c, C::Other, P::Other),
        0xfd => op(F3rc, C::Other, P::Other),
        0xfe | 0xff => op(F21c, C::Other, P::Other),
        // 0x3e..=0x43, 0x73, 0x79, 0x7a, 0xe3..=0xf9
        _ => op(F10x, C::Other, P::None),
    }
}
