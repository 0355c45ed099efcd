//! Line-oriented textual form of [`AppModel`], used for fixtures and debugging.
//!
//! ```text
//! APP <app_id>
//! FILE <size> <path> entropy=<bits-per-byte>
//! CLASS <name> SUPER <superclass|-> [LIB]
//! FIELD <name> <type_desc>
//! METHOD <name> <proto> REGS <n> [NATIVE]
//!   <index> <opcode_class> regs=<r0,r1,...> [lit=<json>] [ref=<owner>-><name>:<desc>] [tgt=<index>]
//!
//! ```
//!
//! A blank line terminates a method.

use std::fmt::Write as _;

use super::{
    AppModel, ClassDef, FieldDef, FileEntry, Instr, InvariantError, Literal, MemberRef, MethodDef,
    OpcodeClass, Origin,
};

#[derive(Debug, thiserror::Error)]
pub enum TextIrError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error(transparent)]
    Invariant(#[from] InvariantError),
}

/// Renders the canonical textual IR of `app`.
pub fn dump_textual_ir(app: &AppModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "APP {}", app.app_id);
    for f in &app.file_entries {
        let _ = writeln!(out, "FILE {} {} entropy={}", f.size_bytes, f.path, f.entropy);
    }
    for c in &app.classes {
        let sup = c.superclass.as_deref().unwrap_or("-");
        let lib = if c.is_library { " LIB" } else { "" };
        let _ = writeln!(out, "CLASS {} SUPER {}{}", c.name, sup, lib);
        for f in &c.fields {
            let _ = writeln!(out, "FIELD {} {}", f.name, f.type_desc);
        }
        for m in &c.methods {
            let native = if m.is_native { " NATIVE" } else { "" };
            let _ = writeln!(out, "METHOD {} {} REGS {}{}", m.name, m.proto, m.register_count, native);
            for ins in &m.instructions {
                write_instr(&mut out, ins);
            }
            out.push('\n');
        }
    }
    out
}

fn write_instr(out: &mut String, ins: &Instr) {
    let regs: Vec<String> = ins.operands.iter().map(u32::to_string).collect();
    let _ = write!(out, "  {} {} regs={}", ins.index, ins.opcode, regs.join(","));
    match &ins.literal {
        Some(Literal::Str(s)) => {
            let _ = write!(out, " lit={}", serde_json::to_string(s).expect("string serializes"));
        }
        Some(Literal::Int(v)) => {
            let _ = write!(out, " lit={v}");
        }
        None => {}
    }
    if let Some(r) = &ins.target {
        let _ = write!(out, " ref={r}");
    }
    if let Some(t) = ins.branch_target {
        let _ = write!(out, " tgt={t}");
    }
    out.push('\n');
}

/// Parses a textual IR document. The result has `origin = TextualIr` and has
/// passed [`AppModel::validate`].
pub fn load_textual_ir(doc: &str) -> Result<AppModel, TextIrError> {
    let mut lines = doc.lines().enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let app_id = loop {
        match lines.next() {
            Some((_, "")) => continue,
            Some((n, l)) => match l.strip_prefix("APP ") {
                Some(id) if !id.trim().is_empty() => break id.trim().to_string(),
                _ => return Err(syntax(n, "expected `APP <app_id>` header")),
            },
            None => return Err(syntax(1, "empty document")),
        }
    };
    let mut app = AppModel::new(app_id, Origin::TextualIr);
    let mut in_method = false;

    for (n, line) in lines {
        if line.trim().is_empty() {
            in_method = false;
            continue;
        }
        if line.starts_with(' ') {
            if !in_method {
                return Err(syntax(n, "instruction outside of a method"));
            }
            let method = app
                .classes
                .last_mut()
                .and_then(|c| c.methods.last_mut())
                .expect("in_method implies an open method");
            let ins = parse_instr(line.trim_start()).map_err(|r| syntax(n, r))?;
            method.instructions.push(ins);
            continue;
        }
        in_method = false;
        let (keyword, rest) = line.split_once(' ').unwrap_or((line, ""));
        match keyword {
            "FILE" => app.file_entries.push(parse_file(rest).map_err(|r| syntax(n, r))?),
            "CLASS" => app.classes.push(parse_class(rest).map_err(|r| syntax(n, r))?),
            "FIELD" => {
                let class = app.classes.last_mut().ok_or_else(|| syntax(n, "FIELD before CLASS"))?;
                let toks: Vec<&str> = rest.split_whitespace().collect();
                let [name, type_desc] = toks[..] else {
                    return Err(syntax(n, "expected `FIELD <name> <type_desc>`"));
                };
                if !super::is_type_descriptor(type_desc) {
                    return Err(syntax(n, format!("invalid type descriptor `{type_desc}`")));
                }
                class.fields.push(FieldDef {
                    name: name.to_string(),
                    type_desc: type_desc.to_string(),
                });
            }
            "METHOD" => {
                let class = app.classes.last_mut().ok_or_else(|| syntax(n, "METHOD before CLASS"))?;
                class.methods.push(parse_method(rest).map_err(|r| syntax(n, r))?);
                in_method = true;
            }
            _ => return Err(syntax(n, format!("unknown record `{keyword}`"))),
        }
    }
    app.validate()?;
    Ok(app)
}

fn syntax(line: usize, reason: impl Into<String>) -> TextIrError {
    TextIrError::Syntax {
        line,
        reason: reason.into(),
    }
}

fn parse_file(rest: &str) -> Result<FileEntry, String> {
    let (size, tail) = rest.split_once(' ').ok_or("expected `FILE <size> <path>`")?;
    let size_bytes: u64 = size.parse().map_err(|_| format!("bad file size `{size}`"))?;
    let (path, entropy) = match tail.rsplit_once(" entropy=") {
        Some((p, e)) => match e.parse::<f64>() {
            Ok(v) => (p, v),
            Err(_) => (tail, 0.0),
        },
        None => (tail, 0.0),
    };
    if path.is_empty() {
        return Err("empty file path".into());
    }
    Ok(FileEntry {
        path: path.to_string(),
        size_bytes,
        entropy,
    })
}

fn parse_class(rest: &str) -> Result<ClassDef, String> {
    let toks: Vec<&str> = rest.split_whitespace().collect();
    let (name, sup, lib) = match toks[..] {
        [name, "SUPER", sup] => (name, sup, false),
        [name, "SUPER", sup, "LIB"] => (name, sup, true),
        _ => return Err("expected `CLASS <name> SUPER <superclass>`".into()),
    };
    Ok(ClassDef {
        name: name.to_string(),
        superclass: (sup != "-").then(|| sup.to_string()),
        fields: Vec::new(),
        methods: Vec::new(),
        is_library: lib,
    })
}

fn parse_method(rest: &str) -> Result<MethodDef, String> {
    let toks: Vec<&str> = rest.split_whitespace().collect();
    let (name, proto, regs, native) = match toks[..] {
        [name, proto, "REGS", regs] => (name, proto, regs, false),
        [name, proto, "REGS", regs, "NATIVE"] => (name, proto, regs, true),
        _ => return Err("expected `METHOD <name> <proto> REGS <n>`".into()),
    };
    let mut m = MethodDef::new(name, proto, regs.parse().map_err(|_| format!("bad register count `{regs}`"))?);
    m.is_native = native;
    Ok(m)
}

fn parse_instr(line: &str) -> Result<Instr, String> {
    let (index, rest) = line.split_once(' ').ok_or("truncated instruction")?;
    let index: usize = index.parse().map_err(|_| format!("bad instruction index `{index}`"))?;
    let (opcode, mut rest) = rest.split_once(' ').unwrap_or((rest, ""));
    let opcode = OpcodeClass::from_name(opcode).ok_or_else(|| format!("unknown opcode class `{opcode}`"))?;

    let regs_tok;
    (regs_tok, rest) = split_token(rest);
    let regs = regs_tok.strip_prefix("regs=").ok_or("missing `regs=`")?;
    let operands = if regs.is_empty() {
        Vec::new()
    } else {
        regs.split(',')
            .map(|r| r.parse::<u32>().map_err(|_| format!("bad register `{r}`")))
            .collect::<Result<_, _>>()?
    };
    let mut ins = Instr::new(opcode, operands);
    ins.index = index;

    if let Some(lit) = rest.strip_prefix("lit=") {
        let mut stream = serde_json::Deserializer::from_str(lit).into_iter::<serde_json::Value>();
        let value = match stream.next() {
            Some(Ok(v)) => v,
            _ => return Err("malformed literal".into()),
        };
        ins.literal = Some(match value {
            serde_json::Value::String(s) => Literal::Str(s),
            serde_json::Value::Number(n) => Literal::Int(n.as_i64().ok_or("literal is not a 64-bit integer")?),
            _ => return Err("literal must be a string or integer".into()),
        });
        rest = lit[stream.byte_offset()..].trim_start_matches(' ');
    }
    if rest.starts_with("ref=") {
        let tok;
        (tok, rest) = split_token(rest);
        ins.target = Some(parse_ref(&tok[4..])?);
    }
    if rest.starts_with("tgt=") {
        let tok;
        (tok, rest) = split_token(rest);
        ins.branch_target = Some(tok[4..].parse().map_err(|_| format!("bad branch target `{tok}`"))?);
    }
    if !rest.is_empty() {
        return Err(format!("unexpected trailing text `{rest}`"));
    }
    Ok(ins)
}

fn split_token(s: &str) -> (&str, &str) {
    match s.split_once(' ') {
        Some((a, b)) => (a, b.trim_start_matches(' ')),
        None => (s, ""),
    }
}

fn parse_ref(s: &str) -> Result<MemberRef, String> {
    let (owner, rest) = s.split_once("->").ok_or_else(|| format!("bad reference `{s}`"))?;
    let (name, desc) = rest.split_once(':').ok_or_else(|| format!("bad reference `{s}`"))?;
    if owner.is_empty() || name.is_empty() || desc.is_empty() {
        return Err(format!("reference `{s}` has an empty component"));
    }
    Ok(MemberRef::new(owner, name, desc))
}
