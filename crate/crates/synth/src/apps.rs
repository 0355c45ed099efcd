//! Synthetic apps with planted obfuscation.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use obfuscan_core::detect::packing::bundled_signature_db;
use obfuscan_core::detect::renaming::lexicographic_name;
use obfuscan_core::ir::{dump_textual_ir, AppModel, ClassDef, FieldDef, FileEntry, Instr, MemberRef, MethodDef, OpcodeClass, Origin};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::apk::{ApkBuilder, MANIFEST_STUB};
use crate::dex::{assemble_dex, canonical_member_order, AssembleError};

const WORDS: &str = include_str!("../data/words.txt");
const VERBS: [&str; 16] = [
    "get", "set", "load", "update", "create", "remove", "show", "init", "has", "find", "parse", "build", "read", "write",
    "send", "check",
];
const CONFUSABLE_HEAD: [char; 4] = ['I', 'l', 'O', 'o'];
const CONFUSABLE: [char; 6] = ['I', 'l', '1', 'O', '0', 'o'];
const STRING: &str = "Ljava/lang/String;";

/// Targets used for recoverable reflective calls: (class, method).
pub const REFLECTION_TARGETS: [(&str, &str); 6] = [
    ("android.os.SystemProperties", "get"),
    ("android.telephony.TelephonyManager", "getDeviceId"),
    ("java.lang.Runtime", "exec"),
    ("android.app.ActivityThread", "currentApplication"),
    ("dalvik.system.DexClassLoader", "loadClass"),
    ("android.content.pm.PackageManager", "getInstalledPackages"),
];

/// The English identifier wordlist.
pub fn words() -> &'static [&'static str] {
    static W: OnceLock<Vec<&'static str>> = OnceLock::new();
    W.get_or_init(|| WORDS.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next().map_or_else(String::new, |f| f.to_ascii_uppercase().to_string() + c.as_str())
}

/// `lowerCamel` (or `UpperCamel`) from `parts`.
pub fn camel(parts: &[&str], upper_first: bool) -> String {
    parts
        .iter()
        .enumerate()
        .map(|(i, w)| if i == 0 && !upper_first { w.to_string() } else { capitalize(w) })
        .collect()
}

fn word(r: &mut ChaCha8Rng) -> &'static str {
    words().choose(r).expect("wordlist is not empty")
}

/// A name over `I l 1 O 0 o` of length 4..=10 that starts with a letter.
pub fn confusable_name(r: &mut ChaCha8Rng) -> String {
    let len = r.gen_range(4..=10);
    let mut s = String::with_capacity(len);
    s.push(*CONFUSABLE_HEAD.choose(r).expect("nonempty"));
    for _ in 1..len {
        s.push(*CONFUSABLE.choose(r).expect("nonempty"));
    }
    s
}

/// Uniform-random printable ASCII of length 12..=40.
pub fn random_printable(r: &mut ChaCha8Rng) -> String {
    let len = r.gen_range(12..=40);
    (0..len).map(|_| char::from(r.gen_range(0x20u8..=0x7e))).collect()
}

fn sentence(r: &mut ChaCha8Rng) -> String {
    let n = r.gen_range(1..=5);
    let s = (0..n).map(|_| word(r)).collect::<Vec<_>>().join(" ");
    if r.gen_bool(0.5) { capitalize(&s) } else { s }
}

/// A short English phrase of the kind found in UI and log strings.
pub fn english_phrase(r: &mut ChaCha8Rng) -> String {
    let (a, b) = (word(r), word(r));
    match r.gen_range(0..12) {
        0 => format!("Unable to {a} {b}"),
        1 => format!("https://api.example.com/{a}/{b}"),
        2 => format!("{a}_{b}"),
        _ => sentence(r),
    }
}

/// Produces unique names in one of two styles.
enum Namer {
    Natural(BTreeSet<String>),
    /// Counter into the lexicographic sequence plus the confusable rate.
    Obfuscated(usize, f64, BTreeSet<String>),
}

impl Namer {
    fn class(&mut self, r: &mut ChaCha8Rng) -> String {
        match self {
            Namer::Natural(used) => loop {
                let n = if r.gen_bool(0.5) { camel(&[word(r)], true) } else { camel(&[word(r), word(r)], true) };
                if used.insert(n.clone()) {
                    return n;
                }
            },
            Namer::Obfuscated(..) => self.short(r),
        }
    }

    fn method(&mut self, r: &mut ChaCha8Rng) -> String {
        match self {
            Namer::Natural(used) => loop {
                let verb = VERBS.choose(r).expect("nonempty");
                let n = camel(&[verb, word(r)], false);
                if used.insert(n.clone()) {
                    return n;
                }
            },
            Namer::Obfuscated(..) => self.short(r),
        }
    }

    fn field(&mut self, r: &mut ChaCha8Rng) -> String {
        match self {
            Namer::Natural(used) => loop {
                let n = if r.gen_bool(0.5) { word(r).to_string() } else { camel(&[word(r), word(r)], false) };
                if used.insert(n.clone()) {
                    return n;
                }
            },
            Namer::Obfuscated(..) => self.short(r),
        }
    }

    fn short(&mut self, r: &mut ChaCha8Rng) -> String {
        let Namer::Obfuscated(next, confusable, used) = self else { unreachable!() };
        if *confusable > 0.0 && r.gen_bool(*confusable) {
            loop {
                let n = confusable_name(r);
                if used.insert(n.clone()) {
                    return n;
                }
            }
        }
        let n = lexicographic_name(*next);
        *next += 1;
        n
    }

    /// Restarts the lexicographic sequence, as obfuscators do per scope.
    fn new_scope(&mut self) {
        if let Namer::Obfuscated(next, ..) = self {
            *next = 0;
        }
    }
}

/// What to plant in a generated app.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AppSpec {
    pub renamed: bool,
    /// Percentage of obfuscated names drawn from the confusable alphabet
    /// rather than the lexicographic sequence.
    pub confusable_rate: Option<u8>,
    pub overloaded: bool,
    pub encrypted_strings: bool,
    /// One entry per reflective call site: whether its target is a constant.
    pub reflection_sites: Vec<bool>,
    /// Index into the bundled packer database; the first file signature of
    /// that packer is planted.
    pub packer: Option<usize>,
}

/// A generated app: the model plus the raw bytes of non-code files.
#[derive(Debug, Clone)]
pub struct SynthApp {
    pub model: AppModel,
    pub extra_files: Vec<(String, Vec<u8>)>,
}

impl SynthApp {
    pub fn dex(&self) -> Result<Vec<u8>, AssembleError> {
        assemble_dex(&self.model.classes)
    }

    /// Zip archive with a manifest, `classes.dex` and the extra files.
    pub fn to_apk(&self) -> Result<Vec<u8>, AssembleError> {
        let mut b = ApkBuilder::new().with_manifest().dex(self.dex()?);
        for (p, d) in &self.extra_files {
            b = b.file(p.clone(), d.clone());
        }
        Ok(b.build())
    }

    /// The model with file entries matching [`Self::to_apk`].
    pub fn with_file_entries(&self) -> Result<AppModel, AssembleError> {
        let mut m = self.model.clone();
        let dex = self.dex()?;
        m.file_entries = vec![
            FileEntry::from_bytes("AndroidManifest.xml", MANIFEST_STUB.len() as u64, MANIFEST_STUB),
            FileEntry::from_bytes("classes.dex", dex.len() as u64, &dex),
        ];
        for (p, d) in &self.extra_files {
            m.file_entries.push(FileEntry::from_bytes(p.clone(), d.len() as u64, d));
        }
        Ok(m)
    }

    pub fn to_textual_ir(&self) -> Result<String, AssembleError> {
        Ok(dump_textual_ir(&self.with_file_entries()?))
    }
}

fn log_call() -> MemberRef {
    MemberRef::new("android.util.Log", "d", "(Ljava/lang/String;Ljava/lang/String;)I")
}

/// Body of an ordinary method: logs its strings, optionally through the
/// decoder, touches a field and returns. `this` is in v3.
fn ordinary_method(name: String, class: &str, strings: &[String], decoder: Option<&MemberRef>, field: Option<&FieldDef>) -> MethodDef {
    let mut m = MethodDef::new(name, "()V", 4);
    for s in strings {
        m.push(Instr::const_string(0, s.clone()));
        if let Some(d) = decoder {
            m.push(Instr::invoke(OpcodeClass::InvokeStatic, [0], d.clone()));
            m.push(Instr::new(OpcodeClass::MoveResult, [0]));
        }
        m.push(Instr::invoke(OpcodeClass::InvokeStatic, [0, 0], log_call()));
    }
    if let Some(f) = field {
        let fref = MemberRef::new(class, f.name.clone(), f.type_desc.clone());
        m.push(Instr::new(OpcodeClass::FieldRead, [1, 3]).with_target(fref));
    }
    m.push(Instr::new(OpcodeClass::Return, []));
    m
}

fn constructor() -> MethodDef {
    let mut m = MethodDef::new("<init>", "()V", 1);
    m.push(Instr::invoke(OpcodeClass::InvokeDirect, [0], MemberRef::new("java.lang.Object", "<init>", "()V")));
    m.push(Instr::new(OpcodeClass::Return, []));
    m
}

/// Static `(String)String` XOR decoder with a loop over the characters.
fn decoder_method(name: &str) -> MethodDef {
    use OpcodeClass as C;
    let mut m = MethodDef::new(name, "(Ljava/lang/String;)Ljava/lang/String;", 6);
    m.push(Instr::invoke(C::InvokeVirtual, [5], MemberRef::new("java.lang.String", "toCharArray", "()[C")));
    m.push(Instr::new(C::MoveResult, [0]));
    m.push(Instr::const_int(1, 0));
    m.push(Instr::new(C::ArrayOp, [2, 0]));
    m.push(Instr::jump(C::Branch, [1, 2], 11));
    m.push(Instr::new(C::ArrayOp, [3, 0, 1]));
    m.push(Instr::const_int(4, 0x5a));
    m.push(Instr::new(C::BitOp, [3, 3, 4]));
    m.push(Instr::new(C::ArrayOp, [3, 0, 1]));
    m.push(Instr::new(C::ArithOp, [1, 4]));
    m.push(Instr::jump(C::Goto, [], 4));
    m.push(Instr::new(C::NewInstance, [3]));
    m.push(Instr::invoke(C::InvokeDirect, [3, 0], MemberRef::new("java.lang.String", "<init>", "([C)V")));
    m.push(Instr::new(C::Return, [3]));
    m
}

/// `Class.forName(c).getMethod(m, null).invoke(null, null)` as a static
/// method. Constant names when `recoverable`, otherwise read from static
/// fields of `owner`.
pub fn reflection_method(name: &str, owner: &str, recoverable: bool, target: (&str, &str), field_names: (&str, &str)) -> MethodDef {
    use OpcodeClass as C;
    let mut m = MethodDef::new(name, "()V", 5);
    if recoverable {
        m.push(Instr::const_string(0, target.0));
    } else {
        m.push(Instr::new(C::StaticRead, [0]).with_target(MemberRef::new(owner, field_names.0, STRING)));
    }
    m.push(Instr::invoke(
        C::InvokeStatic,
        [0],
        MemberRef::new("java.lang.Class", "forName", "(Ljava/lang/String;)Ljava/lang/Class;"),
    ));
    m.push(Instr::new(C::MoveResult, [0]));
    if recoverable {
        m.push(Instr::const_string(1, target.1));
    } else {
        m.push(Instr::new(C::StaticRead, [1]).with_target(MemberRef::new(owner, field_names.1, STRING)));
    }
    m.push(Instr::const_int(2, 0));
    m.push(Instr::invoke(
        C::InvokeVirtual,
        [0, 1, 2],
        MemberRef::new("java.lang.Class", "getMethod", "(Ljava/lang/String;[Ljava/lang/Class;)Ljava/lang/reflect/Method;"),
    ));
    m.push(Instr::new(C::MoveResult, [3]));
    m.push(Instr::const_int(4, 0));
    m.push(Instr::invoke(
        C::InvokeVirtual,
        [3, 4, 2],
        MemberRef::new("java.lang.reflect.Method", "invoke", "(Ljava/lang/Object;[Ljava/lang/Object;)Ljava/lang/Object;"),
    ));
    m.push(Instr::new(C::Return, []));
    m
}

/// Parameter lists used for planted overloads.
fn overload_protos() -> Vec<String> {
    let types = ["I", "J", "Z", "F", STRING];
    let mut out: Vec<String> = types.iter().map(|t| format!("({t})V")).collect();
    for a in types {
        for b in types {
            out.push(format!("({a}{b})V"));
        }
    }
    out
}

/// Unrelated bodies that share one name: varying size, calls and fields.
fn overload_group(class: &str, count: usize, r: &mut ChaCha8Rng) -> (Vec<MethodDef>, Vec<FieldDef>) {
    let mut protos = overload_protos();
    protos.shuffle(r);
    let fields: Vec<FieldDef> = (0..count)
        .map(|i| FieldDef {
            name: format!("f{i}"),
            type_desc: "I".into(),
        })
        .collect();
    let methods = protos
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, proto)| {
            let mut m = MethodDef::new("a", proto, 8);
            for k in 0..=i % 4 {
                let callee = MemberRef::new(format!("java.util.Helper{i}"), format!("op{k}"), "()V");
                m.push(Instr::invoke(OpcodeClass::InvokeStatic, [], callee));
            }
            for _ in 0..i % 5 {
                m.push(Instr::new(OpcodeClass::ArithOp, [0, 1]));
            }
            let f = MemberRef::new(class, fields[i].name.clone(), "I");
            m.push(Instr::new(OpcodeClass::StaticRead, [0]).with_target(f));
            if i % 2 == 0 {
                m.push(Instr::jump(OpcodeClass::Branch, [0], m.instructions.len() + 1));
            }
            m.push(Instr::new(OpcodeClass::Return, []));
            m
        })
        .collect();
    (methods, fields)
}

/// A bundled-database library class, marked as library code.
fn library_class() -> ClassDef {
    let mut c = ClassDef::new("androidx.collection.SimpleArrayMap", "java.lang.Object");
    c.is_library = true;
    for name in ["put", "get", "size", "indexOfKey"] {
        let mut m = MethodDef::new(name, "()V", 1);
        m.push(Instr::new(OpcodeClass::Return, []));
        c.methods.push(m);
    }
    c.methods.push(constructor());
    c
}

/// Generates an app following `spec`. Identical inputs give identical apps.
pub fn build_app(app_id: &str, spec: &AppSpec, seed: u64) -> SynthApp {
    let r = &mut rng(seed);
    let mut namer = if spec.renamed {
        let rate = f64::from(spec.confusable_rate.unwrap_or(0)) / 100.0;
        Namer::Obfuscated(0, rate, BTreeSet::new())
    } else {
        Namer::Natural(BTreeSet::new())
    };
    let package = if spec.renamed {
        format!("com.{}.{}", word(r), lexicographic_name(r.gen_range(0..26)))
    } else {
        format!("com.{}.{}", word(r), word(r))
    };

    let n_strings = r.gen_range(8..=24);
    let strings: Vec<String> = (0..n_strings)
        .map(|_| if spec.encrypted_strings { random_printable(r) } else { english_phrase(r) })
        .collect();

    let n_classes = r.gen_range(4..=8);
    let mut classes = Vec::new();
    let mut decoder = None;
    let with_reflection = !spec.reflection_sites.is_empty();
    let mut class_names: Vec<String> = (0..n_classes + usize::from(with_reflection)).map(|_| namer.class(r)).collect();
    let reflection_class = if with_reflection { class_names.pop() } else { None };
    if spec.encrypted_strings {
        namer.new_scope();
        let dname = match &namer {
            Namer::Natural(_) => "decode".to_string(),
            Namer::Obfuscated(..) => namer.method(r),
        };
        decoder = Some(MemberRef::new(format!("{package}.{}", class_names[0]), dname, "(Ljava/lang/String;)Ljava/lang/String;"));
    }
    let mut chunks = strings.chunks(strings.len().div_ceil(n_classes * 2)).peekable();
    for (ci, cname) in class_names.iter().enumerate() {
        namer.new_scope();
        let full = format!("{package}.{cname}");
        let mut c = ClassDef::new(full.clone(), "java.lang.Object");
        let n_fields = r.gen_range(1..=4);
        for _ in 0..n_fields {
            let name = namer.field(r);
            let type_desc = if r.gen_bool(0.5) { "I" } else { STRING };
            c.fields.push(FieldDef {
                name,
                type_desc: type_desc.into(),
            });
        }
        c.methods.push(constructor());
        if let (0, Some(d)) = (ci, &decoder) {
            c.methods.push(decoder_method(&d.name));
        }
        let n_methods = r.gen_range(3..=7);
        for mi in 0..n_methods {
            let mut name = namer.method(r);
            while c.methods.iter().any(|m| m.name == name) {
                name = namer.method(r);
            }
            let body_strings: Vec<String> = if mi < 2 { chunks.next().map(<[String]>::to_vec).unwrap_or_default() } else { Vec::new() };
            let field = c.fields.get(mi % n_fields).cloned();
            c.methods.push(ordinary_method(name, &full, &body_strings, decoder.as_ref(), field.as_ref()));
        }
        classes.push(c);
    }
    // Any strings left over go to the last class.
    let rest: Vec<String> = chunks.flatten().cloned().collect();
    if !rest.is_empty() {
        let last = classes.last_mut().expect("at least four classes");
        let full = last.name.clone();
        let mut name = namer.method(r);
        while last.methods.iter().any(|m| m.name == name) {
            name = namer.method(r);
        }
        last.methods.push(ordinary_method(name, &full, &rest, decoder.as_ref(), None));
    }

    if let Some(cname) = reflection_class {
        let full = format!("{package}.{cname}");
        let mut c = ClassDef::new(full.clone(), "java.lang.Object");
        namer.new_scope();
        let (fc, fm) = (namer.field(r), namer.field(r));
        for f in [&fc, &fm] {
            c.fields.push(FieldDef {
                name: f.clone(),
                type_desc: STRING.into(),
            });
        }
        for (i, &recoverable) in spec.reflection_sites.iter().enumerate() {
            let target = REFLECTION_TARGETS[(seed as usize + i) % REFLECTION_TARGETS.len()];
            let name = namer.method(r);
            c.methods.push(reflection_method(&name, &full, recoverable, target, (&fc, &fm)));
        }
        classes.push(c);
    }

    if spec.overloaded {
        let full = format!("{package}.{}", if spec.renamed { "ab".to_string() } else { "Overloads".to_string() });
        let mut c = ClassDef::new(full.clone(), "java.lang.Object");
        let (methods, fields) = overload_group(&full, r.gen_range(10..=14), r);
        c.methods = methods;
        c.fields = fields;
        classes.push(c);
    }

    classes.push(library_class());

    let mut extra_files = vec![("res/values/strings.xml".to_string(), format!("<resources>{}</resources>", word(r)).into_bytes())];
    if let Some(p) = spec.packer {
        let db = bundled_signature_db();
        let sig = &db[p % db.len()];
        let path = sig.file_signatures[0].replace("*/", "lib/");
        extra_files.push((path, vec![0x7f; 64]));
    }

    let mut model = AppModel::new(app_id, Origin::TextualIr);
    // Member order as a DEX parse returns it, so APK and IR forms agree.
    model.classes = canonical_member_order(&classes);
    SynthApp { model, extra_files }
}

/// An app named in the natural or obfuscated style, for classifier
/// training. Obfuscated apps use confusable names in about 60% of cases.
pub fn names_app(app_id: &str, obfuscated: bool, seed: u64) -> SynthApp {
    let confusable = obfuscated && rng(seed ^ 0x5eed).gen_bool(0.6);
    let spec = AppSpec {
        renamed: obfuscated,
        confusable_rate: confusable.then_some(40),
        ..Default::default()
    };
    build_app(app_id, &spec, seed)
}

/// An app whose strings are English text or random printable ASCII.
pub fn strings_app(app_id: &str, encrypted: bool, seed: u64) -> SynthApp {
    let spec = AppSpec {
        encrypted_strings: encrypted,
        ..Default::default()
    };
    build_app(app_id, &spec, seed)
}
