//! Property checks shared by the proptest suite and the acceptance run.
//! Each check drives a deterministic `TestRunner` for an exact case count.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use obfuscan_core::detect::cfsig::{cf_signature, cfs_distance};
use obfuscan_core::detect::overloading::{function_size_sim, pair_feature, OverloadReport};
use obfuscan_core::detect::packing::{HeuristicFlags, PackingDetection};
use obfuscan_core::detect::reflection::{RecoveryStatus, ReflectionSite};
use obfuscan_core::detect::renaming::{PolicyProfile, RenamingDetection};
use obfuscan_core::detect::slicing::resolve_register;
use obfuscan_core::detect::stringenc::StringEncDetection;
use obfuscan_core::detect::ReflectionReport;
use obfuscan_core::features::{count_grams, featurize, Charset, Gram};
use obfuscan_core::ingest::{load_input, parse_dex, LibraryPrefixList};
use obfuscan_core::ir::{dump_textual_ir, load_textual_ir, Instr, MemberRef, MethodDef, OpcodeClass};
use obfuscan_core::report::{aggregate, CorpusReport, ScanReport, SCHEMA_VERSION};
use obfuscan_synth::{assemble_dex, build_app, AppSpec};

pub const FEATURIZER_CASES: u32 = 1_000;
pub const NORMALIZATION_CASES: u32 = 1_000;
pub const INGEST_FUZZ_CASES: u32 = 10_000;
pub const SLICER_MUTATIONS: u32 = 100;
pub const AGGREGATE_CASES: u32 = 200;
pub const SIMILARITY_CASES: u32 = 500;
pub const GENERATED_IR_CASES: u32 = 32;

pub fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Mixes charset members with separators and a few non-ASCII characters.
fn name_strategy() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_$.<> éßΩ\\-]{0,24}"
}

fn brute_force_grams(names: &[String], charset: &Charset) -> BTreeMap<Gram, u64> {
    let mut out = BTreeMap::new();
    for name in names {
        let chars: Vec<char> = name.chars().collect();
        for i in 0..chars.len().saturating_sub(2) {
            let w = [chars[i], chars[i + 1], chars[i + 2]];
            if w.iter().all(|&c| charset.contains(c)) {
                *out.entry(Gram(w)).or_insert(0) += 1;
            }
        }
    }
    out
}

/// The segmenting featurizer counts exactly the all-in-charset windows.
pub fn check_featurizer_brute_force(cases: u32) -> Result<(), String> {
    run(cases, prop::collection::vec(name_strategy(), 0..6), |names| {
        for charset in [Charset::identifier(), Charset::ascii()] {
            prop_assert_eq!(count_grams(&names, &charset), brute_force_grams(&names, &charset));
        }
        Ok(())
    })
}

pub fn check_normalization(cases: u32) -> Result<(), String> {
    run(cases, prop::collection::vec(name_strategy(), 0..8), |names| {
        for charset in [Charset::identifier(), Charset::ascii()] {
            let v = featurize(&names, &charset);
            if v.is_empty() {
                prop_assert_eq!(v.total(), 0.0);
            } else {
                prop_assert!((v.total() - 1.0).abs() <= 1e-9, "sum {}", v.total());
            }
        }
        Ok(())
    })
}

/// Every `.ir` fixture survives load, dump, load unchanged.
pub fn check_fixture_round_trip() -> Result<usize, String> {
    let mut n = 0;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixture_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ir"))
        .collect();
    paths.sort();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| e.to_string())?;
        let first = load_textual_ir(&text).map_err(|e| format!("{}: {e}", p.display()))?;
        let dumped = dump_textual_ir(&first);
        let second = load_textual_ir(&dumped).map_err(|e| format!("{}: reload: {e}", p.display()))?;
        if first != second || dump_textual_ir(&second) != dumped {
            return Err(format!("{}: round trip changed the model", p.display()));
        }
        n += 1;
    }
    if n == 0 {
        return Err("no fixtures found".into());
    }
    Ok(n)
}

fn spec_strategy() -> impl Strategy<Value = (AppSpec, u64)> {
    (
        any::<bool>(),
        prop::option::of(0u8..=100),
        any::<bool>(),
        any::<bool>(),
        prop::collection::vec(any::<bool>(), 0..3),
        prop::option::of(0usize..6),
        any::<u64>(),
    )
        .prop_map(|(renamed, confusable_rate, overloaded, encrypted_strings, reflection_sites, packer, seed)| {
            (
                AppSpec {
                    renamed,
                    confusable_rate,
                    overloaded,
                    encrypted_strings,
                    reflection_sites,
                    packer,
                },
                seed,
            )
        })
}

pub fn check_generated_ir_round_trip(cases: u32) -> Result<(), String> {
    run(cases, spec_strategy(), |(spec, seed)| {
        let app = build_app("gen", &spec, seed).with_file_entries().expect("file entries");
        let text = dump_textual_ir(&app);
        let back = load_textual_ir(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(back, app);
        Ok(())
    })
}

struct Seeds {
    apk: Vec<u8>,
    dex: Vec<u8>,
    ir: Vec<u8>,
}

fn seeds() -> &'static Seeds {
    static SEEDS: OnceLock<Seeds> = OnceLock::new();
    SEEDS.get_or_init(|| {
        let spec = AppSpec {
            renamed: true,
            confusable_rate: Some(30),
            overloaded: false,
            encrypted_strings: true,
            reflection_sites: vec![true],
            packer: Some(1),
        };
        let app = build_app("fuzz", &spec, 5);
        Seeds {
            apk: app.to_apk().expect("apk"),
            dex: assemble_dex(&app.model.classes).expect("dex"),
            ir: app.to_textual_ir().expect("ir").into_bytes(),
        }
    })
}

#[derive(Debug, Clone)]
enum FuzzInput {
    Raw(Vec<u8>),
    Prefixed(&'static [u8], Vec<u8>),
    Mutated(u8, Vec<(usize, u8)>, Option<usize>),
}

fn fuzz_strategy() -> impl Strategy<Value = FuzzInput> {
    let edits = prop::collection::vec((any::<usize>(), any::<u8>()), 0..12);
    prop_oneof![
        prop::collection::vec(any::<u8>(), 0..256).prop_map(FuzzInput::Raw),
        (
            prop::sample::select(vec![&b"PK\x03\x04"[..], b"PK\x05\x06", b"APP ", b"dex\n035\0"]),
            prop::collection::vec(any::<u8>(), 0..512)
        )
            .prop_map(|(p, rest)| FuzzInput::Prefixed(p, rest)),
        (0u8..3, edits, prop::option::of(any::<usize>())).prop_map(|(k, e, t)| FuzzInput::Mutated(k, e, t)),
    ]
}

fn materialize(input: &FuzzInput) -> Vec<u8> {
    match input {
        FuzzInput::Raw(b) => b.clone(),
        FuzzInput::Prefixed(p, rest) => [p.to_vec(), rest.clone()].concat(),
        FuzzInput::Mutated(kind, edits, truncate) => {
            let s = seeds();
            let mut b = match kind {
                0 => s.apk.clone(),
                1 => s.dex.clone(),
                _ => s.ir.clone(),
            };
            for &(pos, byte) in edits {
                let n = b.len();
                b[pos % n] = byte;
            }
            if let Some(t) = truncate {
                let n = b.len();
                b.truncate(t % (n + 1));
            }
            b
        }
    }
}

/// Arbitrary bytes never panic the loaders; a panic fails the case.
pub fn check_ingest_fuzz(cases: u32) -> Result<(), String> {
    let libs = LibraryPrefixList::bundled();
    run(cases, fuzz_strategy(), |input| {
        let bytes = materialize(&input);
        let _ = load_input("fuzz", &bytes, &libs);
        let _ = parse_dex(&bytes);
        Ok(())
    })
}

/// Straight-line filler that only touches registers 8 and up.
fn noise_strategy() -> impl Strategy<Value = Instr> {
    let reg = 8u32..16;
    prop_oneof![
        (reg.clone(), any::<i32>()).prop_map(|(r, v)| Instr::const_int(r, v.into())),
        (reg.clone(), "[a-z]{1,6}").prop_map(|(r, s)| Instr::const_string(r, s)),
        (reg.clone(), reg.clone()).prop_map(|(a, b)| Instr::new(OpcodeClass::Move, [a, b])),
        (reg.clone(), reg.clone()).prop_map(|(a, b)| Instr::new(OpcodeClass::ArithOp, [a, b])),
        (reg.clone(), reg.clone(), reg.clone()).prop_map(|(a, b, c)| Instr::new(OpcodeClass::BitOp, [a, b, c])),
        reg.clone().prop_map(|a| Instr::invoke(
            OpcodeClass::InvokeStatic,
            [a],
            MemberRef::new("x.Noise", "sink", "(I)V")
        )),
    ]
}

/// A value chain ending at a use of v0, with filler interleaved.
#[derive(Debug, Clone)]
pub struct SliceCase {
    chain: Vec<Instr>,
    filler: Vec<(usize, Instr)>,
    insert_at: usize,
    inserted: Instr,
}

fn slice_case_strategy() -> impl Strategy<Value = SliceCase> {
    let chain = prop_oneof![
        "[A-Za-z.]{1,12}".prop_map(|s| vec![Instr::const_string(1, s), Instr::new(OpcodeClass::Move, [0, 1])]),
        ("[a-z]{1,6}", "[a-z]{1,6}").prop_map(|(a, b)| vec![
            Instr::new(OpcodeClass::NewInstance, [2]),
            Instr::invoke(
                OpcodeClass::InvokeDirect,
                [2],
                MemberRef::new("java.lang.StringBuilder", "<init>", "()V")
            ),
            Instr::const_string(3, a),
            Instr::invoke(
                OpcodeClass::InvokeVirtual,
                [2, 3],
                MemberRef::new("java.lang.StringBuilder", "append", "(Ljava/lang/String;)Ljava/lang/StringBuilder;")
            ),
            Instr::const_string(3, b),
            Instr::invoke(
                OpcodeClass::InvokeVirtual,
                [2, 3],
                MemberRef::new("java.lang.StringBuilder", "append", "(Ljava/lang/String;)Ljava/lang/StringBuilder;")
            ),
            Instr::invoke(
                OpcodeClass::InvokeVirtual,
                [2],
                MemberRef::new("java.lang.StringBuilder", "toString", "()Ljava/lang/String;")
            ),
            Instr::new(OpcodeClass::MoveResult, [0]),
        ]),
        (0i64..100).prop_map(|v| vec![Instr::const_int(0, v)]),
    ];
    (
        chain,
        prop::collection::vec((any::<usize>(), noise_strategy()), 0..10),
        any::<usize>(),
        noise_strategy(),
    )
        .prop_map(|(chain, filler, insert_at, inserted)| SliceCase {
            chain,
            filler,
            insert_at,
            inserted,
        })
}

/// An insertion point that does not split an invoke from its move-result.
fn insertion_point(body: &[Instr], pos: usize) -> usize {
    let at = pos % (body.len() + 1);
    if body.get(at).is_some_and(|i| i.opcode == OpcodeClass::MoveResult) {
        at - 1
    } else {
        at
    }
}

impl SliceCase {
    fn body(&self) -> Vec<Instr> {
        let mut body = self.chain.clone();
        for (pos, ins) in &self.filler {
            body.insert(insertion_point(&body, *pos), ins.clone());
        }
        body
    }

    fn method(body: &[Instr]) -> MethodDef {
        let mut m = MethodDef::new("m", "()V", 16);
        for i in body {
            m.push(i.clone());
        }
        m.push(Instr::invoke(
            OpcodeClass::InvokeStatic,
            [0],
            MemberRef::new("java.lang.Class", "forName", "(Ljava/lang/String;)Ljava/lang/Class;"),
        ));
        m.push(Instr::new(OpcodeClass::Return, []));
        m
    }
}

/// Inserting an instruction that touches none of the chain's registers
/// leaves the resolved value alone and only shifts slice indices.
pub fn check_slicer_insertion(cases: u32) -> Result<(), String> {
    run(cases, slice_case_strategy(), |case| {
        let body = case.body();
        let at = insertion_point(&body, case.insert_at);
        let mut mutated = body.clone();
        mutated.insert(at, case.inserted.clone());

        let before_m = SliceCase::method(&body);
        let after_m = SliceCase::method(&mutated);
        let before = resolve_register(&before_m, body.len(), 0);
        let after = resolve_register(&after_m, mutated.len(), 0);

        prop_assert_eq!(&before.resolved_value, &after.resolved_value);
        prop_assert_eq!(&before.partial_info, &after.partial_info);
        let shifted: Vec<usize> = before.slice.iter().map(|&i| if i >= at { i + 1 } else { i }).collect();
        prop_assert_eq!(shifted, after.slice);
        Ok(())
    })
}

#[derive(Debug, Clone)]
pub struct ReportSeed {
    tag: u8,
    skipped: bool,
    renaming: Option<bool>,
    overloading: Option<bool>,
    stringenc: Option<bool>,
    packing: Option<bool>,
    sites: Option<Vec<Option<u8>>>,
}

fn report_strategy() -> impl Strategy<Value = ReportSeed> {
    (
        0u8..3,
        prop::bool::weighted(0.1),
        prop::option::of(any::<bool>()),
        prop::option::of(any::<bool>()),
        prop::option::of(any::<bool>()),
        prop::option::of(any::<bool>()),
        prop::option::of(prop::collection::vec(prop::option::of(0u8..5), 0..4)),
    )
        .prop_map(|(tag, skipped, renaming, overloading, stringenc, packing, sites)| ReportSeed {
            tag,
            skipped,
            renaming,
            overloading,
            stringenc,
            packing,
            sites,
        })
}

pub fn make_report(i: usize, s: &ReportSeed) -> ScanReport {
    let site = |t: &Option<u8>| ReflectionSite {
        method: MemberRef::new("a.A", "m", "()V"),
        forname_idx: 0,
        getmethod_idx: 1,
        invoke_idx: 2,
        recovered_class: t.map(|t| format!("c.C{t}")),
        recovered_method: t.map(|t| format!("m{t}")),
        status: if t.is_some() { RecoveryStatus::Recovered } else { RecoveryStatus::Unrecovered },
        partial_info: None,
        declared_method: false,
    };
    ScanReport {
        schema_version: SCHEMA_VERSION,
        app_id: format!("app-{i}"),
        source_tag: format!("tag{}", s.tag),
        skipped: s.skipped.then(|| "corrupt".to_string()),
        renaming: s.renaming.map(|verdict| RenamingDetection {
            verdict,
            score: 0.5,
            name_count: 3,
            policy: PolicyProfile::default(),
        }),
        overloading: s.overloading.map(|flagged| OverloadReport { groups: vec![], flagged }),
        stringenc: s.stringenc.map(|verdict| StringEncDetection {
            verdict,
            score: -0.5,
            string_count: 2,
            crypto_candidates: vec![],
        }),
        reflection: s.sites.as_ref().map(|v| ReflectionReport::new(v.iter().map(site).collect())),
        packing: s.packing.map(|verdict| PackingDetection {
            matched_packers: vec![],
            heuristic_flags: HeuristicFlags::default(),
            verdict,
        }),
        timings_ms: BTreeMap::new(),
        warnings: vec![],
    }
}

/// Aggregating two halves and merging equals aggregating the whole.
pub fn check_aggregate_additivity(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(report_strategy(), 0..30), any::<usize>(), 1usize..6);
    run(cases, strategy, |(seeds, cut, top_n)| {
        let reports: Vec<ScanReport> = seeds.iter().enumerate().map(|(i, s)| make_report(i, s)).collect();
        let cut = cut % (reports.len() + 1);
        let whole: CorpusReport = aggregate(&reports, top_n);
        let merged = aggregate(&reports[..cut], top_n).merge(&aggregate(&reports[cut..], top_n));
        prop_assert_eq!(whole.to_json(), merged.to_json());
        Ok(())
    })
}

fn method_strategy() -> impl Strategy<Value = MethodDef> {
    let op = prop::sample::select(OpcodeClass::ALL.to_vec());
    (prop::collection::vec((op, 0u32..4, any::<usize>()), 1..40), "\\(I{0,3}\\)[VI]").prop_map(|(ops, proto)| {
        let n = ops.len();
        let mut m = MethodDef::new("f", proto, 4);
        for (opcode, r, t) in ops {
            let ins = match opcode {
                OpcodeClass::Branch => Instr::jump(opcode, [r], t % n),
                OpcodeClass::Goto => Instr::jump(opcode, [], t % n),
                o if o.is_invoke() => Instr::invoke(o, [r], MemberRef::new("p.Q", format!("m{}", t % 5), "(I)V")),
                OpcodeClass::FieldRead | OpcodeClass::FieldWrite => {
                    Instr::new(opcode, [r, 0]).with_target(MemberRef::new("p.Q", format!("f{}", t % 3), "I"))
                }
                o => Instr::new(o, [r]),
            };
            m.push(ins);
        }
        m
    })
}

/// Size similarity is symmetric and in (0, 1]; the signature distance and
/// the composite are symmetric and in [0, 1].
pub fn check_similarity(cases: u32) -> Result<(), String> {
    run(cases, (method_strategy(), method_strategy()), |(a, b)| {
        let ab = function_size_sim(&a, &b).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let ba = function_size_sim(&b, &a).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(ab, ba);
        prop_assert!(ab > 0.0 && ab <= 1.0);
        prop_assert_eq!(function_size_sim(&a, &a).ok(), Some(1.0));

        let (sa, sb) = (cf_signature(&a), cf_signature(&b));
        if !sa.is_empty() && !sb.is_empty() {
            let d1 = cfs_distance(&sa, &sb).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let d2 = cfs_distance(&sb, &sa).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(d1, d2);
            prop_assert!((0.0..=1.0).contains(&d1), "distance {d1}");
        }

        let p = pair_feature(&a, &b).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let q = pair_feature(&b, &a).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(p.composite(), q.composite());
        prop_assert!((0.0..=1.0).contains(&p.composite()));
        Ok(())
    })
}
