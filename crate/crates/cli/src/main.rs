use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use obfuscan_core::config::{ConfigError, ScanConfig, CONFIG_ENV};
use obfuscan_core::detect::packing::load_signature_db;
use obfuscan_core::detect::slicing::resolve_register;
use obfuscan_core::features::{Hyper, ModelError};
use obfuscan_core::ingest::{load_input, LibraryPrefixList};
use obfuscan_core::ir::load_textual_ir;
use obfuscan_core::report::{
    aggregate, canonical_json, parse_manifest, run_parallel, ScanInput, ScanReport, Scanner, SetupError,
};
use obfuscan_core::training::{train_with_holdout, TrainTarget};

// sysexits
const EX_USAGE: u8 = 64;
const EX_DATAERR: u8 = 65;
const EX_NOINPUT: u8 = 66;
const EX_CANTCREAT: u8 = 73;
const EX_CONFIG: u8 = 78;
/// Scan finished but at least one input was skipped.
const EX_SKIPPED: u8 = 2;

#[derive(Parser)]
#[command(name = "obfuscan", version, about = "Detect obfuscation techniques in Android apps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan APKs or textual-IR dumps, one report per input.
    Scan(ScanArgs),
    /// Train a renaming or string-encryption model from a labelled manifest.
    Train(TrainArgs),
    /// Fold a directory of scan reports into one corpus report.
    Aggregate(AggregateArgs),
    /// Backward-slice one register at one instruction of a textual-IR method.
    Slice(SliceArgs),
    /// Print the packer signature database in use.
    Signatures(SignaturesArgs),
}

#[derive(Args)]
struct ScanArgs {
    /// Input files or directories (directories are scanned one level deep).
    paths: Vec<PathBuf>,
    /// Manifest of `<source_tag> <path>` lines, scanned after `paths`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// TOML config; falls back to $OBFUSCAN_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for per-app reports. Without it reports go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Source tag for inputs given as paths.
    #[arg(long, default_value = "default")]
    tag: String,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    renaming_model: Option<PathBuf>,
    #[arg(long)]
    stringenc_model: Option<PathBuf>,
    #[arg(long)]
    libs: Option<PathBuf>,
    #[arg(long)]
    signatures: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// `renaming` or `stringenc`.
    #[arg(long)]
    technique: String,
    /// Manifest of `<source_tag> <path> <label>` lines.
    #[arg(long)]
    corpus: PathBuf,
    /// Where to write the model.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    holdout: f64,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    libs: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Directory holding `*.json` scan reports.
    dir: PathBuf,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the corpus report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SliceArgs {
    ir_file: PathBuf,
    /// Fully qualified class name, dotted.
    class: String,
    /// Method name, optionally with its descriptor: `name` or `name(I)V`.
    method: String,
    /// Index of the instruction that uses the register.
    idx: usize,
    /// Register number, with or without a leading `v`.
    reg: String,
}

#[derive(Args)]
struct SignaturesArgs {
    #[arg(long)]
    signatures: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Failure { code, msg: msg.into() }
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EX_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Scan(a) => cmd_scan(a),
        Command::Train(a) => cmd_train(a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::Slice(a) => cmd_slice(a),
        Command::Signatures(a) => cmd_signatures(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("obfuscan: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::new(EX_NOINPUT, format!("{}: {e}", path.display())))
}

fn config_failure(e: ConfigError) -> Failure {
    let code = match &e {
        ConfigError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EX_NOINPUT,
        _ => EX_CONFIG,
    };
    Failure::new(code, e.to_string())
}

fn setup_failure(e: SetupError) -> Failure {
    let code = match &e {
        SetupError::Model { source: ModelError::BadModelFile(_), .. } => EX_DATAERR,
        SetupError::Libs { .. } => EX_NOINPUT,
        _ => EX_CONFIG,
    };
    Failure::new(code, e.to_string())
}

/// `--config`, then $OBFUSCAN_CONFIG, then defaults.
fn load_config(flag: Option<&Path>) -> Result<ScanConfig, Failure> {
    let from_env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    match flag.map(Path::to_path_buf).or(from_env) {
        Some(p) => ScanConfig::load(&p).map_err(config_failure),
        None => Ok(ScanConfig::default()),
    }
}

fn existing(path: PathBuf) -> Result<PathBuf, Failure> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::new(EX_NOINPUT, format!("{}: no such file", path.display())))
    }
}

/// Writes one document to stdout. A closed pipe is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.write_all(b"\n"));
}

fn print_json(v: &Value) {
    emit(&canonical_json(v));
}

fn report_value(r: &ScanReport) -> Value {
    serde_json::from_str(&r.to_json()).expect("reports serialize to JSON")
}

struct Job {
    path: PathBuf,
    tag: String,
    /// File name of the report under `--out`.
    report_name: String,
}

/// Expands directories to their sorted regular files.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| Failure::new(EX_NOINPUT, format!("{}: {e}", p.display())))?;
            let mut files: Vec<PathBuf> =
                entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

/// Report names follow input order, so they do not depend on scheduling.
fn plan_jobs(inputs: Vec<(PathBuf, String)>) -> Vec<Job> {
    let mut taken = BTreeSet::new();
    inputs
        .into_iter()
        .map(|(path, tag)| {
            let base = stem(&path);
            let mut name = format!("{base}.json");
            let mut k = 2;
            while !taken.insert(name.clone()) {
                name = format!("{base}-{k}.json");
                k += 1;
            }
            Job {
                path,
                tag,
                report_name: name,
            }
        })
        .collect()
}

fn cmd_scan(a: ScanArgs) -> Outcome {
    let mut inputs: Vec<(PathBuf, String)> = expand(&a.paths)?.into_iter().map(|p| (p, a.tag.clone())).collect();
    if let Some(m) = &a.manifest {
        let text = String::from_utf8(read_file(m)?)
            .map_err(|_| Failure::new(EX_DATAERR, format!("{}: not UTF-8", m.display())))?;
        let base = m.parent().unwrap_or(Path::new(""));
        let entries = parse_manifest(&text, base).map_err(|e| Failure::new(EX_DATAERR, format!("{}: {e}", m.display())))?;
        inputs.extend(entries.into_iter().map(|e| (e.path, e.source_tag)));
    }
    if inputs.is_empty() {
        return Err(Failure::new(EX_USAGE, "scan: no input paths"));
    }

    let mut config = load_config(a.config.as_deref())?;
    for (slot, flag) in [
        (&mut config.renaming_model, a.renaming_model),
        (&mut config.stringenc_model, a.stringenc_model),
        (&mut config.libs, a.libs),
        (&mut config.signatures, a.signatures),
    ] {
        if let Some(p) = flag {
            *slot = Some(existing(p)?);
        }
    }
    if a.parallelism == Some(0) {
        return Err(Failure::new(EX_USAGE, "--parallelism must be at least 1"));
    }
    let parallelism = a
        .parallelism
        .or(config.parallelism)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let scanner = Scanner::from_config(config).map_err(setup_failure)?;

    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::new(EX_CANTCREAT, format!("{}: {e}", dir.display())))?;
    }
    let jobs = plan_jobs(inputs);
    let results = run_parallel(&jobs, parallelism, |job| {
        let report = match std::fs::read(&job.path) {
            Ok(bytes) => scanner.scan(&ScanInput {
                app_id: stem(&job.path),
                source_tag: job.tag.clone(),
                bytes,
            }),
            Err(e) => ScanReport::skipped(&stem(&job.path), &job.tag, format!("{}: {e}", job.path.display())),
        };
        if let Some(reason) = &report.skipped {
            eprintln!("obfuscan: skipped {}: {reason}", job.path.display());
        }
        let written = match &a.out {
            Some(dir) => {
                let target = dir.join(&job.report_name);
                std::fs::write(&target, report.to_json() + "\n")
                    .map(|_| Some(target))
                    .map_err(|e| format!("{}: {e}", dir.join(&job.report_name).display()))
            }
            None => Ok(None),
        };
        (report, written)
    });

    let mut reports = Vec::with_capacity(results.len());
    let mut files = Vec::new();
    for (report, written) in results {
        match written {
            Ok(Some(p)) => files.push(p.display().to_string()),
            Ok(None) => {}
            Err(msg) => return Err(Failure::new(EX_CANTCREAT, msg)),
        }
        reports.push(report);
    }
    let skipped = reports.iter().filter(|r| r.is_skipped()).count();
    if a.out.is_some() {
        print_json(&json!({
            "scanned": reports.len() - skipped,
            "skipped": skipped,
            "reports": files,
        }));
    } else {
        print_json(&Value::Array(reports.iter().map(report_value).collect()));
    }
    Ok(if skipped > 0 { EX_SKIPPED } else { 0 })
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let target = TrainTarget::parse(&a.technique)
        .ok_or_else(|| Failure::new(EX_USAGE, format!("unknown technique {:?}", a.technique)))?;
    let libs = match &a.libs {
        Some(p) => LibraryPrefixList::load(p).map_err(|e| Failure::new(EX_NOINPUT, format!("{}: {e}", p.display())))?,
        None => LibraryPrefixList::bundled(),
    };
    let text = String::from_utf8(read_file(&a.corpus)?)
        .map_err(|_| Failure::new(EX_DATAERR, format!("{}: not UTF-8", a.corpus.display())))?;
    let base = a.corpus.parent().unwrap_or(Path::new(""));
    let entries =
        parse_manifest(&text, base).map_err(|e| Failure::new(EX_DATAERR, format!("{}: {e}", a.corpus.display())))?;

    let mut samples = Vec::with_capacity(entries.len());
    for e in &entries {
        let shown = e.path.display();
        let label = e
            .label
            .as_deref()
            .ok_or_else(|| Failure::new(EX_DATAERR, format!("{shown}: no label")))?;
        let y = target
            .parse_label(label)
            .ok_or_else(|| Failure::new(EX_DATAERR, format!("{shown}: unknown label {label:?}")))?;
        let bytes = read_file(&e.path)?;
        let ing = load_input(&stem(&e.path), &bytes, &libs).map_err(|err| Failure::new(EX_DATAERR, format!("{shown}: {err}")))?;
        samples.push((target.vectorize(&ing.app), y));
    }

    let defaults = Hyper::default();
    let hyper = Hyper {
        lambda: a.lambda.unwrap_or(defaults.lambda),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        seed: a.seed.unwrap_or(defaults.seed),
    };
    let (model, result) = train_with_holdout(&samples, hyper, a.holdout, target.positive_label()).map_err(|e| {
        let code = match e {
            ModelError::BadHyper(_) => EX_USAGE,
            _ => EX_DATAERR,
        };
        Failure::new(code, e.to_string())
    })?;
    model
        .save(&a.out)
        .map_err(|e| Failure::new(EX_CANTCREAT, format!("{}: {e}", a.out.display())))?;
    print_json(&json!({
        "technique": target,
        "model": a.out.display().to_string(),
        "train_count": result.train_count,
        "holdout_count": result.holdout_count,
        "holdout": result.holdout,
    }));
    Ok(0)
}

fn cmd_aggregate(a: AggregateArgs) -> Outcome {
    let entries = std::fs::read_dir(&a.dir).map_err(|e| Failure::new(EX_NOINPUT, format!("{}: {e}", a.dir.display())))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect();
    paths.sort();
    let top_n = match a.top_n {
        Some(n) => n,
        None => load_config(a.config.as_deref())?.top_n,
    };

    let mut reports = Vec::new();
    for p in paths {
        if p.extension().and_then(|e| e.to_str()) != Some("json") {
            eprintln!("obfuscan: warning: ignoring {}", p.display());
            continue;
        }
        let parsed = std::fs::read_to_string(&p)
            .map_err(|e| e.to_string())
            .and_then(|t| ScanReport::from_json(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => reports.push(r),
            Err(e) => eprintln!("obfuscan: warning: ignoring {}: {e}", p.display()),
        }
    }
    let corpus = aggregate(&reports, top_n).to_json();
    if let Some(out) = &a.out {
        std::fs::write(out, corpus.clone() + "\n")
            .map_err(|e| Failure::new(EX_CANTCREAT, format!("{}: {e}", out.display())))?;
    }
    emit(&corpus);
    Ok(0)
}

fn cmd_slice(a: SliceArgs) -> Outcome {
    let reg: u32 = a
        .reg
        .strip_prefix('v')
        .unwrap_or(&a.reg)
        .parse()
        .map_err(|_| Failure::new(EX_USAGE, format!("bad register {:?}", a.reg)))?;
    let bytes = read_file(&a.ir_file)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Failure::new(EX_DATAERR, format!("{}: not UTF-8", a.ir_file.display())))?;
    let app = load_textual_ir(text).map_err(|e| Failure::new(EX_DATAERR, format!("{}: {e}", a.ir_file.display())))?;
    let class = app
        .class(&a.class)
        .ok_or_else(|| Failure::new(EX_DATAERR, format!("no class {}", a.class)))?;
    let (name, descriptor) = match a.method.find('(') {
        Some(i) => (&a.method[..i], Some(&a.method[i..])),
        None => (a.method.as_str(), None),
    };
    let method = class
        .methods
        .iter()
        .find(|m| m.name == name && descriptor.is_none_or(|d| m.proto == d))
        .ok_or_else(|| Failure::new(EX_DATAERR, format!("no method {} in {}", a.method, a.class)))?;
    if a.idx >= method.instructions.len() {
        return Err(Failure::new(
            EX_DATAERR,
            format!("index {} out of range, method has {} instructions", a.idx, method.instructions.len()),
        ));
    }
    if reg >= method.register_count {
        return Err(Failure::new(
            EX_DATAERR,
            format!("register v{reg} out of range, method has {}", method.register_count),
        ));
    }
    emit(&canonical_json(&resolve_register(method, a.idx, reg)));
    Ok(0)
}

fn cmd_signatures(a: SignaturesArgs) -> Outcome {
    let db = match a.signatures {
        Some(p) => load_signature_db(&existing(p)?).map_err(|e| Failure::new(EX_DATAERR, e.to_string()))?,
        None => {
            let config = load_config(a.config.as_deref())?;
            Scanner::from_config(config).map_err(setup_failure)?.signatures().to_vec()
        }
    };
    emit(&canonical_json(&db));
    Ok(0)
}
