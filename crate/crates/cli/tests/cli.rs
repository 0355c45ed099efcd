use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use obfuscan_synth::corpus::naming_corpus;
use obfuscan_synth::{build_app, AppSpec};
use serde_json::Value;
use tempfile::TempDir;

fn obfuscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obfuscan"))
        .args(args)
        .env_remove("OBFUSCAN_CONFIG")
        .output()
        .expect("run obfuscan")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&o.stdout))
    })
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn scan_one_fixture_writes_one_report() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("reports");
    let o = obfuscan(&["scan", &fixture("reflection_listing.ir"), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(listing(&out), ["reflection_listing.json"]);
    let summary = stdout_json(&o);
    assert_eq!(summary["scanned"], 1);
    assert_eq!(summary["skipped"], 0);

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("reflection_listing.json")).unwrap()).unwrap();
    let site = &report["reflection"]["sites"][0];
    assert_eq!(site["recovered_class"], "android.os.SystemProperties");
    assert_eq!(site["recovered_method"], "get");
}

#[test]
fn corrupt_zip_is_skipped_with_exit_2() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("broken.apk");
    fs::write(&bad, b"PK\x03\x04 definitely not a zip").unwrap();
    let out = tmp.path().join("reports");
    let o = obfuscan(&["scan", s(&bad), &fixture("md5state.ir"), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("broken.apk"));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("broken.json")).unwrap()).unwrap();
    assert!(report["skipped"].is_string());
    assert_eq!(stdout_json(&o)["skipped"], 1);
}

#[test]
fn scan_without_paths_is_a_usage_error() {
    let o = obfuscan(&["scan"]);
    assert_eq!(code(&o), 64);
    assert!(o.stdout.is_empty());

    let tmp = TempDir::new().unwrap();
    let o = obfuscan(&["scan", s(tmp.path())]);
    assert_eq!(code(&o), 64, "empty directory");
}

#[test]
fn scan_to_stdout_is_a_json_array() {
    let o = obfuscan(&["scan", &fixture("reflection_listing.ir"), &fixture("md5state.ir"), "--tag", "play"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports = stdout_json(&o);
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r["source_tag"] == "play"));
}

#[test]
fn unknown_flag_and_bad_config() {
    assert_eq!(code(&obfuscan(&["scan", "--bogus"])), 64);
    assert_eq!(code(&obfuscan(&["--help"])), 0);

    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("scan.toml");
    fs::write(&cfg, "parallelism = 0\n").unwrap();
    let o = obfuscan(&["scan", &fixture("md5state.ir"), "--config", s(&cfg)]);
    assert_eq!(code(&o), 78);
    fs::write(&cfg, "renaming_model = \"missing.json\"\n").unwrap();
    assert_eq!(code(&obfuscan(&["scan", &fixture("md5state.ir"), "--config", s(&cfg)])), 78);
    let o = obfuscan(&["scan", &fixture("md5state.ir"), "--config", s(&tmp.path().join("absent.toml"))]);
    assert_eq!(code(&o), 66);
}

#[test]
fn config_falls_back_to_the_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("scan.toml");
    fs::write(&cfg, "techniques = [\"packing\"]\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_obfuscan"))
        .args(["scan", &fixture("reflection_listing.ir")])
        .env("OBFUSCAN_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = &stdout_json(&o)[0];
    assert!(r["packing"].is_object());
    assert!(r["reflection"].is_null());
}

/// Writes IR files for a labelled corpus and a manifest naming them.
fn write_corpus(dir: &Path, apps: &[(String, bool)]) -> PathBuf {
    let mut manifest = String::new();
    for (i, (ir, obfuscated)) in apps.iter().enumerate() {
        let name = format!("app{i:03}.ir");
        fs::write(dir.join(&name), ir).unwrap();
        let label = if *obfuscated { "obfuscated" } else { "natural" };
        manifest.push_str(&format!("synthetic {name} {label}\n"));
    }
    let path = dir.join("corpus.txt");
    fs::write(&path, manifest).unwrap();
    path
}

#[test]
fn train_on_a_separable_manifest() {
    let tmp = TempDir::new().unwrap();
    let apps: Vec<(String, bool)> =
        naming_corpus(20, 5).into_iter().map(|(a, y)| (a.to_textual_ir().unwrap(), y)).collect();
    let manifest = write_corpus(tmp.path(), &apps);
    let model = tmp.path().join("renaming.json");
    let o = obfuscan(&["train", "--technique", "renaming", "--corpus", s(&manifest), "--out", s(&model)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let result = stdout_json(&o);
    assert_eq!(result["holdout"]["accuracy"], 1.0);
    assert_eq!(result["holdout_count"], 10);

    // The trained model plugs back into a scan.
    let o = obfuscan(&["scan", &fixture("md5state.ir"), "--renaming-model", s(&model)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout_json(&o)[0]["renaming"].is_object());
}

#[test]
fn train_errors() {
    let tmp = TempDir::new().unwrap();
    let apps: Vec<(String, bool)> =
        naming_corpus(4, 1).into_iter().filter(|(_, y)| !*y).map(|(a, y)| (a.to_textual_ir().unwrap(), y)).collect();
    let manifest = write_corpus(tmp.path(), &apps);
    let model = tmp.path().join("m.json");
    let train = |manifest: &Path| {
        obfuscan(&["train", "--technique", "renaming", "--corpus", s(manifest), "--out", s(&model)])
    };

    let o = train(&manifest);
    assert_eq!(code(&o), 65, "single class: {}", stderr(&o));
    assert!(!model.exists());

    assert_eq!(code(&train(&tmp.path().join("nowhere.txt"))), 66, "missing manifest");

    let dangling = tmp.path().join("dangling.txt");
    fs::write(&dangling, "synthetic gone.ir natural\n").unwrap();
    assert_eq!(code(&train(&dangling)), 66, "missing corpus file");

    let unlabelled = tmp.path().join("unlabelled.txt");
    fs::write(&unlabelled, "synthetic app000.ir\n").unwrap();
    assert_eq!(code(&train(&unlabelled)), 65, "missing label");

    let o = obfuscan(&["train", "--technique", "control-flow", "--corpus", s(&manifest), "--out", s(&model)]);
    assert_eq!(code(&o), 64);
}

#[test]
fn aggregate_empty_dir() {
    let tmp = TempDir::new().unwrap();
    let o = obfuscan(&["aggregate", s(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let corpus = stdout_json(&o);
    assert_eq!(corpus["tags"], serde_json::json!({}));

    assert_eq!(code(&obfuscan(&["aggregate", s(&tmp.path().join("absent"))])), 66);
}

#[test]
fn aggregate_mixed_tags_and_stray_files() {
    let tmp = TempDir::new().unwrap();
    let reports = tmp.path().join("reports");
    let manifest = tmp.path().join("inputs.txt");
    fs::write(
        &manifest,
        format!(
            "play {}\nmalware {}\nmalware {}\n",
            fixture("reflection_listing.ir"),
            fixture("md5state.ir"),
            fixture("reflection_listing.ir")
        ),
    )
    .unwrap();
    let o = obfuscan(&["scan", "--manifest", s(&manifest), "--out", s(&reports)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(listing(&reports), ["md5state.json", "reflection_listing-2.json", "reflection_listing.json"]);
    fs::write(reports.join("notes.txt"), "not a report").unwrap();
    fs::write(reports.join("zz.json"), "{ broken").unwrap();

    let summary = tmp.path().join("corpus.json");
    let o = obfuscan(&["aggregate", s(&reports), "--out", s(&summary)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("notes.txt") && err.contains("zz.json"), "{err}");
    let corpus = stdout_json(&o);
    assert_eq!(corpus["tags"]["play"]["n_apps"], 1);
    assert_eq!(corpus["tags"]["malware"]["n_apps"], 2);
    assert_eq!(corpus["tags"]["malware"]["reflection_ratio"], 0.5);
    let written: Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(written, corpus);
}

#[test]
fn parallel_scan_writes_the_same_files() {
    let tmp = TempDir::new().unwrap();
    let inputs = tmp.path().join("inputs");
    fs::create_dir(&inputs).unwrap();
    for i in 0..6u64 {
        let spec = AppSpec {
            renamed: i % 2 == 0,
            encrypted_strings: i % 3 == 0,
            reflection_sites: vec![true; (i % 3) as usize],
            packer: (i == 4).then_some(1),
            ..AppSpec::default()
        };
        let app = build_app(&format!("app{i}"), &spec, i);
        fs::write(inputs.join(format!("app{i}.apk")), app.to_apk().unwrap()).unwrap();
    }
    fs::write(inputs.join("app6.ir"), build_app("app6", &AppSpec::default(), 6).to_textual_ir().unwrap()).unwrap();

    let run = |p: &str| {
        let out = tmp.path().join(format!("p{p}"));
        let o = obfuscan(&["scan", s(&inputs), "--out", s(&out), "--parallelism", p]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let (one, four) = (run("1"), run("4"));
    assert_eq!(listing(&one), listing(&four));
    assert_eq!(listing(&one).len(), 7);
    let strip = |path: PathBuf| {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timings_ms");
        v
    };
    for name in listing(&one) {
        assert_eq!(strip(one.join(&name)), strip(four.join(&name)), "{name}");
    }
}

#[test]
fn slice_prints_the_resolved_value() {
    let o = obfuscan(&[
        "slice",
        &fixture("reflection_listing.ir"),
        "com.example.DeviceInfo",
        "readProperty",
        "6",
        "v2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let state = stdout_json(&o);
    assert_eq!(state["resolved_value"], "get");
    assert_eq!(state["slice"], serde_json::json!([4]));

    let o = obfuscan(&["slice", &fixture("reflection_listing.ir"), "com.example.DeviceInfo", "nope", "0", "0"]);
    assert_eq!(code(&o), 65);
    let o = obfuscan(&["slice", &fixture("reflection_listing.ir"), "com.example.DeviceInfo", "readProperty", "99", "0"]);
    assert_eq!(code(&o), 65);
}

#[test]
fn signatures_prints_the_loaded_db() {
    let o = obfuscan(&["signatures"]);
    assert_eq!(code(&o), 0);
    let db = stdout_json(&o);
    assert_eq!(db.as_array().unwrap().len(), 6);

    let tmp = TempDir::new().unwrap();
    let custom = tmp.path().join("sigs.txt");
    fs::write(&custom, "PACKER Demo\nFILE assets/demo.bin\nCODE com.demo.Stub\n").unwrap();
    let o = obfuscan(&["signatures", "--signatures", s(&custom)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let db = stdout_json(&o);
    assert_eq!(db[0]["packer_name"], "Demo");
    assert_eq!(db[0]["file_signatures"], serde_json::json!(["assets/demo.bin"]));
}
