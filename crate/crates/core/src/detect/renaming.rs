//! Identifier-renaming classification and naming-policy profile.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::DetectError;
use crate::features::{featurize, Charset, CharsetId, LinearModel};
use crate::ir::AppModel;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyProfile {
    /// Names of at most two characters.
    pub short_name_ratio: f64,
    /// `a, b, c, ...` appears among one class's members or one package's classes.
    pub lexicographic_run: bool,
    pub non_ascii_ratio: f64,
    /// Names of length >= 4 spelled only with `I l 1 O 0 o`.
    pub confusable_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenamingDetection {
    pub verdict: bool,
    pub score: f64,
    pub name_count: usize,
    pub policy: PolicyProfile,
}

const CONFUSABLE: [char; 6] = ['I', 'l', '1', 'O', '0', 'o'];
const MIN_RUN: usize = 3;

/// Class simple names, method names and field names of non-library classes,
/// constructors excluded.
pub fn collect_names(app: &AppModel) -> Vec<String> {
    let mut names = Vec::new();
    for c in app.app_classes() {
        names.push(c.simple_name().to_string());
        names.extend(c.methods.iter().filter(|m| !m.is_constructor()).map(|m| m.name.clone()));
        names.extend(c.fields.iter().map(|f| f.name.clone()));
    }
    names
}

/// The `n`-th name of the sequence `a..z, aa, ab, ..., zz, aaa, ...`.
pub fn lexicographic_name(mut n: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

fn has_run(names: &HashSet<&str>) -> bool {
    (0..MIN_RUN).all(|i| names.contains(lexicographic_name(i).as_str()))
}

fn is_confusable(name: &str) -> bool {
    name.chars().count() >= 4 && name.chars().all(|c| CONFUSABLE.contains(&c))
}

pub fn policy_profile(app: &AppModel, names: &[String]) -> PolicyProfile {
    let mut run = false;
    let mut packages: BTreeMap<&str, HashSet<&str>> = BTreeMap::new();
    for c in app.app_classes() {
        let members: HashSet<&str> = c
            .methods
            .iter()
            .filter(|m| !m.is_constructor())
            .map(|m| m.name.as_str())
            .chain(c.fields.iter().map(|f| f.name.as_str()))
            .collect();
        run |= has_run(&members);
        let package = c.name.rsplit_once('.').map_or("", |(p, _)| p);
        packages.entry(package).or_default().insert(c.simple_name());
    }
    run |= packages.values().any(has_run);

    if names.is_empty() {
        return PolicyProfile {
            lexicographic_run: run,
            ..Default::default()
        };
    }
    let n = names.len() as f64;
    let ratio = |f: &dyn Fn(&str) -> bool| names.iter().filter(|s| f(s)).count() as f64 / n;
    PolicyProfile {
        short_name_ratio: ratio(&|s| s.chars().count() <= 2),
        lexicographic_run: run,
        non_ascii_ratio: ratio(&|s| !s.is_ascii()),
        confusable_ratio: ratio(&is_confusable),
    }
}

pub fn detect_renaming(app: &AppModel, model: &LinearModel) -> Result<RenamingDetection, DetectError> {
    if model.charset != CharsetId::IdentifierSet {
        return Err(DetectError::ModelCharsetMismatch {
            expected: CharsetId::IdentifierSet,
            found: model.charset,
        });
    }
    let names = collect_names(app);
    let policy = policy_profile(app, &names);
    if names.is_empty() {
        return Ok(RenamingDetection {
            verdict: false,
            score: 0.0,
            name_count: 0,
            policy,
        });
    }
    let p = model
        .predict(&featurize(&names, &Charset::identifier()))
        .map_err(DetectError::Model)?;
    Ok(RenamingDetection {
        verdict: p.positive,
        score: p.score,
        name_count: names.len(),
        policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::TrainingMeta;
    use crate::ir::{ClassDef, FieldDef, MethodDef, Origin};

    fn app_with_members(class: &str, members: &[&str]) -> AppModel {
        let mut c = ClassDef::new(class, "java.lang.Object");
        for m in members {
            c.methods.push(MethodDef::new(*m, "()V", 0));
        }
        c.methods.push(MethodDef::new("<init>", "()V", 1));
        let mut app = AppModel::new("t", Origin::TextualIr);
        app.classes.push(c);
        app
    }

    fn model(charset: CharsetId, bias: f64) -> LinearModel {
        LinearModel {
            charset,
            weights: Default::default(),
            bias,
            label_positive: "obfuscated".into(),
            training_meta: TrainingMeta {
                seed: 0,
                epochs: 1,
                lambda: 1.0,
                sample_count: 2,
            },
        }
    }

    #[test]
    fn sequence() {
        let names: Vec<String> = [0, 1, 25, 26, 27, 51, 52, 701, 702].into_iter().map(lexicographic_name).collect();
        assert_eq!(names, ["a", "b", "z", "aa", "ab", "az", "ba", "zz", "aaa"]);
    }

    #[test]
    fn short_lexicographic_profile() {
        let app = app_with_members("p.aa", &["a", "b", "c", "ab"]);
        let names = collect_names(&app);
        assert_eq!(names, ["aa", "a", "b", "c", "ab"]);
        let p = policy_profile(&app, &names);
        assert!(p.short_name_ratio >= 0.6);
        assert!(p.lexicographic_run);
        assert_eq!(p.non_ascii_ratio, 0.0);
    }

    #[test]
    fn package_level_run() {
        let mut app = AppModel::new("t", Origin::TextualIr);
        for n in ["a", "b", "c"] {
            app.classes.push(ClassDef::new(format!("x.{n}"), "java.lang.Object"));
        }
        assert!(policy_profile(&app, &collect_names(&app)).lexicographic_run);
        let app = app_with_members("x.Main", &["a", "c"]);
        assert!(!policy_profile(&app, &collect_names(&app)).lexicographic_run);
    }

    #[test]
    fn confusable_and_unicode() {
        let mut app = app_with_members("q.Main", &["IlllIlII", "oO00O0oo", "Ill", "名前"]);
        app.classes[0].fields.push(FieldDef {
            name: "value".into(),
            type_desc: "I".into(),
        });
        let p = policy_profile(&app, &collect_names(&app));
        assert!((p.confusable_ratio - 2.0 / 6.0).abs() < 1e-12);
        assert!((p.non_ascii_ratio - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn library_only_app_has_no_names() {
        let mut app = app_with_members("p.c", &["a", "b"]);
        app.classes[0].is_library = true;
        let d = detect_renaming(&app, &model(CharsetId::IdentifierSet, 1.0)).unwrap();
        assert_eq!(d.name_count, 0);
        assert!(!d.verdict);
    }

    #[test]
    fn wrong_charset() {
        let app = app_with_members("p.c", &["a"]);
        assert!(matches!(
            detect_renaming(&app, &model(CharsetId::AsciiSet, 1.0)),
            Err(DetectError::ModelCharsetMismatch { .. })
        ));
    }
}
