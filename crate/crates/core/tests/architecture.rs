//! The explainer side may query the classifier only through `BlackBox`.

use std::path::{Path, PathBuf};

fn sources(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            sources(&p, out);
        } else if p.extension().is_some_and(|e| e == "rs") {
            out.push(p);
        }
    }
}

/// Source text before the unit-test module.
fn non_test_code(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    match text.find("#[cfg(test)]") {
        Some(i) => text[..i].to_string(),
        None => text,
    }
}

#[test]
fn explainer_modules_only_see_predictions() {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
    let mut files = Vec::new();
    for part in ["gvag", "nodevae.rs", "recon.rs", "metrics.rs", "npaf"] {
        let p = src.join(part);
        if p.is_dir() {
            sources(&p, &mut files);
        } else {
            files.push(p);
        }
    }
    assert!(files.len() >= 8);
    for f in files {
        let code = non_test_code(&f);
        for banned in ["TargetModel", "gnn.l", "gnn.cls", ".params()"] {
            let hit = code.lines().any(|l| !l.trim_start().starts_with("//") && l.contains(banned) && !(banned == ".params()" && l.contains("self.params")));
            assert!(!hit, "{} mentions {banned}", f.display());
        }
    }
}
