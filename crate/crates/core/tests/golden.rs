//! Pretty-printer golden tests: the canonical rendering of each bundled
//! model is pinned to a checked-in file, and pretty-printing must be a
//! fixpoint of parse ∘ pretty.

use std::path::PathBuf;

use gk_core::frontend::compile;
use gk_core::frontend::pretty::pretty_print;
use gk_core::models::bundled_source;

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.pretty"))
}

fn check_golden(name: &str) {
    let src = bundled_source(name).expect("bundled model");
    let prog = compile(src, name).expect("bundled model compiles");
    let rendered = pretty_print(&prog.program);

    let path = golden_path(name);
    if std::env::var_os("GK_BLESS").is_some() {
        std::fs::write(&path, &rendered).expect("write golden");
        return;
    }
    let want = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(rendered, want, "pretty output for `{name}` diverged from golden file");
}

fn check_fixpoint(name: &str) {
    let src = bundled_source(name).expect("bundled model");
    let prog = compile(src, name).expect("bundled model compiles");
    let once = pretty_print(&prog.program);
    let reparsed = compile(&once, name).expect("pretty output reparses");
    let twice = pretty_print(&reparsed.program);
    assert_eq!(once, twice, "pretty-printing `{name}` is not a parse/print fixpoint");
}

#[test]
fn fs_model_matches_golden() {
    check_golden("fs");
}

#[test]
fn sync_model_matches_golden() {
    check_golden("sync");
}

#[test]
fn fs_pretty_roundtrip_is_fixpoint() {
    check_fixpoint("fs");
}

#[test]
fn sync_pretty_roundtrip_is_fixpoint() {
    check_fixpoint("sync");
}
