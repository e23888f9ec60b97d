//! Frontend tests: diagnostics for malformed models, and property tests
//! asserting the parser never panics and parse/pretty is a fixpoint.

use gk_core::frontend::{compile, parse, pretty_print, DiagKind};
use proptest::prelude::*;

const HEADER: &str = "Map m(k: int) returns (v: int, d: char[]);\n";

fn model(body: &str) -> String {
    format!("{HEADER}{body}")
}

fn kind_of(src: &str) -> DiagKind {
    compile(src, "t").expect_err("model should be rejected").kind
}

#[test]
fn accepts_minimal_model() {
    let src = model(
        "action get(k: int) returns (v: int) := {\n\
         \x20 if (m(k) == NULL) { return -EINVAL; }\n\
         \x20 v := extern call untrusted_get(k);\n\
         \x20 requires (v == m(k).v);\n\
         \x20 return v;\n}\n",
    );
    compile(&src, "t").expect("minimal model compiles");
}

#[test]
fn rejects_unknown_identifier() {
    let src = model("action a(x: int) returns (r: int) := { r := y; return r; }\n");
    assert_eq!(kind_of(&src), DiagKind::UnknownIdentifier);
}

#[test]
fn rejects_type_mismatch() {
    let src = model("action a(x: int) returns (r: int) := { r := \"abc\"; return r; }\n");
    assert_eq!(kind_of(&src), DiagKind::TypeMismatch);
}

#[test]
fn rejects_duplicate_action() {
    let src = model(
        "action a(x: int) returns (r: int) := { return 0; }\n\
         action a(x: int) returns (r: int) := { return 0; }\n",
    );
    assert_eq!(kind_of(&src), DiagKind::DuplicateName);
}

#[test]
fn rejects_reserved_word_as_local() {
    let src = model(
        "action a(x: int) returns (r: int) := { exists: int := 0; return exists; }\n",
    );
    assert!(compile(&src, "t").is_err());
}

#[test]
fn rejects_two_untrusted_calls_on_one_path() {
    let src = model(
        "action a(x: int) returns (r: int) := {\n\
         \x20 r := extern call untrusted_one(x);\n\
         \x20 r := extern call untrusted_two(x);\n\
         \x20 return r;\n}\n",
    );
    assert_eq!(kind_of(&src), DiagKind::DesignError);
}

#[test]
fn rejects_untrusted_calls_split_across_branches() {
    // The one-untrusted-call budget is per action, not per path.
    let src = model(
        "action a(x: int) returns (r: int) := {\n\
         \x20 if (x > 0) { r := extern call untrusted_one(x); }\n\
         \x20 else { r := extern call untrusted_two(x); }\n\
         \x20 requires (r == 0);\n\
         \x20 return r;\n}\n",
    );
    assert_eq!(kind_of(&src), DiagKind::DesignError);
}

#[test]
fn rejects_await_outside_atomic() {
    let src = model(
        "action a(x: int) returns (r: int) := {\n\
         \x20 r := extern call untrusted_one(x);\n\
         \x20 await requires (r == 0);\n\
         \x20 return r;\n}\n",
    );
    assert_eq!(kind_of(&src), DiagKind::DesignError);
}

#[test]
fn rejects_state_write_before_await_in_atomic() {
    let src = model(
        "action a(x: int) returns (r: int) := {\n\
         \x20 r := extern call untrusted_one(x);\n\
         \x20 atomic (m(x)) {\n\
         \x20   m(x).v := 1;\n\
         \x20   await requires (m(x).v == 1);\n\
         \x20 }\n\
         \x20 return r;\n}\n",
    );
    assert_eq!(kind_of(&src), DiagKind::DesignError);
}

#[test]
fn rejects_requires_on_output_before_its_untrusted_call() {
    let src = model(
        "action a(x: int) returns (r: int) := {\n\
         \x20 requires (r == 0);\n\
         \x20 r := extern call untrusted_one(x);\n\
         \x20 return r;\n}\n",
    );
    assert_eq!(kind_of(&src), DiagKind::IllegalRequiresPlacement);
}

#[test]
fn rejects_bitwise_operator_tokens() {
    let src = model("action a(x: int) returns (r: int) := { r := x & 1; return r; }\n");
    assert!(compile(&src, "t").is_err());
}

#[test]
fn rejects_unknown_map_arity() {
    let src = model("action a(x: int) returns (r: int) := { r := m(x, x).v; return r; }\n");
    assert_eq!(kind_of(&src), DiagKind::ArityMismatch);
}

#[test]
fn syntax_error_reports_position() {
    let err = compile("Map m(k int) returns (v: int);\n", "t").expect_err("bad map decl");
    assert_eq!(err.kind, DiagKind::SyntaxError);
    assert_eq!(err.span.line, 1);
}

proptest! {
    /// The parser must reject or accept arbitrary input without panicking.
    #[test]
    fn parser_never_panics(src in "\\PC{0,400}") {
        let _ = parse(&src);
    }

    /// Token soup drawn from the model vocabulary must also never panic.
    #[test]
    fn parser_never_panics_on_token_soup(
        toks in proptest::collection::vec(
            prop_oneof![
                Just("Map"), Just("action"), Just("returns"), Just("requires"),
                Just("await"), Just("atomic"), Just("extern"), Just("call"),
                Just("if"), Just("else"), Just("return"), Just("delete"),
                Just("init"), Just("fuzz"), Just("NULL"), Just("("), Just(")"),
                Just("{"), Just("}"), Just(";"), Just(":="), Just(":"),
                Just(","), Just("=="), Just("!="), Just("->"), Just("and"),
                Just("or"), Just("not"), Just("x"), Just("m"), Just("0"),
                Just("1"), Just("-7"), Just("\"s\""), Just("int"), Just("char[]"),
            ],
            0..60,
        )
    ) {
        let src = toks.join(" ");
        let _ = parse(&src);
    }

    /// Any model that compiles pretty-prints to a form that reparses to the
    /// same canonical rendering.
    #[test]
    fn compiled_models_roundtrip(
        ret in -4096i64..4096,
        cmp in prop_oneof![Just("=="), Just("!="), Just("<"), Just("<="), Just(">"), Just(">=")],
        conn in prop_oneof![Just("and"), Just("or")],
        lit in 0i64..256,
    ) {
        let src = model(&format!(
            "action a(x: int) returns (r: int) := {{\n\
             \x20 if (m(x) == NULL) {{ return {ret}; }}\n\
             \x20 r := extern call untrusted_get(x);\n\
             \x20 requires (r {cmp} {lit} {conn} r >= 0);\n\
             \x20 return r;\n}}\n",
        ));
        let prog = compile(&src, "t").expect("generated model compiles");
        let once = pretty_print(&prog.program);
        let back = compile(&once, "t").expect("pretty output reparses");
        prop_assert_eq!(once, pretty_print(&back.program));
    }
}
