//! Bundled service models shipped with the framework.

use crate::frontend::{compile, Diagnostic, TypedModelProgram};

/// Source text of the bundled file-service model.
pub const FS_MODEL_SRC: &str = include_str!("../../../models/fs.gk");

/// Source text of the bundled mutex/futex model.
pub const SYNC_MODEL_SRC: &str = include_str!("../../../models/sync.gk");

/// Names of the bundled models, as accepted by [`load_bundled`].
pub const BUNDLED: &[&str] = &["fs", "sync"];

/// Source text of a bundled model, if `name` is one.
pub fn bundled_source(name: &str) -> Option<&'static str> {
    match name {
        "fs" => Some(FS_MODEL_SRC),
        "sync" => Some(SYNC_MODEL_SRC),
        _ => None,
    }
}

/// Compile one of the bundled models. Panics only if the bundled sources
/// themselves are broken, which the test suite rules out.
pub fn load_bundled(name: &str) -> Result<TypedModelProgram, Diagnostic> {
    let src = bundled_source(name)
        .unwrap_or_else(|| panic!("no bundled model named `{name}` (have: {BUNDLED:?})"));
    compile(src, name)
}
