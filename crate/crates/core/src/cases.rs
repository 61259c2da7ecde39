//! Bundled grid test cases in MATPOWER format.

/// IEEE 14-bus case: 14 buses, 5 generators, 20 branches (3 transformers),
/// 1 shunt.
pub const CASE14: &str = include_str!("../cases/case14.m");

/// 30-bus, 6-generator case: 41 branches (4 transformers), 2 shunts.
pub const CASE30: &str = include_str!("../cases/case30.m");

/// Bundled cases by name.
pub fn by_name(name: &str) -> Option<&'static str> {
    match name {
        "case14" => Some(CASE14),
        "case30" => Some(CASE30),
        _ => None,
    }
}
