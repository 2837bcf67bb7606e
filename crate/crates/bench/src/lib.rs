//! Criterion benchmarks live in `benches/` and the acceptance suite in
//! `tests/acceptance.rs`; this crate has no library code.
