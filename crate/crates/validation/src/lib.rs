//! Acceptance suite for `beamopt`. The checks live in `tests/acceptance.rs`
//! and run with `cargo test -p beamopt-validation`; each prints one
//! `PASS` or `FAIL` line.
