//! Test-only package. The checks live in `tests/acceptance.rs`; it sits last in
//! the workspace so a failing check does not stop the other suites from running.
