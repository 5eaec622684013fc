//! Acceptance checks for `mfdae` live in `tests/`; this crate has no library code.
