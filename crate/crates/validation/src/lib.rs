//! Acceptance suite for `rsboot`; everything lives in `tests/acceptance.rs`.
