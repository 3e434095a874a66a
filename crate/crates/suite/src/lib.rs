//! Holds the `acceptance` integration test. The checks themselves live in
//! `weakkam_core::suite` so that the command-line `report` runs the same code.
//!
//! Run with `cargo test -p weakkam-suite -- --nocapture` to see one line per
//! criterion as it finishes.
