//! Library surface of the `ufse` command-line tool; the binary in
//! `main.rs` is a thin wrapper so integration tests can drive the same
//! code paths directly.

pub mod bench;
pub mod dataset;
pub mod imageio;
pub mod run;
pub mod synth;
