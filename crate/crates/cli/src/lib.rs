//! Support library for the `stein-sparse` command-line tool: text file
//! formats for matrix sets, Gram matrices, sparse codes, and learning
//! traces, plus the canned experiment runners.

pub mod experiment;
pub mod fileio;
