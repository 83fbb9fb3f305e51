#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod cli_io;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod mesh;
pub mod oracles;
pub mod par;
pub mod perturbation;

pub use error::{Error, Result};
pub use par::Execution;
