#![allow(clippy::needless_range_loop)]

pub mod align;
pub mod bilm;
pub mod corpus;
pub mod decontext;
pub mod error;
pub mod fingerprint;
pub mod nn;
pub mod numerics;
pub mod parser;
pub mod synth;
pub mod translate;

pub use error::{Error, Result};
