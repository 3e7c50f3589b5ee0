#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boosting;
pub mod bpnn;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod exec;
pub mod haar;
pub mod image;
pub mod netpbm;
pub mod persist;
pub mod recognizer;

pub use error::{Error, Result};
