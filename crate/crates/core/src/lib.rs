#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod config;
pub mod crb;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod report;
pub mod resolvability;
pub mod selftest;
pub mod signal;
pub mod sweep;

pub use error::{Error, Result};
