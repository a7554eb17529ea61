#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod diffcore;
pub mod error;
pub mod gmf;
pub mod kv;
pub mod lcr;
pub mod metrics;
pub mod pipeline;
pub mod scoring;
pub mod synthdata;

pub use error::{Error, Result};
