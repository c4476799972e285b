#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod report;
pub mod sdp;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
pub use graph::CommGraph;
