//! Physics-regularized mixture density networks and a conditional flow
//! matching baseline for multimodal scientific regression.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cfm;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod density;
pub mod error;
pub mod eval;
pub mod losses;
pub mod mdn;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod problems;
pub mod rng;

pub use error::{Error, Result};
