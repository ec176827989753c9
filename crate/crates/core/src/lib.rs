//! Sparse crosscoders for diffing a base model against its reasoning
//! finetune, with wait-token attribution, steering and max-activating
//! examples, all runnable against a bundled toy transformer pair.

pub mod activation_store;
pub mod attribution;
pub mod cli;
pub mod crosscoder;
pub mod diffing;
pub mod error;
pub mod maxact;
pub mod numerics;
pub mod steering;
pub mod toy_model;
pub mod wait_dataset;

pub use error::{Error, Result};
