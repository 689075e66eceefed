pub mod error;
pub mod flow;
pub mod harness;
pub mod hypotheses;
pub mod inducing;
pub mod io;
pub mod mapzoo;
pub mod numerics;
pub mod operator;
pub mod renewal;
pub mod rng;

pub use error::{Error, Result};
