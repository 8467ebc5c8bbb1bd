//! Evaluation protocols and the synthetic data they run on.

pub mod corpus;
pub mod dialog;
pub mod grocery;
pub mod ppl;
pub mod results;
pub mod rps;
