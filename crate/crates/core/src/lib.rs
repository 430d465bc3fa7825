//! Review-based rating prediction with aspect-level explanations.
//!
//! The pipeline runs corpus loading, sentiment-term induction, aspect-sentiment
//! pair mining, contextual embedding lookup and finally the two-channel rating
//! model with its trainer and explanation tools.

pub mod apre;
pub mod aspair;
pub mod cli;
pub mod corpus;
pub mod diffmath;
pub mod embed;
pub mod error;
pub mod interpret;
pub mod sentiterm;
pub mod stats;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
