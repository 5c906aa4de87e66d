//! Audio-visual scene classification with contrastive event-object alignment
//! and semantic-based fusion, built on a small reverse-mode autodiff core.

pub mod branches;
pub mod ceoa;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod numcore;
pub mod parallel;
pub mod params;
pub mod synthdata;

pub use error::{Error, Result};
