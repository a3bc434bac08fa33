//! Samplers, bijections and metric checks for non-generic Boltzmann bipartite planar maps.

pub mod bdg;
pub mod bdg2;
pub mod harness;
pub mod looptree;
pub mod mobile;
pub mod numerics;
pub mod planarmap;
pub mod rng;
pub mod special;
pub mod weights;

mod error;

pub use error::{Error, Result};
