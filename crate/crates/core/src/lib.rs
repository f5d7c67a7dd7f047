//! Bond percolation on finite windows of `Z^d`: renormalized boxes, separating
//! components, closed cuts and Monte Carlo estimators.

pub mod cli;
pub mod counting;
pub mod error;
pub mod estimators;
pub mod expansion;
pub mod lattice;
pub mod percolation;
pub mod renorm;
pub mod rng;
pub mod separating;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{Adjacency, BoxId, LatticeWindow, Point, WindowSpec};
pub use percolation::{ClusterLabeling, Configuration};
