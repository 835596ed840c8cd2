//! Memory-augmented neural search for combinatorial optimization.
//!
//! The library couples a graph-transformer policy with a capacity-bounded
//! memory of visited solutions. At every search step the memory is queried
//! by solution similarity and the retrieved context is fed back to the
//! policy as extra features, steering parallel search threads away from
//! already-explored regions.
//!
//! Supported problems: maximum cut and maximum independent set (improvement
//! search over bit-flip moves) and the travelling salesman problem
//! (multi-start constructive search). Classical baselines and exhaustive
//! oracles for small instances live in [`baselines`].

pub mod baselines;
pub mod bench;
pub mod config;
pub mod error;
pub mod instances;
pub mod memory;
pub mod nn;
pub mod policy;
pub mod problems;
pub mod rng;
pub mod search;
pub mod training;

pub use error::{Error, Result};
pub use instances::GraphInstance;
pub use problems::{BinarySolution, PartialTour, ProblemKind, Tour};
