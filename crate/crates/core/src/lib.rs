pub mod cli;
pub mod covert_eval;
pub mod error;
pub mod geom;
pub mod gkae;
pub mod graph;
pub mod nn;
pub mod swarm_sim;

pub use error::{Error, Result};
