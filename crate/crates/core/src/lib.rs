pub mod cmaes;
pub mod error;
pub mod harness;
pub mod led;
pub mod objective;
pub mod optimizer;
pub mod restart;
pub mod stepsize;
pub mod vecmat;

pub use error::{Error, Result};
