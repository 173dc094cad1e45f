pub mod acquisition;
pub mod bench;
pub mod campaign;
pub mod driver;
pub mod error;
pub mod funcnet;
pub mod gp;
pub mod kernel;
pub mod optim;
pub mod pathwise;
pub mod problem;
pub mod regret;
mod trig;

pub use error::{Error, Result};
