pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod features;
pub mod model;
pub mod nets;
pub mod objectives;
pub mod theory;
pub mod trainer;
mod util;

pub use vclab_autodiff as autodiff;
