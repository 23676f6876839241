pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod influence;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod qp;
pub mod stats;
pub mod unlearn;

pub use error::{Error, Result};
