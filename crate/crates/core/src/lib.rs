pub mod autodiff;
pub mod babi;
pub mod diagnostics;
pub mod emn;
pub mod error;
pub mod halting;
pub mod harness;
pub mod input;
pub mod model;
pub mod optim;
pub mod par;
pub mod params;
pub mod store;
pub mod tasks;

pub use error::{Error, Result};
