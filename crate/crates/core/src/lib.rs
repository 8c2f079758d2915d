pub mod error;
pub mod cells;
pub mod compnet;
pub mod corpus;
pub mod datagen;
pub mod eval;
pub mod mixture;
pub mod model;
pub mod numcore;
pub mod series;

pub use error::{Error, Result};
pub use series::TimeSeries;
