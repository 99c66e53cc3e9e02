pub mod image;
pub mod jpeg;
pub mod nn;
pub mod model;
pub mod codec;
pub mod enhance;
pub mod trainer;
pub mod eval;
