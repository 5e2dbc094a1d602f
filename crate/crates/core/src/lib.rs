pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod training;
