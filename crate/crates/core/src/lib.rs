pub mod digest;
pub mod eval;
pub mod features;
pub mod models;
pub mod nn;
pub mod symbolic;
pub mod synthgen;
pub mod timebase;
pub mod training;
pub mod transfer;
