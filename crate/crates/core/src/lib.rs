pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod numcore;
pub mod train;
