pub mod gridmap;
pub mod encoder;
pub mod evalkit;
pub mod maskgen;
pub mod navenv;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod cli;
