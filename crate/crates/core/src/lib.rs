pub mod error;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod video;
pub mod encoder;
pub mod tracker;
pub mod synth;
pub mod eval;
pub mod motion;
pub mod augment;
pub mod train;
pub mod dataset;
pub mod plot;
