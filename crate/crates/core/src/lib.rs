pub mod benchmark;
pub mod cleaning;
pub mod container;
pub mod error;
pub mod features;
pub mod forest;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rnn;
pub mod service;
pub mod signal;
pub mod synth;
