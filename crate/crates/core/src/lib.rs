pub mod config;
pub mod endpoint;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod simnet;
pub mod simulator;
pub mod sweep;
pub mod syncdocs;
pub mod time;
