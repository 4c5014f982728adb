pub mod clustering;
pub mod config;
pub mod gp;
pub mod model;
pub mod montecarlo;
pub mod optimizer;
pub mod power;
pub mod rate;
pub mod rng;
