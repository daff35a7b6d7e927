pub mod cli;
pub mod clustering;
pub mod cost_model;
pub mod election;
pub mod ids;
pub mod oracles;
pub mod payment;
pub mod sim;
pub mod topology;
pub mod trace;
