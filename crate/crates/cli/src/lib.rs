//! Library surface of the experiment driver: configuration, commands,
//! reports and plots. The `fusebench` binary is a thin wrapper over these.

pub mod commands;
pub mod config;
pub mod font;
pub mod plot;
pub mod report;
