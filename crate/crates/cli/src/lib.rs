//! Command line front end and the rating service.

pub mod commands;
pub mod server;
