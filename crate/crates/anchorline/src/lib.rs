//! Service and command-line front end for anchorline.

pub mod cli;
pub mod config;
pub mod server;
