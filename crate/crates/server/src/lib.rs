//! HTTP service and command-line tools around `micoach-core`.

pub mod api;
pub mod cli;
