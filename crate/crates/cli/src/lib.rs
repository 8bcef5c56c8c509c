//! Command-line front end for local explanations of probabilistic models.

pub mod artifact;
pub mod cli;
pub mod demo;
pub mod explain;
pub mod instance_io;
pub mod render;
