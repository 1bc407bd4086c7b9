//! Diabatic frozen-Gaussian surface hopping: ensembles, a spectral
//! reference solver, experiment pipelines and the `fgash` command line.

pub mod config;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod io;
pub mod pipeline;
pub mod reference;
pub mod study;
