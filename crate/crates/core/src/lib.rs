//! Financial sentiment indices from three channels and a return-predictability
//! experiment harness.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod forecast;
pub mod indices;
pub mod market;
pub mod options;
pub mod output;
pub mod panel;
pub mod pca;
pub mod pipeline;
pub mod pricing;
pub mod seed;
pub mod synth;
pub mod textual;
