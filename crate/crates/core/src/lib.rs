//! Experiment harness for small-dataset binary image classification with
//! mini residual networks.

pub mod augment;
pub mod data;
pub mod ensemble;
pub mod experiment;
pub mod kv;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod preprocess;
pub mod report;
pub mod seeds;
pub mod stats;
pub mod tensor;
pub mod train;
