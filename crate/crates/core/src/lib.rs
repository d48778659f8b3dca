pub mod dataset;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod sweep;
pub mod trainer;
