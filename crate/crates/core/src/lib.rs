pub mod error;
pub mod experiment;
pub mod model;
pub mod plm;
pub mod rng;
pub mod sampler;
pub mod scores;
pub mod decimation;
pub mod l1;
pub mod metrics;
