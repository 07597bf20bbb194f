pub mod classical;
pub mod data;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod neural;
pub mod recipe;
pub mod rng;
pub mod training;
