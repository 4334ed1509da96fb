pub mod action_api;
pub mod datagen;
pub mod harness;
pub mod metrics;
pub mod planner;
pub mod render;
pub mod rng;
pub mod scene;
pub mod scenegen;
pub mod tasks;
pub mod worldmodel;
