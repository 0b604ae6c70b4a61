//! Principle-guided synthesis of instruction-tuning datasets.
//!
//! A large reflector model distills task-completion principles from a small
//! seed set; a small generator model then produces a large dataset under those
//! principles. Every exchange is metered for token and carbon reporting.

pub mod accounting;
pub mod cluster;
pub mod commands;
pub mod config;
pub mod gateway;
pub mod model;
pub mod instances;
pub mod principles;
pub mod prompts;
pub mod rouge;
