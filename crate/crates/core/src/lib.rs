//! Search-based testing of deep Q-learning agents.
//!
//! The pipeline trains a double-DQN agent on Cart-Pole or Mountain Car,
//! abstracts its states by bucketing Q-values, learns a random-forest fault
//! predictor over abstract-state presence features, and then evolves
//! episodes toward boundary-crossing faults with a many-objective genetic
//! search. Candidate faults are confirmed by replaying them against the
//! live agent.

pub mod abstraction;
pub mod agent;
pub mod artifact;
pub mod classifier;
pub mod config;
pub mod env;
pub mod episode;
pub mod experiments;
pub mod pipeline;
pub mod replay;
pub mod rng;
pub mod search;
