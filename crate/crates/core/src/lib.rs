//! Multi-robot socially aware crowd navigation.
//!
//! The crate bundles a 2D crowd simulator with scripted ORCA and Social Force
//! pedestrians, the graph-attention navigation policy (edge selection with
//! Gumbel-Softmax, a single-layer graph attention coordinator and a GRU core)
//! and a MAPPO trainer that shares one parameter set between all robots.

pub mod config;
pub mod geom;
pub mod humanpol;
pub mod mappo;
pub mod numcore;
pub mod percept;
pub mod policy;
pub mod rng;
pub mod sim;
