//! Sub-network enumeration, model-house construction and annealed block
//! replacement for neural-network computation graphs.
//!
//! The pipeline: describe a teacher network in the [`ir`] format, enumerate
//! or sample its single-input/single-output regions ([`enumerate`]), collect
//! compatible replacement blocks from other networks into a
//! [`house::ModelHouse`], attach per-block cost and accuracy-loss data
//! ([`profile`]), search for the best feasible replacement plan
//! ([`search`]) and splice it into the teacher ([`rewrite`]).

pub mod enumerate;
pub mod house;
pub mod ir;
pub mod profile;
pub mod rational;
pub mod rewrite;
pub mod search;
pub mod synth;

pub use rational::Rational;
