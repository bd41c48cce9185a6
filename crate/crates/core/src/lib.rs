//! Semigroups of interacting Markov jump entities: cumulant expansions, the
//! BBGKY and dual BBGKY hierarchies, and their mean-field limit with
//! initially correlated states.

pub mod combinatorics;
pub mod dynamics;
pub mod error;
pub mod expm;
pub mod hierarchies;
pub mod meanfield;
pub mod state_space;

pub use error::{Error, Result};
