//! Rare-event estimation for repairable dynamic fault trees with
//! non-Markovian timers.
//!
//! The pipeline: parse a Kepler `.dft` file ([`kepler`]), compile it to a
//! network of timed components and flatten that to a finite location graph
//! with timer-expiration edges ([`model`]), run a backwards state-class
//! expansion over difference-bound-matrix domains ([`dbm`], [`scg`]) to
//! obtain a time-sensitive importance function ([`importance`]), and drive
//! crude Monte Carlo or Fixed Effort splitting ([`sim`], [`res`]) to
//! estimate the probability of reaching a target location within a time
//! bound.

pub mod cli;
pub mod dbm;
pub mod importance;
pub mod kepler;
pub mod model;
pub mod rational;
pub mod res;
pub mod scg;
pub mod sim;
