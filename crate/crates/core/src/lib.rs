//! Symbolic and probabilistic analysis of memory-erasure protocols.
//!
//! * [`terms`] and [`inference`]: the message algebra and Dolev-Yao
//!   derivability.
//! * [`semantics`]: timed traces, execution rules, claim checking and bounded
//!   exploration.
//! * [`protocols`]: concrete rule sets and attack constructions.
//! * [`automata`], [`fraud`], [`simulator`]: cyclic tree automata, the
//!   pruning attack with its success probability, and a session simulator.

pub mod automata;
pub mod fraud;
pub mod inference;
pub mod protocols;
pub mod semantics;
pub mod simulator;
pub mod terms;
