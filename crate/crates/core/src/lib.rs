//! Learning temporal-logic constraints from demonstrations.
//!
//! A constraint player mines a TLTL formula that separates expert
//! trajectories from policy rollouts ([`mining`]); a policy player trains a
//! Lagrangian soft actor-critic on the product of the environment and the
//! formula's automaton ([`automaton`], [`crl`]). [`ilcl`] alternates the two.

pub mod automaton;
pub mod crl;
pub mod envs;
pub mod ilcl;
pub mod mining;
pub mod nn;
pub mod tl;
