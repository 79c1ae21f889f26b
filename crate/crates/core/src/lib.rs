//! Deterministic dialogue engine for motivational-interviewing skills
//! training: a scripting language for teaching and role-play segments, an
//! interpreter with three delivery modes, fidelity and reliability scoring,
//! a policy-driven simulator and an append-only session store.

pub mod curriculum;
pub mod engine;
pub mod script;
pub mod persistence;
pub mod scorer;
pub mod simulator;
