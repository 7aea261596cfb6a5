//! Blind oracular quantum computation: graph states with flow, a state-vector
//! simulator, the measurement calculus and the client/server protocols.

pub mod angles;
pub mod graphstate;
pub mod qsim;
pub mod calculus;
pub mod protocol;
pub mod security;
pub mod builtin;
