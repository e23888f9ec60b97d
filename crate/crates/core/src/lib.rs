//! Core library for the model-guarded service framework.
//!
//! A service model written in the GKSpec DSL is compiled once and then driven
//! by three engines that share the same state/constraint machinery:
//!
//! * a runtime **validator** that checks every untrusted-service response,
//! * a constraint-solving **mock** that stands in for the service entirely,
//! * a targeted **fuzzer** that emits model-violating return values.

pub mod constraint;
pub mod exec;
pub mod frontend;
pub mod fuzz;
pub mod harness;
pub mod mock;
pub mod models;
pub mod service;
pub mod state;
pub mod validator;
