//! Constraint representation, evaluation, and bounded-domain solving.

pub mod eval;
pub mod scope;
pub mod solve;

pub use eval::{eval, eval_bool, eval_conjunction, Env, EvalError, MAX_ARRAY_LEN};
pub use scope::{collect_scoped_constraints, ScopedConstraint};
pub use solve::{solve, solve_violations, Assignment, SolveMode, SolveRequest, SolveResult, Unknown};
