//! Protocol specifications: guarded state machines with safety and timed
//! properties, compiled into testers and trace checkers.

mod check;
mod compile;
mod expr;
mod format;
mod model;
mod tester;
mod value;

pub use check::{
    check_property, check_trace, check_trace_with, CheckOptions, CheckResult, RoleMap, TraceChecker, Verdict,
    PROVENANCE,
};
pub use compile::{
    compile_spec, enabled_transitions, enabled_transitions_with_warnings, CompileError, CompileIssue, CompiledSpec,
    Effect, Observation, TransitionEnv, Vars,
};
pub use expr::{eval, eval_guard, parse_expr, typecheck, BinOp, Env, EvalError, Expr, ParseError, Ref, TypeScope};
pub use format::{load_spec, spec_to_yaml, SpecFormatError};
pub use model::{
    ActionSpec, FieldDecl, FieldType, MessageSchema, Pattern, ProtocolSpec, RoleDecl, SafetyProperty, TimedProperty,
    Transition, Trigger, VarDecl,
};
pub use tester::{derive_tester, Obs, Policy, StopReason, Taken, Tester, TesterAction, TesterStep};
pub use value::{Ty, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("role `{0}` is not declared by the specification")]
    UnknownRole(String),
}

#[cfg(test)]
mod tests;
