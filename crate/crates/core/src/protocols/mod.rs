//! Shipped protocols: specifications and in-process servers, including
//! deliberately faulty variants.

pub mod minip;
pub mod tinyq;

use std::collections::BTreeMap;

use crate::netsim::Action;
use crate::spec::{parse_expr, ActionSpec, Expr, Pattern, Transition, Trigger};

/// Parses an expression written in this crate. Panics on a typo, which the
/// unit tests catch.
pub(crate) fn x(src: &str) -> Expr {
    parse_expr(src).unwrap_or_else(|e| panic!("built-in expression `{src}`: {e}"))
}

pub(crate) fn send(msg_type: &str, fields: &[(&str, &str)]) -> ActionSpec {
    ActionSpec::Send { msg_type: msg_type.into(), fields: fields.iter().map(|(k, v)| (k.to_string(), x(v))).collect() }
}

pub(crate) fn assign(var: &str, value: &str) -> ActionSpec {
    ActionSpec::Assign { var: var.into(), value: x(value) }
}

pub(crate) fn set_timer(id: &str, delay: &str) -> ActionSpec {
    ActionSpec::SetTimer { id: id.into(), delay: x(delay) }
}

pub(crate) fn cancel_timer(id: &str) -> ActionSpec {
    ActionSpec::CancelTimer { id: id.into() }
}

pub(crate) fn recv(m: &str) -> Trigger {
    Trigger::Recv(m.into())
}

pub(crate) fn timer(id: &str) -> Trigger {
    Trigger::Timer(id.into())
}

pub(crate) struct T<'a> {
    pub id: &'a str,
    pub role: &'a str,
    pub from: &'a str,
    pub on: Trigger,
    pub guard: &'a str,
    pub actions: Vec<ActionSpec>,
    pub to: &'a str,
}

impl T<'_> {
    pub fn build(self) -> Transition {
        Transition {
            id: self.id.into(),
            role: self.role.into(),
            from: self.from.into(),
            trigger: self.on,
            guard: if self.guard.is_empty() { Expr::truth() } else { x(self.guard) },
            actions: self.actions,
            to: self.to.into(),
        }
    }
}

pub(crate) fn pattern(
    kind: crate::netsim::EventKind,
    src: Option<&str>,
    dst: Option<&str>,
    msgs: &[&str],
    cond: &str,
) -> Pattern {
    Pattern {
        kinds: vec![kind],
        src: src.map(Into::into),
        dst: dst.map(Into::into),
        msg_types: msgs.iter().map(|m| m.to_string()).collect(),
        condition: (!cond.is_empty()).then(|| x(cond)),
    }
}

/// `StateTransition` record for a hand-written endpoint.
pub(crate) fn state_change(from: &str, to: &str) -> Action {
    let attrs = BTreeMap::from([("from".to_string(), from.to_string()), ("to".to_string(), to.to_string())]);
    Action::Transition { attrs }
}
