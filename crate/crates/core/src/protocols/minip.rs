//! MiniP: a small client-server protocol with a version handshake,
//! sequenced data with retransmission, and teardown.

use crate::config::{as_duration, ConfigValue, ParamMap, SchemaField, ValueType};
use crate::netsim::{Action, Duration, EventKind, Handler, HandlerError, Input, Message, NetworkParams};
use crate::spec::{FieldDecl, MessageSchema, ProtocolSpec, RoleDecl, SafetyProperty, TimedProperty, Trigger, VarDecl};

use super::{assign, cancel_timer, pattern, recv, send, set_timer, state_change, timer, T};

pub const NAME: &str = "minip";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiniPParams {
    pub rto: Duration,
    pub max_retries: u64,
    pub version: u8,
    pub data_count: u64,
}

impl Default for MiniPParams {
    fn default() -> Self {
        MiniPParams { rto: Duration::from_millis(200), max_retries: 3, version: 1, data_count: 3 }
    }
}

impl MiniPParams {
    pub fn schema() -> Vec<SchemaField> {
        vec![
            SchemaField::optional("rto", ValueType::Duration, Some(ConfigValue::str("200ms")))
                .with_int_range(1, u64::MAX as i128),
            SchemaField::optional("max_retries", ValueType::Int, Some(ConfigValue::Int(3))).with_int_range(1, 1_000),
            SchemaField::optional("version", ValueType::Int, Some(ConfigValue::Int(1))).with_int_range(0, 255),
            SchemaField::optional("data_count", ValueType::Int, Some(ConfigValue::Int(3)))
                .with_int_range(1, u32::MAX as i128),
        ]
    }

    /// Reads validated params; absent keys keep their defaults.
    pub fn from_params(p: &ParamMap) -> Result<Self, String> {
        let mut out = MiniPParams::default();
        if let Some(v) = p.get("rto") {
            out.rto = as_duration(v).ok_or_else(|| format!("rto: `{v}` is not a duration"))?;
        }
        let int = |key: &str| -> Result<Option<u64>, String> {
            p.get(key)
                .map(|v| {
                    v.as_int()
                        .and_then(|i| u64::try_from(i).ok())
                        .ok_or_else(|| format!("{key}: expected an unsigned integer"))
                })
                .transpose()
        };
        if let Some(v) = int("max_retries")? {
            out.max_retries = v;
        }
        if let Some(v) = int("version")? {
            out.version = u8::try_from(v).map_err(|_| "version: must fit in 8 bits".to_string())?;
        }
        if let Some(v) = int("data_count")? {
            out.data_count = v;
        }
        if out.rto.as_nanos() == 0 || out.max_retries == 0 || out.data_count == 0 {
            return Err("rto, max_retries and data_count must be positive".into());
        }
        Ok(out)
    }
}

/// Message and transition deadline for a server reply: a round trip at
/// worst-case jitter plus 10 ms of slack.
pub fn reply_deadline(net: &NetworkParams) -> Duration {
    let ns = 2 * net.latency_base.as_nanos() + 2 * net.jitter.as_nanos() + 10_000_000;
    Duration::from_nanos(ns)
}

pub fn minip_spec(p: &MiniPParams, net: &NetworkParams) -> ProtocolSpec {
    let rto = format!("{}ns", p.rto.as_nanos());
    let r = p.max_retries;
    let d = p.data_count;
    let retry = format!("retries < {r}");
    let more = format!("msg.seq == n && n < {d}");
    let last = format!("msg.seq == n && n >= {d}");
    let c = "client";
    let s = "server";
    #[rustfmt::skip]
    let transitions = vec![
        T { id: "t_send_hello", role: c, from: "INIT", on: Trigger::Spontaneous, guard: "",
            actions: vec![send("HELLO", &[("ver", "ver")]), set_timer("rto", &rto), assign("retries", "0")], to: "WAIT_ACK" },
        T { id: "t_hello_ack", role: c, from: "WAIT_ACK", on: recv("HELLO_ACK"), guard: "msg.ver == ver",
            actions: vec![cancel_timer("rto")], to: "ESTABLISHED" },
        T { id: "t_hello_retx", role: c, from: "WAIT_ACK", on: timer("rto"), guard: &retry,
            actions: vec![send("HELLO", &[("ver", "ver")]), set_timer("rto", &rto), assign("retries", "retries + 1")], to: "WAIT_ACK" },
        T { id: "t_send_data", role: c, from: "ESTABLISHED", on: Trigger::Spontaneous, guard: "",
            actions: vec![send("DATA", &[("seq", "n")]), set_timer("rto", &rto), assign("retries", "0")], to: "AWAIT_ACK" },
        T { id: "t_close_early", role: c, from: "ESTABLISHED", on: Trigger::Spontaneous, guard: "n >= 2",
            actions: vec![send("FIN", &[]), set_timer("rto", &rto), assign("retries", "0")], to: "CLOSING" },
        T { id: "t_ack_next", role: c, from: "AWAIT_ACK", on: recv("ACK"), guard: &more,
            actions: vec![cancel_timer("rto"), assign("n", "n + 1")], to: "ESTABLISHED" },
        T { id: "t_ack_last", role: c, from: "AWAIT_ACK", on: recv("ACK"), guard: &last,
            actions: vec![cancel_timer("rto"), send("FIN", &[]), set_timer("rto", &rto), assign("retries", "0")], to: "CLOSING" },
        T { id: "t_data_retx", role: c, from: "AWAIT_ACK", on: timer("rto"), guard: &retry,
            actions: vec![send("DATA", &[("seq", "n")]), set_timer("rto", &rto), assign("retries", "retries + 1")], to: "AWAIT_ACK" },
        T { id: "t_probe_after_fin", role: c, from: "CLOSING", on: Trigger::Spontaneous, guard: "probed == 0",
            actions: vec![send("DATA", &[("seq", "0")]), assign("probed", "1")], to: "CLOSING" },
        T { id: "t_fin_ack", role: c, from: "CLOSING", on: recv("FIN_ACK"), guard: "",
            actions: vec![cancel_timer("rto")], to: "CLOSED" },
        T { id: "t_fin_retx", role: c, from: "CLOSING", on: timer("rto"), guard: &retry,
            actions: vec![send("FIN", &[]), set_timer("rto", &rto), assign("retries", "retries + 1")], to: "CLOSING" },
        T { id: "t_stray_ack", role: c, from: "CLOSING", on: recv("ACK"), guard: "", actions: vec![], to: "CLOSING" },
        T { id: "s_hello", role: s, from: "LISTEN", on: recv("HELLO"), guard: "msg.ver == ver",
            actions: vec![assign("hello_ver", "msg.ver"), assign("handshaken", "1"), send("HELLO_ACK", &[("ver", "hello_ver")])],
            to: "ESTABLISHED" },
        T { id: "s_hello_again", role: s, from: "ESTABLISHED", on: recv("HELLO"), guard: "msg.ver == ver",
            actions: vec![send("HELLO_ACK", &[("ver", "hello_ver")])], to: "ESTABLISHED" },
        T { id: "s_data", role: s, from: "ESTABLISHED", on: recv("DATA"), guard: "",
            actions: vec![assign("last_data", "msg.seq"), send("ACK", &[("seq", "msg.seq")])], to: "ESTABLISHED" },
        T { id: "s_fin", role: s, from: "ESTABLISHED", on: recv("FIN"), guard: "",
            actions: vec![assign("handshaken", "0"), assign("fin_seen", "1"), send("FIN_ACK", &[])], to: "CLOSED" },
        T { id: "s_fin_again", role: s, from: "CLOSED", on: recv("FIN"), guard: "", actions: vec![send("FIN_ACK", &[])], to: "CLOSED" },
    ];
    let reply = reply_deadline(net);
    let retx = Duration::from_nanos(p.rto.as_nanos() + 1_000_000);
    ProtocolSpec {
        name: NAME.into(),
        roles: vec![
            RoleDecl {
                name: c.into(),
                states: ["INIT", "WAIT_ACK", "ESTABLISHED", "AWAIT_ACK", "CLOSING", "CLOSED"]
                    .map(String::from)
                    .to_vec(),
                variables: vec![
                    VarDecl::int("ver", p.version as u64),
                    VarDecl::int("n", 1),
                    VarDecl::int("retries", 0),
                    VarDecl::int("probed", 0),
                ],
            },
            RoleDecl {
                name: s.into(),
                states: ["LISTEN", "ESTABLISHED", "CLOSED"].map(String::from).to_vec(),
                variables: vec![
                    VarDecl::int("ver", p.version as u64),
                    VarDecl::int("hello_ver", 0),
                    VarDecl::int("last_data", 0),
                    VarDecl::int("handshaken", 0),
                    VarDecl::int("fin_seen", 0),
                ],
            },
        ],
        messages: vec![
            MessageSchema::new("HELLO", vec![FieldDecl::uint("ver", 8)]),
            MessageSchema::new("HELLO_ACK", vec![FieldDecl::uint("ver", 8)]),
            MessageSchema::new("DATA", vec![FieldDecl::uint("seq", 32)]),
            MessageSchema::new("ACK", vec![FieldDecl::uint("seq", 32)]),
            MessageSchema::new("FIN", vec![]),
            MessageSchema::new("FIN_ACK", vec![]),
        ],
        transitions: transitions.into_iter().map(T::build).collect(),
        safety: vec![
            SafetyProperty {
                id: "ack-matches-seq".into(),
                scope: pattern(EventKind::Sent, Some(s), None, &["ACK"], ""),
                predicate: super::x("server.handshaken == 0 || msg.seq == server.last_data"),
            },
            SafetyProperty {
                id: "version-echo".into(),
                scope: pattern(EventKind::Sent, Some(s), None, &["HELLO_ACK"], ""),
                predicate: super::x("msg.ver == server.hello_ver"),
            },
            SafetyProperty {
                id: "no-data-before-handshake".into(),
                scope: pattern(EventKind::Sent, Some(s), None, &["ACK"], ""),
                predicate: super::x("server.handshaken == 1"),
            },
        ],
        timed: vec![
            TimedProperty {
                id: "ack-deadline".into(),
                trigger: pattern(EventKind::Delivered, None, Some(s), &["DATA"], "server.handshaken == 1"),
                response: crate::spec::Pattern {
                    kinds: vec![EventKind::Delivered, EventKind::Dropped],
                    src: Some(s.into()),
                    dst: None,
                    msg_types: vec!["ACK".into()],
                    condition: Some(super::x("msg.seq == trig.seq")),
                },
                deadline: reply,
            },
            TimedProperty {
                id: "retx-deadline".into(),
                trigger: pattern(
                    EventKind::Sent,
                    Some(c),
                    None,
                    &["DATA"],
                    &format!("msg.seq >= 1 && client.retries < {r}"),
                ),
                response: crate::spec::Pattern {
                    kinds: vec![EventKind::Sent, EventKind::Delivered],
                    src: None,
                    dst: None,
                    msg_types: vec!["DATA".into(), "ACK".into()],
                    condition: Some(super::x("msg.seq == trig.seq")),
                },
                deadline: retx,
            },
            TimedProperty {
                id: "finack-deadline".into(),
                trigger: pattern(EventKind::Delivered, None, Some(s), &["FIN"], "server.fin_seen == 1"),
                response: pattern(EventKind::Sent, Some(s), None, &["FIN_ACK"], ""),
                deadline: reply,
            },
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MiniPBug {
    /// ACK carries seq + 1.
    Ack,
    /// HELLO_ACK echoes version + 1.
    Version,
    /// DATA is acknowledged in every state.
    PrehandshakeData,
    /// FIN is never answered.
    NoFinAck,
}

impl MiniPBug {
    pub const ALL: [MiniPBug; 4] = [MiniPBug::Ack, MiniPBug::Version, MiniPBug::PrehandshakeData, MiniPBug::NoFinAck];

    pub fn name(self) -> &'static str {
        match self {
            MiniPBug::Ack => "bug_ack",
            MiniPBug::Version => "bug_version",
            MiniPBug::PrehandshakeData => "bug_prehandshake_data",
            MiniPBug::NoFinAck => "bug_no_finack",
        }
    }

    /// Property a tester is expected to report against this variant.
    pub fn property(self) -> &'static str {
        match self {
            MiniPBug::Ack => "ack-matches-seq",
            MiniPBug::Version => "version-echo",
            MiniPBug::PrehandshakeData => "no-data-before-handshake",
            MiniPBug::NoFinAck => "finack-deadline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Listen,
    Established,
    Closed,
}

impl State {
    fn name(self) -> &'static str {
        match self {
            State::Listen => "LISTEN",
            State::Established => "ESTABLISHED",
            State::Closed => "CLOSED",
        }
    }
}

/// Hand-written MiniP server. Single session.
#[derive(Debug, Clone)]
pub struct MiniPServer {
    bug: Option<MiniPBug>,
    version: u8,
    state: State,
}

pub fn minip_server(bug: Option<MiniPBug>, params: &MiniPParams) -> MiniPServer {
    MiniPServer { bug, version: params.version, state: State::Listen }
}

impl MiniPServer {
    fn move_to(&mut self, next: State, out: &mut Vec<Action>) {
        if next != self.state {
            out.push(state_change(self.state.name(), next.name()));
            self.state = next;
        }
    }
}

impl Handler for MiniPServer {
    fn handle(&mut self, _now: Duration, input: Input<'_>) -> Result<Vec<Action>, HandlerError> {
        let Input::Delivered { from, msg, .. } = input else {
            return Ok(vec![]);
        };
        let mut out = Vec::new();
        let dst = from.to_string();
        match msg.msg_type.as_str() {
            "HELLO" => {
                let ok = msg.int("ver") == Some(self.version as u64);
                if ok && self.state != State::Closed {
                    self.move_to(State::Established, &mut out);
                    let ver =
                        if self.bug == Some(MiniPBug::Version) { self.version.wrapping_add(1) } else { self.version };
                    out.push(Action::Send { dst, msg: Message::new(NAME, "HELLO_ACK").with_int("ver", ver as u64) });
                }
            }
            "DATA" => {
                let accept = self.state == State::Established || self.bug == Some(MiniPBug::PrehandshakeData);
                if let (true, Some(seq)) = (accept, msg.int("seq")) {
                    let seq = if self.bug == Some(MiniPBug::Ack) { seq.wrapping_add(1) } else { seq };
                    out.push(Action::Send { dst, msg: Message::new(NAME, "ACK").with_int("seq", seq) });
                }
            }
            "FIN" if self.state != State::Listen => {
                self.move_to(State::Closed, &mut out);
                if self.bug != Some(MiniPBug::NoFinAck) {
                    out.push(Action::Send { dst, msg: Message::new(NAME, "FIN_ACK") });
                }
            }
            _ => {}
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{compile_spec, enabled_transitions, Observation};

    #[test]
    fn compiles_without_warnings() {
        let c = compile_spec(minip_spec(&MiniPParams::default(), &NetworkParams::default())).unwrap();
        assert!(c.warnings().is_empty(), "{:?}", c.warnings());
        let client = c.role("client").unwrap();
        assert_eq!(client.states.len(), 6);
        assert!(c.is_final("client", "CLOSED"));
        assert!(!c.is_final("client", "CLOSING"));
    }

    #[test]
    fn default_rto_in_set_timer() {
        let spec = minip_spec(&MiniPParams::default(), &NetworkParams::default());
        let t = spec.transitions.iter().find(|t| t.id == "t_send_hello").unwrap();
        let delay = t.actions.iter().find_map(|a| match a {
            crate::spec::ActionSpec::SetTimer { delay, .. } => Some(delay.to_string()),
            _ => None,
        });
        assert_eq!(delay.as_deref(), Some("200000000"));
    }

    #[test]
    fn enabled_sets() {
        let c = compile_spec(minip_spec(&MiniPParams::default(), &NetworkParams::default())).unwrap();
        let vars = c.initial_vars("client");
        let ids: Vec<_> = enabled_transitions(&c, "client", "INIT", &vars, Observation::Spontaneous)
            .iter()
            .map(|t| t.id.clone())
            .collect();
        assert_eq!(ids, ["t_send_hello"]);
        let data = Message::new(NAME, "DATA").with_int("seq", 1);
        let svars = c.initial_vars("server");
        assert!(enabled_transitions(&c, "server", "LISTEN", &svars, Observation::Recv(&data)).is_empty());
        assert!(enabled_transitions(&c, "client", "CLOSED", &vars, Observation::Spontaneous).is_empty());
    }

    #[test]
    fn deadline_formula() {
        let net = NetworkParams { jitter: Duration::from_millis(10), ..NetworkParams::default() };
        assert_eq!(reply_deadline(&net), Duration::from_millis(130));
    }

    #[test]
    fn params_from_map() {
        let mut p = ParamMap::new();
        p.insert("rto".into(), ConfigValue::str("50ms"));
        p.insert("data_count".into(), ConfigValue::Int(2));
        let m = MiniPParams::from_params(&p).unwrap();
        assert_eq!(m.rto, Duration::from_millis(50));
        assert_eq!(m.data_count, 2);
        assert_eq!(m.max_retries, 3);
        p.insert("version".into(), ConfigValue::Int(300));
        assert!(MiniPParams::from_params(&p).is_err());
    }

    fn deliver(s: &mut MiniPServer, msg: Message) -> Vec<Action> {
        s.handle(Duration::ZERO, Input::Delivered { seq: 0, from: "client", msg: &msg }).unwrap()
    }

    fn sent(actions: &[Action]) -> Vec<(String, Option<u64>)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send { msg, .. } => {
                    Some((msg.msg_type.clone(), msg.fields.values().next().and_then(|v| v.as_int())))
                }
                _ => None,
            })
            .collect()
    }

    #[test]
    fn correct_server_behaviour() {
        let mut s = minip_server(None, &MiniPParams::default());
        assert!(sent(&deliver(&mut s, Message::new(NAME, "DATA").with_int("seq", 1))).is_empty());
        assert_eq!(
            sent(&deliver(&mut s, Message::new(NAME, "HELLO").with_int("ver", 1))),
            [("HELLO_ACK".into(), Some(1))]
        );
        assert_eq!(sent(&deliver(&mut s, Message::new(NAME, "DATA").with_int("seq", 4))), [("ACK".into(), Some(4))]);
        assert_eq!(sent(&deliver(&mut s, Message::new(NAME, "FIN"))), [("FIN_ACK".into(), None)]);
        assert!(sent(&deliver(&mut s, Message::new(NAME, "DATA").with_int("seq", 5))).is_empty());
    }

    #[test]
    fn bug_variants_deviate_once() {
        let p = MiniPParams::default();
        let mut s = minip_server(Some(MiniPBug::Ack), &p);
        deliver(&mut s, Message::new(NAME, "HELLO").with_int("ver", 1));
        assert_eq!(sent(&deliver(&mut s, Message::new(NAME, "DATA").with_int("seq", 4))), [("ACK".into(), Some(5))]);

        let mut s = minip_server(Some(MiniPBug::Version), &p);
        assert_eq!(
            sent(&deliver(&mut s, Message::new(NAME, "HELLO").with_int("ver", 1))),
            [("HELLO_ACK".into(), Some(2))]
        );

        let mut s = minip_server(Some(MiniPBug::PrehandshakeData), &p);
        assert_eq!(sent(&deliver(&mut s, Message::new(NAME, "DATA").with_int("seq", 1))), [("ACK".into(), Some(1))]);

        let mut s = minip_server(Some(MiniPBug::NoFinAck), &p);
        deliver(&mut s, Message::new(NAME, "HELLO").with_int("ver", 1));
        assert!(sent(&deliver(&mut s, Message::new(NAME, "FIN"))).is_empty());
    }
}
