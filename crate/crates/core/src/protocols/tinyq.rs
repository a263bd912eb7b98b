//! TinyQ: a toy connection-ID protocol. Both ends pick a source connection
//! ID at handshake and must address every later packet to the peer's ID.

use crate::config::{ConfigValue, ParamMap, SchemaField, ValueType};
use crate::netsim::{mix64, Action, Duration, EventKind, Handler, HandlerError, Input, Message, Prng};
use crate::spec::{FieldDecl, MessageSchema, ProtocolSpec, RoleDecl, SafetyProperty, Trigger, VarDecl};

use super::{assign, pattern, recv, send, state_change, T};

pub const NAME: &str = "tinyq";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyQParams {
    pub data_count: u64,
}

impl Default for TinyQParams {
    fn default() -> Self {
        TinyQParams { data_count: 2 }
    }
}

impl TinyQParams {
    pub fn schema() -> Vec<SchemaField> {
        vec![SchemaField::optional("data_count", ValueType::Int, Some(ConfigValue::Int(2)))
            .with_int_range(1, u32::MAX as i128)]
    }

    pub fn from_params(p: &ParamMap) -> Result<Self, String> {
        let mut out = TinyQParams::default();
        if let Some(v) = p.get("data_count") {
            out.data_count = v
                .as_int()
                .and_then(|i| u64::try_from(i).ok())
                .filter(|n| *n >= 1)
                .ok_or_else(|| "data_count: expected a positive integer".to_string())?;
        }
        Ok(out)
    }
}

pub fn tinyq_spec(p: &TinyQParams) -> ProtocolSpec {
    let d = p.data_count;
    let more = format!("msg.dcid == my_scid && msg.seq == n && n < {d}");
    let last = format!("msg.dcid == my_scid && msg.seq == n && n >= {d}");
    let c = "client";
    let s = "server";
    #[rustfmt::skip]
    let transitions = vec![
        T { id: "c_send_initial", role: c, from: "INIT", on: Trigger::Spontaneous, guard: "",
            actions: vec![send("INITIAL", &[]), assign("my_scid", "out.scid")], to: "WAIT_HS" },
        T { id: "c_handshake", role: c, from: "WAIT_HS", on: recv("HANDSHAKE_OK"), guard: "msg.dcid == my_scid",
            actions: vec![assign("peer_scid", "msg.scid")], to: "CONNECTED" },
        T { id: "c_send_data", role: c, from: "CONNECTED", on: Trigger::Spontaneous, guard: "",
            actions: vec![send("APPDATA", &[("dcid", "peer_scid"), ("seq", "n")])], to: "AWAIT_ECHO" },
        T { id: "c_echo_next", role: c, from: "AWAIT_ECHO", on: recv("APPDATA"),
            guard: &more,
            actions: vec![assign("n", "n + 1")], to: "CONNECTED" },
        T { id: "c_echo_last", role: c, from: "AWAIT_ECHO", on: recv("APPDATA"),
            guard: &last,
            actions: vec![], to: "DONE" },
        T { id: "s_initial", role: s, from: "LISTEN", on: recv("INITIAL"), guard: "",
            actions: vec![assign("client_scid", "msg.scid"), send("HANDSHAKE_OK", &[("dcid", "msg.scid")])], to: "CONNECTED" },
        T { id: "s_echo", role: s, from: "CONNECTED", on: recv("APPDATA"), guard: "",
            actions: vec![send("APPDATA", &[("dcid", "client_scid"), ("seq", "msg.seq")])], to: "CONNECTED" },
    ];
    ProtocolSpec {
        name: NAME.into(),
        roles: vec![
            RoleDecl {
                name: c.into(),
                states: ["INIT", "WAIT_HS", "CONNECTED", "AWAIT_ECHO", "DONE"].map(String::from).to_vec(),
                variables: vec![VarDecl::int("my_scid", 0), VarDecl::int("peer_scid", 0), VarDecl::int("n", 1)],
            },
            RoleDecl {
                name: s.into(),
                states: ["LISTEN", "CONNECTED"].map(String::from).to_vec(),
                variables: vec![VarDecl::int("client_scid", 0)],
            },
        ],
        messages: vec![
            MessageSchema::new("INITIAL", vec![FieldDecl::uint("scid", 64), FieldDecl::uint("dcid", 64)]),
            MessageSchema::new("HANDSHAKE_OK", vec![FieldDecl::uint("scid", 64), FieldDecl::uint("dcid", 64)]),
            MessageSchema::new("APPDATA", vec![FieldDecl::uint("dcid", 64), FieldDecl::uint("seq", 32)]),
        ],
        transitions: transitions.into_iter().map(T::build).collect(),
        safety: vec![
            SafetyProperty {
                id: "cid-consistency".into(),
                scope: pattern(EventKind::Sent, Some(s), None, &["HANDSHAKE_OK", "APPDATA"], ""),
                predicate: super::x("msg.dcid == server.client_scid"),
            },
            SafetyProperty {
                id: "cid-consistency".into(),
                scope: pattern(EventKind::Sent, Some(c), None, &["APPDATA"], ""),
                predicate: super::x("msg.dcid == client.peer_scid"),
            },
        ],
        timed: vec![],
    }
}

/// Hand-written TinyQ server. `bug_cid` addresses the handshake reply to
/// connection ID 0 instead of the client's source ID.
#[derive(Debug, Clone)]
pub struct TinyQServer {
    bug_cid: bool,
    my_scid: u64,
    client_scid: Option<u64>,
}

pub fn tinyq_server(bug_cid: bool, seed: u64) -> TinyQServer {
    let mut prng = Prng::new(mix64(seed ^ 0x7419_5E2D));
    TinyQServer { bug_cid, my_scid: prng.next_u64(), client_scid: None }
}

impl TinyQServer {
    pub fn scid(&self) -> u64 {
        self.my_scid
    }
}

impl Handler for TinyQServer {
    fn handle(&mut self, _now: Duration, input: Input<'_>) -> Result<Vec<Action>, HandlerError> {
        let Input::Delivered { from, msg, .. } = input else {
            return Ok(vec![]);
        };
        let mut out = Vec::new();
        match (msg.msg_type.as_str(), self.client_scid) {
            ("INITIAL", None) => {
                let Some(scid) = msg.int("scid") else { return Ok(out) };
                self.client_scid = Some(scid);
                out.push(state_change("LISTEN", "CONNECTED"));
                let dcid = if self.bug_cid { 0 } else { scid };
                let reply = Message::new(NAME, "HANDSHAKE_OK").with_int("scid", self.my_scid).with_int("dcid", dcid);
                out.push(Action::Send { dst: from.to_string(), msg: reply });
            }
            ("APPDATA", Some(client)) if msg.int("dcid") == Some(self.my_scid) => {
                if let Some(seq) = msg.int("seq") {
                    let reply = Message::new(NAME, "APPDATA").with_int("dcid", client).with_int("seq", seq);
                    out.push(Action::Send { dst: from.to_string(), msg: reply });
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
    use crate::spec::compile_spec;

    #[test]
    fn compiles_cleanly() {
        let c = compile_spec(tinyq_spec(&TinyQParams::default())).unwrap();
        assert!(c.warnings().is_empty(), "{:?}", c.warnings());
        assert!(c.is_final("client", "DONE"));
        assert_eq!(c.spec().property_ids(), ["cid-consistency"]);
    }

    #[test]
    fn server_echoes_to_client_cid() {
        let mut s = tinyq_server(false, 9);
        let init = Message::new(NAME, "INITIAL").with_int("scid", 77).with_int("dcid", 5);
        let out = s.handle(Duration::ZERO, Input::Delivered { seq: 0, from: "client", msg: &init }).unwrap();
        let Some(Action::Send { msg, .. }) = out.last() else { panic!("no reply") };
        assert_eq!(msg.int("dcid"), Some(77));
        let data = Message::new(NAME, "APPDATA").with_int("dcid", s.scid()).with_int("seq", 1);
        let out = s.handle(Duration::ZERO, Input::Delivered { seq: 1, from: "client", msg: &data }).unwrap();
        let Some(Action::Send { msg, .. }) = out.last() else { panic!("no echo") };
        assert_eq!((msg.int("dcid"), msg.int("seq")), (Some(77), Some(1)));
        let stray = Message::new(NAME, "APPDATA").with_int("dcid", s.scid().wrapping_add(1)).with_int("seq", 2);
        assert!(s.handle(Duration::ZERO, Input::Delivered { seq: 2, from: "client", msg: &stray }).unwrap().is_empty());
    }

    #[test]
    fn bug_cid_zeroes_handshake() {
        let mut s = tinyq_server(true, 9);
        let init = Message::new(NAME, "INITIAL").with_int("scid", 77).with_int("dcid", 5);
        let out = s.handle(Duration::ZERO, Input::Delivered { seq: 0, from: "client", msg: &init }).unwrap();
        let Some(Action::Send { msg, .. }) = out.last() else { panic!("no reply") };
        assert_eq!(msg.int("dcid"), Some(0));
    }
}
