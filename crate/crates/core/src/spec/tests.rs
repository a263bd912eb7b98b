use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::netsim::{Duration, EventKind, Message, NetworkParams, Trace};
use crate::protocols::minip::{minip_server, minip_spec, MiniPBug, MiniPParams};
use crate::protocols::tinyq::{tinyq_spec, TinyQParams};
use crate::session::{run_session, Driver, SessionSetup};

fn minip() -> Arc<CompiledSpec> {
    Arc::new(compile_spec(minip_spec(&MiniPParams::default(), &NetworkParams::default())).unwrap())
}

fn broken(edit: impl FnOnce(&mut ProtocolSpec)) -> CompileError {
    let mut spec = minip_spec(&MiniPParams::default(), &NetworkParams::default());
    edit(&mut spec);
    compile_spec(spec).unwrap_err()
}

fn session_trace(bug: Option<MiniPBug>) -> Trace {
    let net = NetworkParams::default();
    let setup = SessionSetup::new(minip(), net, "client", "server");
    let out = run_session(
        &setup,
        &Driver::Model { policy: Policy::UniformRandom },
        Box::new(minip_server(bug, &MiniPParams::default())),
    )
    .unwrap();
    (*out.trace).clone()
}

#[test]
fn shipped_specs_compile_without_warnings() {
    assert!(minip().warnings().is_empty(), "{:?}", minip().warnings());
    let tq = compile_spec(tinyq_spec(&TinyQParams::default())).unwrap();
    assert!(tq.warnings().is_empty(), "{:?}", tq.warnings());
}

#[test]
fn undefined_target_state_names_transition() {
    let err = broken(|s| s.transitions[0].to = "NOPE".into());
    assert_eq!(err.0.len(), 1);
    assert!(err.0[0].location.contains("t_send_hello"), "{}", err);
    assert!(err.0[0].message.contains("NOPE"));
}

#[test]
fn bytes_ordering_is_a_type_error() {
    let err = broken(|s| s.transitions[0].guard = parse_expr("x\"00\" < 1").unwrap());
    assert!(err.0.iter().any(|i| i.location.contains("t_send_hello") && i.location.contains("guard")), "{err}");
}

#[test]
fn duplicate_ids_and_unknown_messages_are_errors() {
    let err = broken(|s| {
        let dup = s.transitions[0].clone();
        s.transitions.push(dup);
    });
    assert!(err.0.iter().any(|i| i.message.contains("duplicate")), "{err}");
    let err = broken(|s| s.transitions[0].trigger = Trigger::Recv("GHOST".into()));
    assert!(err.0.iter().any(|i| i.message.contains("GHOST")), "{err}");
}

#[test]
fn unreachable_state_is_a_warning() {
    let mut spec = minip_spec(&MiniPParams::default(), &NetworkParams::default());
    spec.roles.iter_mut().find(|r| r.name == "client").unwrap().states.push("LIMBO".into());
    let compiled = compile_spec(spec).unwrap();
    assert!(compiled.warnings().iter().any(|w| w.message.contains("LIMBO") || w.location.contains("LIMBO")));
}

#[test]
fn enabled_transitions_examples() {
    let c = minip();
    let client = c.initial_vars("client");
    let ids: Vec<&str> = enabled_transitions(&c, "client", "INIT", &client, Observation::Spontaneous)
        .iter()
        .map(|t| t.id.as_str())
        .collect();
    assert_eq!(ids, ["t_send_hello"]);

    let server = c.initial_vars("server");
    let data = Message::new("minip", "DATA").with_int("seq", 0).with_int("payload", 0);
    assert!(enabled_transitions(&c, "server", "LISTEN", &server, Observation::Recv(&data)).is_empty());

    let final_state = enabled_transitions(&c, "client", "CLOSED", &client, Observation::Spontaneous);
    assert!(final_state.is_empty());
}

#[test]
fn tester_examples() {
    let c = minip();
    assert_eq!(
        derive_tester(c.clone(), "ghost", Policy::UniformRandom, 7).unwrap_err(),
        SpecError::UnknownRole("ghost".into())
    );

    let mut t = derive_tester(c.clone(), "client", Policy::UniformRandom, 7).unwrap();
    assert!(t.coverage().iter().all(|n| *n == 0));
    let step = t.step(Obs::Idle);
    assert!(matches!(&step.actions[0], TesterAction::Send(m) if m.msg_type == "HELLO"));
    assert!(matches!(&step.actions[1], TesterAction::SetTimer { delay, .. } if *delay == Duration::from_millis(200)));
    assert_eq!(t.state(), "WAIT_ACK");

    let fin_ack = Message::new("minip", "FIN_ACK");
    let step = t.step(Obs::Delivered(&fin_ack));
    assert_eq!(step.actions, [TesterAction::Stop(StopReason::Fail("unexpected-message".into()))]);
    assert!(t.is_stopped());
}

#[test]
fn tester_passes_in_final_state() {
    let tq = Arc::new(compile_spec(tinyq_spec(&TinyQParams { data_count: 1 })).unwrap());
    let mut t = derive_tester(tq, "client", Policy::CoverageGreedy, 1).unwrap();
    let Some(TesterAction::Send(initial)) = t.step(Obs::Idle).actions.into_iter().next() else { panic!() };
    let scid = initial.int("scid").unwrap();
    let hs = Message::new("tinyq", "HANDSHAKE_OK").with_int("dcid", scid).with_int("scid", 99);
    t.step(Obs::Delivered(&hs));
    t.step(Obs::Idle);
    let echo = Message::new("tinyq", "APPDATA").with_int("dcid", scid).with_int("seq", 1);
    t.step(Obs::Delivered(&echo));
    assert!(t.in_final_state(), "{}", t.state());
    assert_eq!(t.step(Obs::Idle).actions, [TesterAction::Stop(StopReason::Pass)]);
}

#[test]
fn testers_are_deterministic() {
    let c = minip();
    let mut a = derive_tester(c.clone(), "client", Policy::UniformRandom, 7).unwrap();
    let mut b = derive_tester(c, "client", Policy::UniformRandom, 7).unwrap();
    for _ in 0..5 {
        assert_eq!(a.step(Obs::Idle), b.step(Obs::Idle));
        assert_eq!(a.step(Obs::TimerFired("rto")), b.step(Obs::TimerFired("rto")));
    }
}

#[test]
fn check_trace_examples() {
    let c = minip();
    assert_eq!(check_trace(&c, &Trace::new(NetworkParams::default(), "e")), Verdict::Pass);
    assert_eq!(check_trace(&c, &session_trace(None)), Verdict::Pass);

    let bad = session_trace(Some(MiniPBug::Ack));
    let v = check_trace(&c, &bad);
    let Verdict::Fail { property, event_seq, .. } = &v else { panic!("{v}") };
    assert_eq!(property, "ack-matches-seq");
    let e = &bad.events[*event_seq as usize];
    assert_eq!(e.msg_type(), Some("ACK"));
}

#[test]
fn pending_deadline_at_trace_end_is_inconclusive() {
    let mut t = session_trace(None);
    let first_data =
        t.events.iter().position(|e| e.kind == EventKind::Delivered && e.msg_type() == Some("DATA")).unwrap();
    t.events.truncate(first_data + 1);
    assert_eq!(check_trace(&minip(), &t), Verdict::Inconclusive { reason: "horizon".into() });
}

#[test]
fn unknown_message_type_fails() {
    let mut t = session_trace(None);
    let i = t.events.iter().position(|e| e.kind == EventKind::Delivered).unwrap();
    t.events[i].payload.as_mut().unwrap().msg_type = "BOGUS".into();
    assert_eq!(check_trace(&minip(), &t).property(), Some("unknown-message"));
}

#[test]
fn spec_yaml_round_trips() {
    for spec in [minip_spec(&MiniPParams::default(), &NetworkParams::default()), tinyq_spec(&TinyQParams::default())] {
        let text = spec_to_yaml(&spec);
        assert_eq!(load_spec(&text).unwrap(), spec);
    }
}

fn distinct(policy: Policy, seed: u64) -> usize {
    let net = NetworkParams { seed, ..NetworkParams::default() };
    let setup = SessionSetup::new(minip(), net, "client", "server");
    run_session(&setup, &Driver::Model { policy }, Box::new(minip_server(None, &MiniPParams::default())))
        .unwrap()
        .distinct_covered
}

#[test]
fn greedy_dominates_on_lossless_network() {
    for seed in 0..20 {
        let (g, u) = (distinct(Policy::CoverageGreedy, seed), distinct(Policy::UniformRandom, seed));
        assert!(g >= u, "seed {seed}: greedy {g} uniform {u}");
    }
}

proptest! {
    #[test]
    fn recv_matches_at_most_one(seq in 0u64..8, state in prop::sample::select(vec!["LISTEN", "ESTABLISHED", "CLOSED"])) {
        let c = minip();
        let vars = c.initial_vars("server");
        for ty in ["HELLO", "DATA", "FIN"] {
            let m = Message::new("minip", ty).with_int("seq", seq).with_int("ver", 1).with_int("payload", 0);
            prop_assert!(enabled_transitions(&c, "server", state, &vars, Observation::Recv(&m)).len() <= 1);
        }
    }
}
