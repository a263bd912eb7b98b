use std::collections::BTreeMap;

use super::*;

fn splitmix_oracle(state: u64, draws: usize) -> Vec<u64> {
    let mut s = state;
    let mut out = Vec::new();
    for _ in 0..draws {
        s = s.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        out.push(z ^ (z >> 31));
    }
    out
}

fn sink() -> Box<dyn Handler> {
    Box::new(|_now: Duration, _input: Input<'_>| Ok(Vec::new()))
}

fn params(latency_ms: u64, jitter: Duration, bw: Bandwidth, loss: f64, seed: u64) -> NetworkParams {
    NetworkParams { latency_base: Duration::from_millis(latency_ms), jitter, bandwidth: bw, loss_rate: loss, seed }
}

fn pair(p: NetworkParams) -> Simulation {
    let mut sim = Simulation::new(p).unwrap();
    sim.attach_endpoint("client", sink()).unwrap();
    sim.attach_endpoint("server", sink()).unwrap();
    sim
}

fn delivered_times(trace: &Trace) -> Vec<Duration> {
    trace.iter().filter(|e| e.kind == EventKind::Delivered).map(|e| e.time).collect()
}

fn ping(size_fields: usize) -> Message {
    let mut m = Message::new("test", "PING");
    for i in 0..size_fields {
        m.set(format!("f{i}"), FieldValue::Int(i as u64));
    }
    m
}

#[test]
fn fresh_simulation_is_empty() {
    let mut sim = Simulation::new(NetworkParams::default()).unwrap();
    assert_eq!(sim.clock(), Duration::ZERO);
    assert!(sim.trace().is_empty());
    assert!(sim.step().unwrap().is_none());
    assert_eq!(sim.clock(), Duration::ZERO);
    assert!(Simulation::new(params(1, Duration::ZERO, Bandwidth::Unlimited, 1.5, 0)).is_err());
    assert!(Simulation::new(params(1, Duration::ZERO, Bandwidth::BitsPerSec(0), 0.0, 0)).is_err());
}

#[test]
fn attach_and_addressing() {
    let mut sim = pair(NetworkParams::default());
    assert!(matches!(sim.attach_endpoint("client", sink()), Err(SimError::DuplicateEndpoint(_))));
    assert!(sim.send("client", "server", ping(0)).is_ok());
    assert!(matches!(sim.send("client", "ghost", ping(0)), Err(SimError::UnknownEndpoint(_))));
}

#[test]
fn latency_only_delivery() {
    let mut sim = pair(params(50, Duration::ZERO, Bandwidth::Unlimited, 0.0, 0));
    sim.send("client", "server", ping(1)).unwrap();
    sim.run_until(Duration::from_secs(1)).unwrap();
    assert_eq!(delivered_times(sim.trace()), vec![Duration::from_millis(50)]);
}

#[test]
fn serialization_delay_one_second() {
    let mut sim = pair(params(0, Duration::ZERO, Bandwidth::BitsPerSec(8000), 0.0, 0));
    // 4-byte header + 124 integer fields = 996 bytes; a 2-char text field adds 4 more.
    let mut m = ping(124);
    m.set("pad", FieldValue::Text("xx".into()));
    assert_eq!(m.size_bytes(), 1000);
    sim.send("client", "server", m).unwrap();
    sim.run_until(Duration::from_secs(10)).unwrap();
    assert_eq!(delivered_times(sim.trace()), vec![Duration::from_secs(1)]);
}

#[test]
fn total_loss_drops_without_jitter_draw() {
    let p = params(50, Duration::from_millis(10), Bandwidth::Unlimited, 1.0, 9);
    let mut sim = pair(p);
    sim.send("client", "server", ping(0)).unwrap();
    sim.send("client", "server", ping(0)).unwrap();
    let trace = sim.run_until(Duration::from_secs(1)).unwrap();
    let kinds: Vec<EventKind> = trace.iter().map(|e| e.kind).collect();
    assert_eq!(kinds, vec![EventKind::Sent, EventKind::Dropped, EventKind::Sent, EventKind::Dropped]);
    assert!(trace.iter().all(|e| e.time == Duration::ZERO));
}

#[test]
fn seeded_jitter_follows_draw_order() {
    let p = params(50, Duration::from_millis(10), Bandwidth::Unlimited, 0.0, 1);
    let mut sim = pair(p);
    sim.send("client", "server", ping(0)).unwrap();
    sim.run_until(Duration::from_secs(1)).unwrap();
    let draws = splitmix_oracle(1, 2);
    let jitter = draws[1] % 10_000_001;
    assert_eq!(delivered_times(sim.trace()), vec![Duration::from_nanos(50_000_000 + jitter)]);
}

#[test]
fn fifo_floor_per_pair() {
    let p = params(50, Duration::from_millis(10), Bandwidth::Unlimited, 0.0, 3);
    let mut sim = pair(p);
    for _ in 0..200 {
        sim.send("client", "server", ping(0)).unwrap();
    }
    sim.run_until(Duration::from_secs(1)).unwrap();
    let times = delivered_times(sim.trace());
    assert_eq!(times.len(), 200);
    assert!(times.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn timers_fire_cancel_and_replace() {
    let mut sim = pair(NetworkParams::default());
    sim.set_timer("client", Duration::from_millis(200), "a").unwrap();
    sim.set_timer("client", Duration::from_millis(100), "b").unwrap();
    sim.set_timer("client", Duration::from_millis(100), "rto").unwrap();
    sim.set_timer("client", Duration::from_millis(200), "rto").unwrap();
    sim.cancel_timer("client", "b").unwrap();
    sim.cancel_timer("client", "never").unwrap();
    let trace = sim.run_until(Duration::from_secs(1)).unwrap();
    let fired: Vec<(String, Duration)> = trace
        .iter()
        .filter(|e| e.kind == EventKind::TimerFired)
        .map(|e| (e.attr("timer").unwrap().to_string(), e.time))
        .collect();
    assert_eq!(
        fired,
        vec![("a".to_string(), Duration::from_millis(200)), ("rto".to_string(), Duration::from_millis(200)),]
    );
    let warned = trace
        .iter()
        .filter(|e| e.kind == EventKind::TimerCancelled && e.attr("warning") == Some("not-pending"))
        .count();
    assert_eq!(warned, 1);
}

#[test]
fn equal_time_entries_pop_in_insertion_order() {
    let mut sim = pair(NetworkParams::default());
    sim.set_timer("client", Duration::from_millis(5), "first").unwrap();
    sim.set_timer("server", Duration::from_millis(5), "second").unwrap();
    let a = sim.step().unwrap().unwrap();
    assert_eq!(sim.clock(), a.time);
    let b = sim.step().unwrap().unwrap();
    assert_eq!(a.attr("timer"), Some("first"));
    assert_eq!(b.attr("timer"), Some("second"));
    assert!(a.seq < b.seq);
}

#[test]
fn horizon_cuts_in_flight_messages() {
    let mut sim = pair(params(50, Duration::ZERO, Bandwidth::Unlimited, 0.0, 0));
    assert!(sim.run_until(Duration::ZERO).unwrap().is_empty());
    sim.send("client", "server", ping(0)).unwrap();
    let trace = sim.run_until(Duration::from_millis(40)).unwrap();
    assert_eq!(trace.count(EventKind::Sent), 1);
    assert_eq!(trace.count(EventKind::Delivered), 0);
}

fn echo_server() -> Box<dyn Handler> {
    Box::new(|_now: Duration, input: Input<'_>| match input {
        Input::Delivered { from, msg, .. } => Ok(vec![Action::Send { dst: from.to_string(), msg: msg.clone() }]),
        _ => Ok(Vec::new()),
    })
}

fn pinger(count: u64) -> Box<dyn Handler> {
    let mut sent = 0u64;
    Box::new(move |_now: Duration, input: Input<'_>| match input {
        Input::Start | Input::Delivered { .. } if sent < count => {
            sent += 1;
            Ok(vec![Action::Send { dst: "server".into(), msg: ping(1) }])
        }
        _ => Ok(Vec::new()),
    })
}

fn echo_run(seed: u64, loss: f64) -> Trace {
    let p = params(50, Duration::from_millis(10), Bandwidth::BitsPerSec(1_000_000), loss, seed);
    let mut sim = Simulation::new(p).unwrap();
    sim.attach_endpoint("client", pinger(50)).unwrap();
    sim.attach_endpoint("server", echo_server()).unwrap();
    sim.kick("client").unwrap();
    sim.run_until(Duration::from_secs(60)).unwrap().clone()
}

#[test]
fn runs_are_deterministic() {
    let a = echo_run(11, 0.0);
    let b = echo_run(11, 0.0);
    assert_eq!(a, b);
    assert_eq!(trace_io::to_jsonl(&a), trace_io::to_jsonl(&b));
    assert_ne!(trace_io::to_jsonl(&a), trace_io::to_jsonl(&echo_run(12, 0.0)));
}

#[test]
fn trace_invariants_hold() {
    for seed in 0..5 {
        let t = echo_run(seed, 0.3);
        assert!(t.events.windows(2).all(|w| w[0].seq < w[1].seq && w[0].time <= w[1].time));
        // every Sent is resolved by exactly one later Delivered or Dropped.
        let sent = t.count(EventKind::Sent);
        assert_eq!(sent, t.count(EventKind::Delivered) + t.count(EventKind::Dropped));
    }
}

#[test]
fn handler_failure_is_logged_and_marks_run() {
    let p = NetworkParams::default();
    let mut sim = Simulation::new(p).unwrap();
    sim.attach_endpoint("client", pinger(1)).unwrap();
    sim.attach_endpoint("server", Box::new(|_: Duration, _: Input<'_>| Err(HandlerError("boom".into())))).unwrap();
    sim.kick("client").unwrap();
    let trace = sim.run_until(Duration::from_secs(1)).unwrap().clone();
    let log = trace.iter().find(|e| e.kind == EventKind::ServiceLog).unwrap();
    assert_eq!(log.attr("level"), Some("error"));
    assert_eq!(sim.errored().unwrap().0, "server");
}

#[test]
fn runaway_guard_names_last_events() {
    let p = params(0, Duration::ZERO, Bandwidth::Unlimited, 0.0, 0);
    let mut sim = Simulation::new(p).unwrap();
    sim.attach_endpoint("client", pinger(u64::MAX)).unwrap();
    sim.attach_endpoint("server", echo_server()).unwrap();
    sim.set_step_budget(100);
    sim.kick("client").unwrap();
    match sim.run_until(Duration::from_secs(1)) {
        Err(SimError::Runaway { budget, last_events }) => {
            assert_eq!(budget, 100);
            assert_eq!(last_events.len(), 10);
        }
        other => panic!("expected runaway, got {other:?}"),
    }
}

/// Mean of the uniform jitter law over `N` deliveries, measured against the
/// minimum possible delivery time (latency only, no FIFO interaction since
/// each message uses its own directed pair).
pub(crate) fn jitter_mean_ms(jitter: Duration, n: usize, seed: u64) -> f64 {
    let p = params(50, jitter, Bandwidth::Unlimited, 0.0, seed);
    let mut sim = Simulation::new(p).unwrap();
    sim.attach_endpoint("server", sink()).unwrap();
    let names: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    for name in &names {
        sim.attach_endpoint(name, sink()).unwrap();
        sim.send(name, "server", ping(0)).unwrap();
    }
    let trace = sim.run_until(Duration::from_secs(10)).unwrap();
    let extra: u64 = delivered_times(trace).iter().map(|t| t.as_nanos() - 50_000_000).sum();
    extra as f64 / n as f64 / 1e6
}

#[test]
fn jitter_mean_converges_to_half() {
    let mean = jitter_mean_ms(Duration::from_millis(10), 10_000, 42);
    assert!((4.7..=5.3).contains(&mean), "mean {mean}");
}

#[test]
fn loss_count_within_three_sigma() {
    let mut sim = pair(params(1, Duration::ZERO, Bandwidth::Unlimited, 0.3, 42));
    for _ in 0..10_000 {
        sim.send("client", "server", ping(0)).unwrap();
    }
    let drops = sim.trace().count(EventKind::Dropped) as f64;
    let (n, p) = (10_000.0f64, 0.3);
    let sigma = (n * p * (1.0 - p)).sqrt();
    let mean = n * p;
    assert!((mean - 3.0 * sigma..=mean + 3.0 * sigma).contains(&drops), "drops {drops}");
}

#[test]
fn service_log_records_attrs() {
    let mut sim = pair(NetworkParams::default());
    sim.log(Some("client"), BTreeMap::from([("command".into(), "run".into())]));
    assert_eq!(sim.trace().events[0].attr("command"), Some("run"));
}
