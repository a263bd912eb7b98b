//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Run with `cargo test --test acceptance`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ptb_cli::cli_main;
use ptb_core::fuzz::{fuzz_session, minimize, replay, FuzzConfig};
use ptb_core::netsim::trace_io::to_jsonl;
use ptb_core::netsim::{
    Action, Bandwidth, Duration, EventKind, Handler, Input, Message, NetworkParams, Prng, Simulation,
};
use ptb_core::protocols::minip::{minip_server, minip_spec, MiniPBug, MiniPParams};
use ptb_core::protocols::tinyq::{tinyq_server, tinyq_spec, TinyQParams};
use ptb_core::session::{run_session, Driver, SessionSetup};
use ptb_core::spec::{check_property, compile_spec, CheckResult, CompiledSpec, Policy, Verdict};

// Pinned limits and tolerances.
const DETERMINISM_WALL_S: f64 = 5.0;
const SWEEP_WALL_S: f64 = 60.0;
const JITTER_MEAN_LO_MS: f64 = 4.7;
const JITTER_MEAN_HI_MS: f64 = 5.3;
const STAT_SAMPLES: u64 = 10_000;
const LOSS_RATE: f64 = 0.3;
const SIGMAS: f64 = 3.0;
const BUG_MIN_HITS: usize = 95;
const BUG_MAX_STEPS: u64 = 50;
const ORACLE_DEPTH: usize = 12;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type Variant = (String, &'static str, Box<dyn Fn(u64) -> ptb_core::session::SessionOutcome>);

fn experiments(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments").join(name).to_string_lossy().into_owned()
}

fn ptb(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli_main(std::iter::once("ptb").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned() + &String::from_utf8_lossy(&err))
}

fn traces_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(Result::ok)
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.starts_with("trace_") && n.ends_with(".jsonl"))
                .map(|n| (n.clone(), fs::read(dir.join(&n)).unwrap()))
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

fn minip_compiled(params: &MiniPParams, net: &NetworkParams) -> Arc<CompiledSpec> {
    Arc::new(compile_spec(minip_spec(params, net)).unwrap())
}

fn lossy(seed: u64) -> NetworkParams {
    NetworkParams { seed, loss_rate: LOSS_RATE, jitter: Duration::from_millis(10), ..NetworkParams::default() }
}

fn lossless(seed: u64) -> NetworkParams {
    NetworkParams { seed, ..NetworkParams::default() }
}

// 1
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let cfg = experiments("minip_lossy.yaml");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let (code, out) = ptb(&["run", "--config", &cfg, "--output", d.to_str().unwrap()]);
        if code > 1 {
            return Err(format!("run exited {code}: {out}"));
        }
    }
    let (ta, tb) = (traces_in(&a), traces_in(&b));
    if ta.is_empty() || ta != tb {
        return Err(format!("{} vs {} trace files, identical={}", ta.len(), tb.len(), ta == tb));
    }
    let mut distinct = BTreeSet::new();
    for seed in 0..10u64 {
        let d = tmp.path().join(format!("s{seed}"));
        ptb(&["run", "--config", &cfg, "--seed", &seed.to_string(), "--output", d.to_str().unwrap()]);
        for (_, bytes) in traces_in(&d) {
            distinct.insert(bytes);
        }
    }
    let wall = start.elapsed().as_secs_f64();
    if distinct.len() < 2 {
        return Err(format!("seeds 0..9 gave {} distinct trace(s)", distinct.len()));
    }
    if wall >= DETERMINISM_WALL_S {
        return Err(format!("took {wall:.2}s"));
    }
    Ok(format!("{} identical trace file(s); {} distinct traces over seeds 0..9; {wall:.2}s", ta.len(), distinct.len()))
}

/// splitmix64 written from its definition, separate from the crate's Prng.
fn splitmix_oracle(state: u64, draws: usize) -> Vec<u64> {
    let mut s = state;
    (0..draws)
        .map(|_| {
            s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        })
        .collect()
}

// 2
fn prng_bits() -> Outcome {
    for state in [0u64, 1, 0xDEAD_BEEF] {
        let mut p = Prng::new(state);
        let got: Vec<u64> = (0..4).map(|_| p.next_u64()).collect();
        let want = splitmix_oracle(state, 4);
        if got != want {
            return Err(format!("state {state:#x}: got {got:x?}, want {want:x?}"));
        }
    }
    Ok("12 draws match the oracle".into())
}

struct Quiet;
impl Handler for Quiet {
    fn handle(&mut self, _: Duration, _: Input<'_>) -> Result<Vec<Action>, ptb_core::netsim::HandlerError> {
        Ok(vec![])
    }
}

/// Sends `count` PINGs to `b`, one every `gap`, starting at t=0.
struct Pinger {
    sent: u64,
    count: u64,
    gap: Duration,
    size_pad: usize,
}

impl Handler for Pinger {
    fn handle(&mut self, _: Duration, input: Input<'_>) -> Result<Vec<Action>, ptb_core::netsim::HandlerError> {
        if matches!(input, Input::Delivered { .. }) || self.sent >= self.count {
            return Ok(vec![]);
        }
        let mut msg = Message::new("probe", "PING").with_int("i", self.sent);
        if self.size_pad > 0 {
            msg = msg.with("pad", ptb_core::netsim::FieldValue::Bytes(vec![0; self.size_pad]));
        }
        self.sent += 1;
        let mut out = vec![Action::Send { dst: "b".into(), msg }];
        if self.sent < self.count {
            out.push(Action::SetTimer { id: "tick".into(), delay: self.gap });
        }
        Ok(out)
    }
}

fn ping_trace(net: NetworkParams, count: u64, gap: Duration, size_pad: usize) -> ptb_core::Trace {
    let mut sim = Simulation::new(net).unwrap();
    sim.attach_endpoint("a", Box::new(Pinger { sent: 0, count, gap, size_pad })).unwrap();
    sim.attach_endpoint("b", Box::new(Quiet)).unwrap();
    sim.kick("a").unwrap();
    sim.run_until(Duration::from_secs(1_000_000)).unwrap().clone()
}

fn first(trace: &ptb_core::Trace, kind: EventKind) -> Option<Duration> {
    trace.iter().find(|e| e.kind == kind).map(|e| e.time)
}

// 3
fn sim_arithmetic() -> Outcome {
    let one = |net, pad| ping_trace(net, 1, Duration::from_secs(1), pad);
    let t = one(NetworkParams::default(), 0);
    if first(&t, EventKind::Delivered) != Some(Duration::from_millis(50)) {
        return Err(format!("latency case delivered at {:?}", first(&t, EventKind::Delivered)));
    }
    // The bandwidth case needs a 1000-byte message on the wire.
    let base = Message::new("probe", "PING").with_int("i", 0).size_bytes();
    let probe = Message::new("probe", "PING").with_int("i", 0).with("pad", ptb_core::netsim::FieldValue::Bytes(vec![]));
    let pad = 1000 - probe.size_bytes() as usize;
    let sized =
        Message::new("probe", "PING").with_int("i", 0).with("pad", ptb_core::netsim::FieldValue::Bytes(vec![0; pad]));
    if sized.size_bytes() != 1000 {
        return Err(format!("could not size a probe to 1000 bytes (base {base}, got {})", sized.size_bytes()));
    }
    let net = NetworkParams {
        latency_base: Duration::ZERO,
        bandwidth: Bandwidth::BitsPerSec(8000),
        ..NetworkParams::default()
    };
    let t = one(net, pad);
    if first(&t, EventKind::Delivered) != Some(Duration::from_secs(1)) {
        return Err(format!("bandwidth case delivered at {:?}", first(&t, EventKind::Delivered)));
    }
    let t = one(NetworkParams { loss_rate: 1.0, ..NetworkParams::default() }, 0);
    if first(&t, EventKind::Dropped) != Some(Duration::ZERO) || t.count(EventKind::Delivered) != 0 {
        return Err("loss=1 case did not drop at t=0".into());
    }
    Ok("50ms latency, 1s serialization, drop at loss=1".into())
}

// 4
fn statistics() -> Outcome {
    let gap = Duration::from_millis(100);
    let net = NetworkParams { seed: 9, jitter: Duration::from_millis(10), ..NetworkParams::default() };
    let t = ping_trace(net, STAT_SAMPLES, gap, 0);
    let sent: Vec<Duration> = t.iter().filter(|e| e.kind == EventKind::Sent).map(|e| e.time).collect();
    let delivered: Vec<(u64, Duration)> = t
        .iter()
        .filter(|e| e.kind == EventKind::Delivered)
        .map(|e| (e.payload.as_ref().unwrap().int("i").unwrap(), e.time))
        .collect();
    if delivered.len() as u64 != STAT_SAMPLES {
        return Err(format!("{} deliveries", delivered.len()));
    }
    let extra_ns: f64 = delivered
        .iter()
        .map(|(i, at)| (at.as_nanos() - sent[*i as usize].as_nanos() - Duration::from_millis(50).as_nanos()) as f64)
        .sum();
    let mean_ms = extra_ns / STAT_SAMPLES as f64 / 1e6;
    if !(JITTER_MEAN_LO_MS..=JITTER_MEAN_HI_MS).contains(&mean_ms) {
        return Err(format!("mean extra delay {mean_ms:.3}ms"));
    }

    let t =
        ping_trace(NetworkParams { seed: 9, loss_rate: LOSS_RATE, ..NetworkParams::default() }, STAT_SAMPLES, gap, 0);
    let drops = t.count(EventKind::Dropped) as f64;
    let n = STAT_SAMPLES as f64;
    let mean = n * LOSS_RATE;
    let sd = (n * LOSS_RATE * (1.0 - LOSS_RATE)).sqrt();
    let (lo, hi) = (mean - SIGMAS * sd, mean + SIGMAS * sd);
    if drops < lo || drops > hi {
        return Err(format!("{drops} drops outside [{lo:.1}, {hi:.1}]"));
    }
    Ok(format!("mean jitter {mean_ms:.3}ms; {drops} drops in [{lo:.1}, {hi:.1}]"))
}

fn minip_session(
    bug: Option<MiniPBug>,
    params: &MiniPParams,
    net: NetworkParams,
    driver: &Driver,
) -> ptb_core::session::SessionOutcome {
    let setup = SessionSetup::new(minip_compiled(params, &net), net, "client", "server");
    run_session(&setup, driver, Box::new(minip_server(bug, params))).unwrap()
}

const UNIFORM: Driver = Driver::Model { policy: Policy::UniformRandom };

// 5
fn conformance() -> Outcome {
    let p = MiniPParams::default();
    let bad: Vec<String> = (0..100)
        .filter_map(|seed| {
            let out = minip_session(None, &p, lossless(seed), &UNIFORM);
            (out.verdict != Verdict::Pass || out.tester_state != "CLOSED")
                .then(|| format!("seed {seed}: {} in {}", out.verdict, out.tester_state))
        })
        .collect();
    if bad.is_empty() {
        Ok("100/100 pass, all CLOSED".into())
    } else {
        Err(bad.join("; "))
    }
}

// 6
fn bug_discrimination() -> Outcome {
    let start = Instant::now();
    let p = MiniPParams::default();
    let mut summary = Vec::new();
    let mut failures = Vec::new();
    let tq = Arc::new(compile_spec(tinyq_spec(&TinyQParams::default())).unwrap());
    let mut variants: Vec<Variant> = Vec::new();
    for bug in MiniPBug::ALL {
        variants.push((
            bug.name().into(),
            bug.property(),
            Box::new(move |seed| minip_session(Some(bug), &p, lossless(seed), &UNIFORM)),
        ));
    }
    variants.push((
        "tinyq bug_cid".into(),
        "cid-consistency",
        Box::new(move |seed| {
            let setup = SessionSetup::new(tq.clone(), lossless(seed), "client", "server");
            run_session(&setup, &UNIFORM, Box::new(tinyq_server(true, seed))).unwrap()
        }),
    ));
    for (name, property, run) in &variants {
        let hits = (0..100)
            .filter(|&seed| {
                let out = run(seed);
                out.verdict.property() == Some(*property) && out.tester_steps <= BUG_MAX_STEPS
            })
            .count();
        summary.push(format!("{name} {hits}/100"));
        if hits < BUG_MIN_HITS {
            failures.push(format!("{name}: {hits}/100"));
        }
    }
    let wall = start.elapsed().as_secs_f64();
    if wall >= SWEEP_WALL_S {
        failures.push(format!("sweep took {wall:.1}s"));
    }
    if failures.is_empty() {
        Ok(format!("{}; {wall:.2}s", summary.join(", ")))
    } else {
        Err(failures.join("; "))
    }
}

// 7
fn timing() -> Outcome {
    let p = MiniPParams::default();
    let rto = p.rto.as_nanos();
    let mut retx = 0usize;
    for seed in 0..100 {
        let net = lossy(seed);
        let compiled = minip_compiled(&p, &net);
        let out = minip_session(None, &p, net, &UNIFORM);
        let mut last: Option<(u64, u64)> = None;
        for e in out.trace.iter().filter(|e| e.kind == EventKind::Sent && e.src.as_deref() == Some("client")) {
            let Some(m) = e.payload.as_ref().filter(|m| m.msg_type == "DATA") else { continue };
            let seq = m.int("seq").unwrap();
            if seq == 0 {
                continue; // the post-FIN probe is not part of the data stream
            }
            if let Some((prev_seq, prev_t)) = last {
                if prev_seq == seq {
                    retx += 1;
                    if e.time.as_nanos() != prev_t + rto {
                        return Err(format!(
                            "seed {seed}: DATA {seq} resent at {} after {}",
                            e.time,
                            Duration::from_nanos(prev_t)
                        ));
                    }
                }
            }
            last = Some((seq, e.time.as_nanos()));
        }
        for prop in ["retx-deadline", "ack-deadline"] {
            let online = out.online.iter().find(|o| o.0 == prop).map(|o| o.1);
            let offline = match check_property(&compiled, &out.trace, prop) {
                CheckResult::Fail { event_seq, .. } => Some(event_seq),
                _ => None,
            };
            if online != offline {
                return Err(format!("seed {seed}: {prop} online {online:?} offline {offline:?}"));
            }
        }
    }
    if retx == 0 {
        return Err("no retransmissions observed".into());
    }
    Ok(format!("{retx} retransmissions exactly rto apart; online/offline agree on 100 traces"))
}

// 8
fn config_gate() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    for (file, path) in [
        ("invalid/missing_seed.yaml", "seed"),
        ("invalid/unknown_plugin.yaml", "services[0].implementation.name"),
        ("invalid/bad_loss_rate.yaml", "network.params.loss_rate"),
    ] {
        let dir = tmp.path().join(file.replace('/', "_"));
        let (code, out) = ptb(&["run", "--config", &experiments(file), "--output", dir.to_str().unwrap()]);
        if code != 2 {
            return Err(format!("{file}: exit {code}"));
        }
        if !out.contains(&format!("{path}:")) {
            return Err(format!("{file}: output does not name {path}: {out}"));
        }
        if !traces_in(&dir).is_empty() {
            return Err(format!("{file}: trace files written"));
        }
        seen.push(path);
    }
    Ok(format!("exit 2 naming {}", seen.join(", ")))
}

// 9
fn fuzzer() -> Outcome {
    let p = MiniPParams::default();
    let config = FuzzConfig { budget_steps: 1000, ..FuzzConfig::default() };
    let make = || Box::new(minip_server(Some(MiniPBug::PrehandshakeData), &p)) as Box<dyn Handler>;
    let mut total = 0;
    for seed in 0..10 {
        let net = lossless(seed);
        let setup = SessionSetup::new(minip_compiled(&p, &net), net, "client", "server");
        let run = fuzz_session(&setup, &config, &make).map_err(|e| e.to_string())?;
        for f in &run.findings {
            total += 1;
            let again = replay(&setup, &config, &f.operators_applied, &make).map_err(|e| e.to_string())?;
            if to_jsonl(&again.outcome.trace) != to_jsonl(&f.trace) {
                return Err(format!("{}: replay trace differs", f.id));
            }
            let m1 = minimize(f, &setup, &config, &make).map_err(|e| e.to_string())?;
            if m1.operators_applied.len() > f.operators_applied.len() {
                return Err(format!(
                    "{}: minimize grew {} -> {}",
                    f.id,
                    f.operators_applied.len(),
                    m1.operators_applied.len()
                ));
            }
            let m2 = minimize(&m1, &setup, &config, &make).map_err(|e| e.to_string())?;
            if m2.operators_applied != m1.operators_applied || m2.trace != m1.trace {
                return Err(format!("{}: minimize not idempotent", f.id));
            }
        }
    }
    if total == 0 {
        return Err("no findings over seeds 0..9".into());
    }
    Ok(format!("{total} finding(s), all replay byte-identically, minimize idempotent"))
}

fn class(v: &Verdict) -> String {
    match v {
        Verdict::Fail { .. } => format!("fail:{}", v.property().unwrap_or("?")),
        other => other.label().to_string(),
    }
}

/// Every tester choice sequence, by odometer over the recorded arities.
/// Choice points past ORACLE_DEPTH take their first candidate.
fn exhaustive_classes(bug: Option<MiniPBug>, p: &MiniPParams, net: NetworkParams) -> (usize, BTreeSet<String>) {
    let mut classes = BTreeSet::new();
    let mut leaves = 0;
    let mut script: Vec<usize> = Vec::new();
    loop {
        let out = minip_session(bug, p, net.clone(), &Driver::Script(script.clone()));
        leaves += 1;
        classes.insert(class(&out.verdict));
        let arities: Vec<usize> = out.choice_arities.iter().copied().take(ORACLE_DEPTH).collect();
        let mut path = script.clone();
        path.resize(arities.len(), 0);
        let Some(i) = (0..arities.len()).rev().find(|&i| path[i] + 1 < arities[i]) else {
            return (leaves, classes);
        };
        path[i] += 1;
        path.truncate(i + 1);
        script = path;
    }
}

// 10
fn small_oracle() -> Outcome {
    let p = MiniPParams { data_count: 2, max_retries: 1, ..MiniPParams::default() };
    let mut notes = Vec::new();
    for bug in std::iter::once(None).chain(MiniPBug::ALL.into_iter().map(Some)) {
        let (leaves, exhaustive) = exhaustive_classes(bug, &p, lossless(0));
        let randomized: BTreeSet<String> = (0..30)
            .flat_map(|seed| {
                [Policy::UniformRandom, Policy::CoverageGreedy]
                    .map(|policy| class(&minip_session(bug, &p, lossless(seed), &Driver::Model { policy }).verdict))
            })
            .collect();
        let name = bug.map_or("correct", |b| b.name());
        let fails: BTreeSet<&String> = exhaustive.iter().filter(|c| c.starts_with("fail")).collect();
        match bug {
            None if !fails.is_empty() => return Err(format!("correct server failed: {fails:?}")),
            Some(b) if !exhaustive.contains(&format!("fail:{}", b.property())) => {
                return Err(format!("{name}: exhaustive search found {exhaustive:?}"))
            }
            _ => {}
        }
        if !randomized.is_subset(&exhaustive) || randomized.iter().any(|c| c.starts_with("fail")) != !fails.is_empty() {
            return Err(format!("{name}: randomized {randomized:?} vs exhaustive {exhaustive:?}"));
        }
        notes.push(format!("{name} {leaves} paths"));
    }
    // Loss makes retransmission branches reachable; the correct server must
    // still never fail.
    let mut lossy_paths = 0;
    for seed in 1..=5 {
        let (leaves, classes) = exhaustive_classes(None, &p, lossy(seed));
        if classes.iter().any(|c| c.starts_with("fail")) {
            return Err(format!("correct server failed under loss, seed {seed}: {classes:?}"));
        }
        lossy_paths += leaves;
    }
    notes.push(format!("correct under loss {lossy_paths} paths"));
    Ok(notes.join(", "))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("determinism", determinism),
        ("prng bit-exactness", prng_bits),
        ("simulator arithmetic", sim_arithmetic),
        ("statistical sanity", statistics),
        ("conformance positive", conformance),
        ("bug discrimination", bug_discrimination),
        ("timing exactness", timing),
        ("config gate", config_gate),
        ("fuzzer", fuzzer),
        ("small-instance oracle", small_oracle),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
