//! Exhaustive search over tester choice sequences on a small MiniP instance,
//! compared against what the randomized testers conclude.

use std::collections::BTreeSet;
use std::sync::Arc;

use ptb_core::netsim::{Duration, NetworkParams};
use ptb_core::protocols::minip::{minip_server, minip_spec, MiniPBug, MiniPParams};
use ptb_core::session::{run_session, Driver, SessionSetup};
use ptb_core::spec::{compile_spec, Policy, Verdict};

const MAX_DEPTH: usize = 12;

fn small() -> MiniPParams {
    MiniPParams { data_count: 2, max_retries: 1, ..MiniPParams::default() }
}

fn setup(net: NetworkParams) -> SessionSetup {
    let compiled = Arc::new(compile_spec(minip_spec(&small(), &net)).unwrap());
    SessionSetup::new(compiled, net, "client", "server")
}

/// Walks every choice sequence like an odometer. Choice points past MAX_DEPTH
/// are pinned to their first candidate.
fn exhaust(setup: &SessionSetup, bug: Option<MiniPBug>) -> Vec<(Vec<usize>, Verdict)> {
    let mut out = Vec::new();
    let mut script: Vec<usize> = Vec::new();
    loop {
        let run = run_session(setup, &Driver::Script(script.clone()), Box::new(minip_server(bug, &small()))).unwrap();
        let arities: Vec<usize> = run.choice_arities.iter().copied().take(MAX_DEPTH).collect();
        let mut path = script.clone();
        path.resize(arities.len(), 0);
        out.push((path.clone(), run.verdict));
        let Some(i) = (0..arities.len()).rev().find(|&i| path[i] + 1 < arities[i]) else {
            return out;
        };
        path[i] += 1;
        path.truncate(i + 1);
        script = path;
    }
}

fn class(v: &Verdict) -> String {
    match v {
        Verdict::Fail { .. } => format!("fail:{}", v.property().unwrap_or("?")),
        Verdict::Pass => "pass".into(),
        _ => "other".into(),
    }
}

fn randomized(net: &NetworkParams, bug: Option<MiniPBug>, policy: Policy) -> BTreeSet<String> {
    (0..30)
        .map(|seed| {
            let s = setup(NetworkParams { seed, ..net.clone() });
            class(&run_session(&s, &Driver::Model { policy }, Box::new(minip_server(bug, &small()))).unwrap().verdict)
        })
        .collect()
}

#[test]
fn tree_has_branches() {
    let runs = exhaust(&setup(NetworkParams::default()), None);
    assert!(runs.len() > 1, "only {} leaf", runs.len());
    let distinct: BTreeSet<_> = runs.iter().map(|r| r.0.clone()).collect();
    assert_eq!(distinct.len(), runs.len());
}

#[test]
fn correct_server_never_fails() {
    for net in [
        NetworkParams::default(),
        NetworkParams { seed: 3, loss_rate: 0.3, jitter: Duration::from_millis(10), ..NetworkParams::default() },
    ] {
        for (path, v) in exhaust(&setup(net.clone()), None) {
            assert!(!matches!(v, Verdict::Fail { .. }), "{path:?}: {v}");
        }
        assert!(randomized(&net, None, Policy::UniformRandom).iter().all(|c| !c.starts_with("fail")));
    }
}

#[test]
fn every_bug_is_found_and_classes_match() {
    let net = NetworkParams::default();
    for bug in MiniPBug::ALL {
        let runs = exhaust(&setup(net.clone()), Some(bug));
        let exhaustive: BTreeSet<String> = runs.iter().map(|r| class(&r.1)).filter(|c| c.starts_with("fail")).collect();
        let expected = format!("fail:{}", bug.property());
        assert_eq!(exhaustive, BTreeSet::from([expected.clone()]), "{bug:?}");
        for policy in [Policy::UniformRandom, Policy::CoverageGreedy] {
            let seen = randomized(&net, Some(bug), policy);
            assert!(seen.contains(&expected), "{bug:?} {policy:?}: {seen:?}");
            assert!(seen.is_subset(&runs.iter().map(|r| class(&r.1)).collect()), "{bug:?} {policy:?}: {seen:?}");
        }
    }
}
