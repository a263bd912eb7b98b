//! One test session: a tester (or fuzzer) and an IUT wired through a
//! simulation, checked online and again offline once the run ends.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::sync::Arc;

use crate::fuzz::{MutationOp, Mutator, Schedule};
use crate::netsim::{
    mix64, Action, Duration, Handler, HandlerError, Input, LogLevel, NetworkParams, SimError, Simulation, Trace,
};
use crate::spec::{
    check_trace_with, derive_tester, CheckOptions, CheckResult, CompiledSpec, Obs, Policy, RoleMap, SpecError,
    StopReason, Tester, TesterAction, TesterStep, TraceChecker, Verdict, PROVENANCE,
};

const TESTER_SALT: u64 = 0x7E57_E500_0000_0001;
const HOLD_PREFIX: &str = "fuzz.delay.";
/// Spontaneous transitions taken back to back before yielding to the
/// simulator.
const MAX_CHAIN: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoint {
    pub service: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Driver {
    Model {
        policy: Policy,
    },
    /// Exhaustive enumeration: fixed choices at each branch point.
    Script(Vec<usize>),
    Fuzz {
        schedule: Schedule,
        budget_steps: u64,
        delay: Duration,
    },
}

#[derive(Debug, Clone)]
pub struct SessionSetup {
    pub compiled: Arc<CompiledSpec>,
    /// `seed` here seeds the network; the tester seed is derived from it.
    pub network: NetworkParams,
    pub experiment: String,
    pub tester: Endpoint,
    pub iut: Endpoint,
    pub horizon: Duration,
    pub step_budget: u64,
    /// Extra `ServiceLog` events written at t=0, before anything runs.
    pub provenance: Vec<BTreeMap<String, String>>,
}

impl SessionSetup {
    pub fn new(compiled: Arc<CompiledSpec>, network: NetworkParams, tester_role: &str, iut_role: &str) -> Self {
        SessionSetup {
            compiled,
            network,
            experiment: String::new(),
            tester: Endpoint { service: tester_role.into(), role: tester_role.into() },
            iut: Endpoint { service: iut_role.into(), role: iut_role.into() },
            horizon: Duration::from_secs(10),
            step_budget: crate::netsim::DEFAULT_STEP_BUDGET,
            provenance: Vec::new(),
        }
    }

    pub fn tester_seed(&self) -> u64 {
        mix64(self.network.seed ^ TESTER_SALT)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("simulation: {0}")]
    Sim(SimError),
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub verdict: Verdict,
    pub trace: Arc<Trace>,
    pub tester_steps: u64,
    pub tester_state: String,
    pub reached_final: bool,
    pub coverage: Vec<u64>,
    pub distinct_covered: usize,
    /// First violation of each property seen by the online checker, with
    /// the tester step count at detection.
    pub online: Vec<(String, u64, u64)>,
    pub stop: Option<StopReason>,
    /// Handler failure surfaced by the simulator: (endpoint, message).
    pub crash: Option<(String, String)>,
    pub runaway: bool,
    pub applied: Vec<(u64, MutationOp)>,
    pub choice_arities: Vec<usize>,
}

struct Shared {
    tester: Tester,
    mutator: Option<Mutator>,
    peer_state: Option<String>,
    stop: Option<StopReason>,
}

struct TesterHandler {
    shared: Rc<RefCell<Shared>>,
    compiled: Arc<CompiledSpec>,
    peer: String,
    held: HashMap<String, crate::netsim::Message>,
    next_hold: u64,
}

impl TesterHandler {
    fn emit(&mut self, sh: &mut Shared, step: TesterStep, out: &mut Vec<Action>) {
        for w in step.warnings {
            out.push(Action::Log { level: LogLevel::Warn, message: w });
        }
        if let Some(t) = step.taken {
            let mut attrs = BTreeMap::from([
                ("transition".to_string(), t.id),
                ("from".to_string(), t.from),
                ("to".to_string(), t.to),
            ]);
            for (k, v) in &t.vars {
                attrs.insert(format!("var.{k}"), v.to_string());
            }
            for (k, v) in &t.free {
                attrs.insert(format!("free.{k}"), v.to_string());
            }
            out.push(Action::Transition { attrs });
        }
        for a in step.actions {
            match a {
                TesterAction::Send(msg) => {
                    let (op, plan) = match &mut sh.mutator {
                        Some(m) => m.on_send(msg, sh.peer_state.as_deref()),
                        None => (None, vec![crate::fuzz::Outgoing::now(msg)]),
                    };
                    if let Some(op) = op {
                        out.push(Action::Log { level: LogLevel::Info, message: format!("mutation {}", op.name()) });
                    }
                    for o in plan {
                        match o.hold {
                            None => out.push(Action::Send { dst: self.peer.clone(), msg: o.msg }),
                            Some(delay) => {
                                let id = format!("{HOLD_PREFIX}{}", self.next_hold);
                                self.next_hold += 1;
                                self.held.insert(id.clone(), o.msg);
                                out.push(Action::SetTimer { id, delay });
                            }
                        }
                    }
                }
                TesterAction::SetTimer { id, delay } => out.push(Action::SetTimer { id, delay }),
                TesterAction::CancelTimer { id } => out.push(Action::CancelTimer { id }),
                TesterAction::Stop(reason) => {
                    sh.stop = Some(reason);
                    out.push(Action::Stop);
                }
            }
        }
    }
}

impl Handler for TesterHandler {
    fn handle(&mut self, _now: Duration, input: Input<'_>) -> Result<Vec<Action>, HandlerError> {
        let shared = self.shared.clone();
        let mut sh = shared.borrow_mut();
        let mut out = Vec::new();
        if let Input::TimerFired { id, .. } = input {
            if let Some(msg) = self.held.remove(id) {
                out.push(Action::Send { dst: self.peer.clone(), msg });
                return Ok(out);
            }
        }
        if sh.tester.is_stopped() {
            return Ok(out);
        }
        let mut step = match input {
            Input::Start => sh.tester.step(Obs::Idle),
            Input::Delivered { msg, .. } => {
                let m = self.compiled.normalize(msg);
                sh.tester.step(Obs::Delivered(&m))
            }
            Input::TimerFired { id, .. } => sh.tester.step(Obs::TimerFired(id)),
        };
        for _ in 0..MAX_CHAIN {
            let progressed = step.taken.is_some();
            self.emit(&mut sh, step, &mut out);
            if !progressed || sh.tester.is_stopped() {
                break;
            }
            step = sh.tester.step(Obs::Idle);
        }
        Ok(out)
    }
}

fn provenance_log(sim: &mut Simulation, attrs: &BTreeMap<String, String>) {
    let mut attrs = attrs.clone();
    attrs.entry(PROVENANCE.to_string()).or_insert_with(|| "experiment".to_string());
    sim.log(None, attrs);
}

/// Runs one session to the horizon, the tester's stop, the online
/// checker's first failure (model drivers) or the step budget (fuzzing).
pub fn run_session(
    setup: &SessionSetup,
    driver: &Driver,
    iut: Box<dyn Handler>,
) -> Result<SessionOutcome, SessionError> {
    let compiled = setup.compiled.clone();
    let tester_seed = setup.tester_seed();
    let (policy, fuzz) = match driver {
        Driver::Fuzz { .. } => (Policy::UniformRandom, true),
        Driver::Model { policy } => (*policy, false),
        Driver::Script(_) => (Policy::UniformRandom, false),
    };
    let mut tester = derive_tester(compiled.clone(), &setup.tester.role, policy, tester_seed)?;
    if let Driver::Script(choices) = driver {
        tester.set_script(choices.clone());
    }
    let mut mutator = None;
    let mut budget = u64::MAX;
    if let Driver::Fuzz { schedule, budget_steps, delay } = driver {
        tester.set_strict(false);
        mutator = Some(Mutator::new(compiled.clone(), &setup.iut.role, setup.network.seed, schedule.clone(), *delay));
        budget = *budget_steps;
    }
    let shared = Rc::new(RefCell::new(Shared { tester, mutator, peer_state: None, stop: None }));

    let mut sim = Simulation::with_experiment(setup.network.clone(), &setup.experiment).map_err(SessionError::Sim)?;
    sim.set_step_budget(setup.step_budget);
    for attrs in &setup.provenance {
        provenance_log(&mut sim, attrs);
    }
    sim.attach_endpoint(&setup.iut.service, iut).map_err(SessionError::Sim)?;
    let handler = TesterHandler {
        shared: shared.clone(),
        compiled: compiled.clone(),
        peer: setup.iut.service.clone(),
        held: HashMap::new(),
        next_hold: 0,
    };
    sim.attach_endpoint(&setup.tester.service, Box::new(handler)).map_err(SessionError::Sim)?;

    let mut roles = RoleMap::new();
    roles.bind(&setup.tester.service, &setup.tester.role, true);
    roles.bind(&setup.iut.service, &setup.iut.role, false);
    let options = if fuzz {
        CheckOptions { ignore_role: Some(setup.tester.role.clone()), collect_all: true, ..CheckOptions::default() }
    } else {
        CheckOptions::default()
    };
    let mut checker = TraceChecker::new(compiled.clone(), roles.clone(), options);
    let mut fed = 0usize;
    let mut online: Vec<(String, u64, u64)> = Vec::new();
    let mut runaway = false;

    let mut feed = |sim: &mut Simulation, checker: &mut TraceChecker, online: &mut Vec<(String, u64, u64)>| {
        let events = &sim.trace().events;
        for e in &events[fed..] {
            checker.feed(e);
        }
        fed = events.len();
        let steps = shared.borrow().tester.steps();
        let fresh: Vec<(String, u64)> = checker
            .violations()
            .filter(|(p, _)| !online.iter().any(|(q, _, _)| q == p))
            .map(|(p, s)| (p.to_string(), s))
            .collect();
        for (p, s) in fresh {
            sim.record_violation(&p, s);
            online.push((p, s, steps));
        }
        // The violation records are not protocol events; skip them.
        fed = sim.trace().events.len();
        shared.borrow_mut().peer_state = checker.role_state(&setup.iut.role).map(str::to_string);
    };

    let kicked = sim.kick(&setup.tester.service);
    if let Err(e) = kicked {
        return Err(SessionError::Sim(e));
    }
    feed(&mut sim, &mut checker, &mut online);
    loop {
        if sim.errored().is_some() && fuzz {
            break;
        }
        if !fuzz && !online.is_empty() {
            break;
        }
        if shared.borrow().tester.steps() >= budget {
            break;
        }
        match sim.step_until(setup.horizon) {
            Ok(Some(_)) => feed(&mut sim, &mut checker, &mut online),
            Ok(None) => break,
            Err(SimError::Runaway { .. }) => {
                runaway = true;
                break;
            }
            Err(e) => return Err(SessionError::Sim(e)),
        }
    }

    let crash = sim.errored().cloned();
    let recorded: Vec<String> = online.iter().map(|(p, _, _)| p.clone()).collect();
    let trace_now = sim.trace().clone();
    let offline = check_trace_with(&compiled, &trace_now, roles, CheckOptions::default());
    if let CheckResult::Fail { property, event_seq } = &offline {
        if !recorded.contains(property) {
            sim.record_violation(property, *event_seq);
        }
    }
    let trace = Arc::new(sim.into_trace());
    let sh = shared.borrow();
    let last_seq = trace.events.last().map(|e| e.seq).unwrap_or(0);
    let fail = |p: &str| Verdict::Fail { property: p.to_string(), event_seq: last_seq, trace: trace.clone() };
    let verdict = match (&offline, &crash, runaway, &sh.stop) {
        (CheckResult::Fail { .. }, ..) => offline.clone().with_shared(trace.clone()),
        (_, Some(_), _, _) => fail("crash"),
        (_, _, true, _) => fail("runaway"),
        (_, _, _, Some(StopReason::Fail(reason))) => fail(reason),
        _ => offline.clone().with_shared(trace.clone()),
    };
    Ok(SessionOutcome {
        verdict,
        trace: trace.clone(),
        tester_steps: sh.tester.steps(),
        tester_state: sh.tester.state().to_string(),
        reached_final: sh.tester.in_final_state(),
        coverage: sh.tester.coverage().to_vec(),
        distinct_covered: sh.tester.distinct_covered(),
        online,
        stop: sh.stop.clone(),
        crash,
        runaway,
        applied: sh.mutator.as_ref().map(|m| m.applied().to_vec()).unwrap_or_default(),
        choice_arities: sh.tester.choice_arities().to_vec(),
    })
}
