//! Stateful fuzzing: a model tester walks the specification while a seeded
//! decision stream mutates some of its outgoing messages.

use serde::{Deserialize, Serialize};

mod mutate;

pub use mutate::{mutate, MutateCtx, Mutator, Outgoing, Schedule};

/// Mutation operators, in decision-stream index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOp {
    FieldBoundary,
    FieldRandom,
    ByteNoise,
    Truncate,
    Duplicate,
    Delay,
    Replay,
    WrongState,
}

impl MutationOp {
    pub const ALL: [MutationOp; 8] = [
        MutationOp::FieldBoundary,
        MutationOp::FieldRandom,
        MutationOp::ByteNoise,
        MutationOp::Truncate,
        MutationOp::Duplicate,
        MutationOp::Delay,
        MutationOp::Replay,
        MutationOp::WrongState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MutationOp::FieldBoundary => "field_boundary",
            MutationOp::FieldRandom => "field_random",
            MutationOp::ByteNoise => "byte_noise",
            MutationOp::Truncate => "truncate",
            MutationOp::Duplicate => "duplicate",
            MutationOp::Delay => "delay",
            MutationOp::Replay => "replay",
            MutationOp::WrongState => "wrong_state",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzConfig {
    /// Protocol role the fuzzer plays.
    pub role: String,
    pub mutation_rate: f64,
    /// Upper bound on tester steps per session.
    pub budget_steps: u64,
    /// Extra hold applied by the delay operator.
    pub delay: Duration,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig { role: "client".into(), mutation_rate: 0.3, budget_steps: 1000, delay: Duration::from_millis(200) }
    }
}

use std::sync::Arc;

use crate::netsim::{Duration, Handler, Trace};
use crate::session::{run_session, Driver, SessionError, SessionOutcome, SessionSetup};
use crate::spec::{check_property, CheckResult};

/// One distinct failure found by a fuzz session.
#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    /// `<seed>-<property>`.
    pub id: String,
    pub seed: u64,
    /// Failing property id, or `crash` / `runaway`.
    pub property: String,
    pub event_seq: u64,
    /// Tester steps taken when the failure was detected.
    pub step_index: u64,
    pub operators_applied: Vec<(u64, MutationOp)>,
    /// Handler failure message for crash findings.
    pub crash: Option<String>,
    pub trace: Arc<Trace>,
}

impl Finding {
    pub fn file_name(&self) -> String {
        format!("finding_{}.json", self.id)
    }

    pub fn to_json(&self, trace_file: &str) -> serde_json::Value {
        let ops: Vec<serde_json::Value> = self
            .operators_applied
            .iter()
            .map(|(send, op)| serde_json::json!({ "send_index": send, "operator": op.name() }))
            .collect();
        serde_json::json!({
            "id": self.id,
            "seed": self.seed,
            "property": self.property,
            "event_seq": self.event_seq,
            "step_index": self.step_index,
            "operators_applied": ops,
            "crash": self.crash,
            "trace_file": trace_file,
        })
    }

    /// Every property finding must fail its property when re-checked.
    pub fn is_sound(&self, setup: &SessionSetup) -> bool {
        match self.property.as_str() {
            "crash" => self.crash.is_some(),
            "runaway" => true,
            p => matches!(check_property(&setup.compiled, &self.trace, p), CheckResult::Fail { .. }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FuzzRun {
    pub findings: Vec<Finding>,
    pub outcome: SessionOutcome,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FuzzError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("budget_steps must be at least 1")]
    ZeroBudget,
    #[error("finding {id} does not reproduce: {detail}")]
    Irreproducible { id: String, detail: String },
}

fn findings_of(outcome: &SessionOutcome, seed: u64) -> Vec<Finding> {
    let make = |property: &str, event_seq: u64, step_index: u64, crash: Option<String>| Finding {
        id: format!("{seed}-{property}"),
        seed,
        property: property.to_string(),
        event_seq,
        step_index,
        operators_applied: outcome.applied.clone(),
        crash,
        trace: outcome.trace.clone(),
    };
    let mut out: Vec<Finding> = outcome.online.iter().map(|(p, seq, steps)| make(p, *seq, *steps, None)).collect();
    let last = outcome.trace.events.last().map(|e| e.seq).unwrap_or(0);
    if let Some((endpoint, message)) = &outcome.crash {
        out.push(make("crash", last, outcome.tester_steps, Some(format!("{endpoint}: {message}"))));
    }
    if outcome.runaway {
        out.push(make("runaway", last, outcome.tester_steps, None));
    }
    out
}

fn run(
    setup: &SessionSetup,
    config: &FuzzConfig,
    schedule: Schedule,
    make_iut: &dyn Fn() -> Box<dyn Handler>,
) -> Result<FuzzRun, FuzzError> {
    if config.budget_steps == 0 {
        return Err(FuzzError::ZeroBudget);
    }
    let driver = Driver::Fuzz { schedule, budget_steps: config.budget_steps, delay: config.delay };
    let outcome = run_session(setup, &driver, make_iut())?;
    Ok(FuzzRun { findings: findings_of(&outcome, setup.network.seed), outcome })
}

/// Runs one fuzz session with the random schedule. The seed is the
/// network seed in `setup`.
pub fn fuzz_session(
    setup: &SessionSetup,
    config: &FuzzConfig,
    make_iut: &dyn Fn() -> Box<dyn Handler>,
) -> Result<FuzzRun, FuzzError> {
    run(setup, config, Schedule::Random { rate: config.mutation_rate }, make_iut)
}

/// Re-runs a session applying exactly `schedule`.
pub fn replay(
    setup: &SessionSetup,
    config: &FuzzConfig,
    schedule: &[(u64, MutationOp)],
    make_iut: &dyn Fn() -> Box<dyn Handler>,
) -> Result<FuzzRun, FuzzError> {
    run(setup, config, Schedule::Fixed(schedule.to_vec()), make_iut)
}

/// Greedily drops operators, latest first, keeping a removal when the
/// same property still fails. Repeats until a pass removes nothing.
pub fn minimize(
    finding: &Finding,
    setup: &SessionSetup,
    config: &FuzzConfig,
    make_iut: &dyn Fn() -> Box<dyn Handler>,
) -> Result<Finding, FuzzError> {
    let pick = |run: FuzzRun| run.findings.into_iter().find(|f| f.property == finding.property);
    let again = pick(replay(setup, config, &finding.operators_applied, make_iut)?);
    let mut best = match again {
        Some(f) if f.trace == finding.trace && f.operators_applied == finding.operators_applied => f,
        Some(_) => {
            return Err(FuzzError::Irreproducible {
                id: finding.id.clone(),
                detail: "replay produced a different trace".into(),
            })
        }
        None => {
            return Err(FuzzError::Irreproducible {
                id: finding.id.clone(),
                detail: format!("property {} did not fail on replay", finding.property),
            })
        }
    };
    loop {
        let mut changed = false;
        let mut i = best.operators_applied.len();
        while i > 0 {
            i -= 1;
            let mut candidate = best.operators_applied.clone();
            candidate.remove(i);
            if let Some(f) = pick(replay(setup, config, &candidate, make_iut)?) {
                best = f;
                changed = true;
                i = i.min(best.operators_applied.len());
            }
        }
        if !changed {
            return Ok(best);
        }
    }
}

impl FuzzConfig {
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}
