use std::sync::Arc;

use crate::netsim::{Duration, Message, Prng};

use super::compile::{enabled_transitions_with_warnings, CompiledSpec, Effect, Observation, Vars};
use super::model::{FieldDecl, FieldType, Trigger};
use super::value::Value;
use super::SpecError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    UniformRandom,
    CoverageGreedy,
}

impl Policy {
    pub fn parse(s: &str) -> Option<Policy> {
        match s {
            "uniform" | "uniform_random" => Some(Policy::UniformRandom),
            "greedy" | "coverage_greedy" => Some(Policy::CoverageGreedy),
            _ => None,
        }
    }
}

/// What the tester is told about.
#[derive(Debug, Clone, Copy)]
pub enum Obs<'a> {
    Delivered(&'a Message),
    TimerFired(&'a str),
    Idle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    Pass,
    Fail(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TesterAction {
    Send(Message),
    SetTimer { id: String, delay: Duration },
    CancelTimer { id: String },
    Stop(StopReason),
}

/// A transition the tester took, with the variable values after it.
#[derive(Debug, Clone, PartialEq)]
pub struct Taken {
    pub id: String,
    pub from: String,
    pub to: String,
    pub vars: Vars,
    pub free: Vec<(String, Value)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TesterStep {
    pub taken: Option<Taken>,
    pub actions: Vec<TesterAction>,
    pub warnings: Vec<String>,
}

/// Fixed choices for exhaustive enumeration. At every point with more than
/// one spontaneous candidate the next scripted index is used (0 once the
/// script runs out) and the number of candidates is recorded.
#[derive(Debug, Clone, Default)]
struct Script {
    choices: Vec<usize>,
    pos: usize,
    arities: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Tester {
    compiled: Arc<CompiledSpec>,
    role: String,
    policy: Policy,
    prng: Prng,
    state: String,
    vars: Vars,
    coverage: Vec<u64>,
    stopped: bool,
    steps: u64,
    strict: bool,
    script: Option<Script>,
}

pub fn derive_tester(compiled: Arc<CompiledSpec>, role: &str, policy: Policy, seed: u64) -> Result<Tester, SpecError> {
    let decl = compiled.role(role).ok_or_else(|| SpecError::UnknownRole(role.to_string()))?;
    let state = decl.initial().to_string();
    let vars = compiled.initial_vars(role);
    let coverage = vec![0; compiled.spec().transitions.len()];
    Ok(Tester {
        role: role.to_string(),
        policy,
        prng: Prng::new(seed),
        state,
        vars,
        coverage,
        stopped: false,
        steps: 0,
        strict: true,
        script: None,
        compiled,
    })
}

fn draw_free(prng: &mut Prng, decl: &FieldDecl) -> Option<Value> {
    Some(match decl.ty {
        FieldType::Uint(_) => {
            let (lo, hi) = decl.bounds();
            Value::Int(prng.in_range(lo, hi).expect("lo <= hi after compilation"))
        }
        FieldType::Bytes => Value::Bytes((0..decl.len).map(|_| prng.next_u64() as u8).collect()),
        FieldType::Text => Value::Text(String::new()),
    })
}

impl Tester {
    pub fn compiled(&self) -> &Arc<CompiledSpec> {
        &self.compiled
    }

    pub fn role(&self) -> &str {
        &self.role
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn state(&self) -> &str {
        &self.state
    }

    pub fn vars(&self) -> &Vars {
        &self.vars
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn in_final_state(&self) -> bool {
        self.compiled.is_final(&self.role, &self.state)
    }

    /// Per-transition counts, indexed like the spec's transition list.
    pub fn coverage(&self) -> &[u64] {
        &self.coverage
    }

    pub fn distinct_covered(&self) -> usize {
        self.coverage.iter().filter(|c| **c > 0).count()
    }

    /// In lenient mode an unmatched delivery is ignored instead of failing.
    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn set_script(&mut self, choices: Vec<usize>) {
        self.script = Some(Script { choices, pos: 0, arities: Vec::new() });
    }

    /// Candidate counts at each scripted choice point so far.
    pub fn choice_arities(&self) -> &[usize] {
        self.script.as_ref().map(|s| s.arities.as_slice()).unwrap_or(&[])
    }

    fn choose(&mut self, candidates: &[usize]) -> usize {
        if candidates.len() == 1 {
            return candidates[0];
        }
        if let Some(script) = &mut self.script {
            let pick = script.choices.get(script.pos).copied().unwrap_or(0).min(candidates.len() - 1);
            script.pos += 1;
            script.arities.push(candidates.len());
            return candidates[pick];
        }
        match self.policy {
            Policy::UniformRandom => candidates[self.prng.below(candidates.len() as u64).expect("non-empty") as usize],
            Policy::CoverageGreedy => {
                let least = candidates.iter().map(|&i| self.coverage[i]).min().expect("non-empty");
                let tied: Vec<usize> = candidates.iter().copied().filter(|&i| self.coverage[i] == least).collect();
                if tied.len() == 1 {
                    tied[0]
                } else {
                    tied[self.prng.below(tied.len() as u64).expect("non-empty") as usize]
                }
            }
        }
    }

    fn take(&mut self, index: usize, msg: Option<&Message>, step: &mut TesterStep) {
        let compiled = self.compiled.clone();
        let t = &compiled.spec().transitions[index];
        let mut vars = self.vars.clone();
        let prng = &mut self.prng;
        let result = compiled.execute(t, &mut vars, msg, &mut |d| draw_free(prng, d));
        match result {
            Ok(effects) => {
                let mut free = Vec::new();
                for e in effects {
                    step.actions.push(match e {
                        Effect::Send { msg, free: drawn } => {
                            free.extend(drawn);
                            TesterAction::Send(msg)
                        }
                        Effect::SetTimer { id, delay } => TesterAction::SetTimer { id, delay },
                        Effect::CancelTimer { id } => TesterAction::CancelTimer { id },
                    });
                }
                self.coverage[index] += 1;
                let from = std::mem::replace(&mut self.state, t.to.clone());
                self.vars = vars;
                step.taken = Some(Taken { id: t.id.clone(), from, to: t.to.clone(), vars: self.vars.clone(), free });
            }
            Err(e) => {
                self.stopped = true;
                step.warnings.push(format!("{}: {e}", t.id));
                step.actions.push(TesterAction::Stop(StopReason::Fail("action-eval".into())));
            }
        }
    }

    pub fn step(&mut self, obs: Obs<'_>) -> TesterStep {
        let mut step = TesterStep::default();
        if self.stopped {
            return step;
        }
        self.steps += 1;
        let compiled = self.compiled.clone();
        let observation = match obs {
            Obs::Delivered(m) => Observation::Recv(m),
            Obs::TimerFired(id) => Observation::Timer(id),
            Obs::Idle => Observation::Spontaneous,
        };
        let (enabled, warnings) =
            enabled_transitions_with_warnings(&compiled, &self.role, &self.state, &self.vars, observation);
        step.warnings = warnings;
        let indices: Vec<usize> =
            enabled.iter().map(|t| compiled.transition_index(&t.id).expect("own transition")).collect();
        match obs {
            Obs::Delivered(m) => match indices.first() {
                Some(&i) => self.take(i, Some(m), &mut step),
                None if self.strict => {
                    self.stopped = true;
                    step.actions.push(TesterAction::Stop(StopReason::Fail("unexpected-message".into())));
                }
                None => {}
            },
            Obs::TimerFired(_) => {
                if let Some(&i) = indices.first() {
                    self.take(i, None, &mut step);
                }
            }
            Obs::Idle => {
                if indices.is_empty() {
                    if self.in_final_state() {
                        self.stopped = true;
                        step.actions.push(TesterAction::Stop(StopReason::Pass));
                    }
                } else {
                    let i = self.choose(&indices);
                    self.take(i, None, &mut step);
                }
            }
        }
        step
    }

    /// Spontaneous transitions the tester controls, for diagnostics.
    pub fn controlled(&self) -> impl Iterator<Item = &str> {
        self.compiled
            .role_transitions(&self.role)
            .filter(|(_, t)| !matches!(t.trigger, Trigger::Recv(_)))
            .map(|(_, t)| t.id.as_str())
    }
}
