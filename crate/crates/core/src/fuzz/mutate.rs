use std::sync::Arc;

use crate::netsim::{mix64, Duration, FieldValue, Message, Prng};
use crate::spec::{CompiledSpec, FieldDecl, FieldType, MessageSchema};

use super::MutationOp;

/// One message to put on the wire. `hold` delays it by that much.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub msg: Message,
    pub hold: Option<Duration>,
}

impl Outgoing {
    pub fn now(msg: Message) -> Self {
        Outgoing { msg, hold: None }
    }
}

/// What a mutation may look at besides the message itself.
pub struct MutateCtx<'a> {
    pub compiled: &'a CompiledSpec,
    pub peer_role: &'a str,
    /// Replayed state of the peer, when known.
    pub peer_state: Option<&'a str>,
    /// Messages sent earlier in the session, oldest first.
    pub history: &'a [Message],
    pub delay: Duration,
}

fn random_value(decl: &FieldDecl, current: Option<&FieldValue>, prng: &mut Prng) -> FieldValue {
    match decl.ty {
        FieldType::Uint(_) => {
            let (lo, hi) = decl.bounds();
            FieldValue::Int(prng.in_range(lo, hi).expect("schema bounds are ordered"))
        }
        FieldType::Bytes => {
            let len = match current {
                Some(FieldValue::Bytes(b)) => b.len(),
                _ => decl.len,
            };
            FieldValue::Bytes((0..len).map(|_| prng.next_u64() as u8).collect())
        }
        FieldType::Text => {
            let len = match current {
                Some(FieldValue::Text(t)) => t.len(),
                _ => 0,
            };
            FieldValue::Text((0..len).map(|_| (b'a' + prng.below(26).expect("non-zero") as u8) as char).collect())
        }
    }
}

fn field_random(msg: &Message, schema: &MessageSchema, prng: &mut Prng) -> Message {
    let mut out = msg.clone();
    if let Some(decl) = schema.fields.first() {
        let v = random_value(decl, msg.get(&decl.name), prng);
        out.set(decl.name.clone(), v);
    }
    out
}

/// Applies `op` to `msg`. Operators that need a field kind the message does
/// not have fall back to [`MutationOp::FieldRandom`] on the first field;
/// messages without fields pass through unchanged in that case.
pub fn mutate(msg: &Message, op: MutationOp, ctx: &MutateCtx<'_>, prng: &mut Prng) -> Vec<Outgoing> {
    let Some(schema) = ctx.compiled.spec().message(&msg.msg_type) else {
        return vec![Outgoing::now(msg.clone())];
    };
    let edited = |m: Message| vec![Outgoing::now(m)];
    match op {
        MutationOp::FieldBoundary => {
            let Some(decl) = schema.fields.iter().find(|f| matches!(f.ty, FieldType::Uint(_))) else {
                return edited(field_random(msg, schema, prng));
            };
            // max + 1 wraps back to the low end of the range.
            let (lo, hi) = decl.bounds();
            let pick = [lo, hi, lo][prng.below(3).expect("non-zero") as usize];
            let mut out = msg.clone();
            out.set(decl.name.clone(), FieldValue::Int(pick));
            edited(out)
        }
        MutationOp::FieldRandom => edited(field_random(msg, schema, prng)),
        MutationOp::ByteNoise => {
            let target = schema.fields.iter().find_map(|f| match msg.get(&f.name) {
                Some(FieldValue::Bytes(b)) if !b.is_empty() => Some((f.name.clone(), b.clone())),
                _ => None,
            });
            let Some((name, mut bytes)) = target else {
                return edited(field_random(msg, schema, prng));
            };
            let i = prng.below(bytes.len() as u64).expect("non-empty") as usize;
            let mask = prng.below(255).expect("non-zero") as u8 + 1;
            bytes[i] ^= mask;
            let mut out = msg.clone();
            out.set(name, FieldValue::Bytes(bytes));
            edited(out)
        }
        MutationOp::Truncate => {
            let mut out = msg.clone();
            if let Some(decl) = schema.fields.last() {
                let empty = match decl.ty {
                    FieldType::Uint(_) => FieldValue::Int(0),
                    FieldType::Bytes => FieldValue::Bytes(Vec::new()),
                    FieldType::Text => FieldValue::Text(String::new()),
                };
                out.set(decl.name.clone(), empty);
            }
            edited(out)
        }
        MutationOp::Duplicate => vec![Outgoing::now(msg.clone()), Outgoing::now(msg.clone())],
        MutationOp::Delay => vec![Outgoing { msg: msg.clone(), hold: Some(ctx.delay) }],
        MutationOp::Replay => {
            let old = if ctx.history.is_empty() {
                msg.clone()
            } else {
                ctx.history[prng.below(ctx.history.len() as u64).expect("non-empty") as usize].clone()
            };
            vec![Outgoing::now(msg.clone()), Outgoing::now(old)]
        }
        MutationOp::WrongState => {
            let receivable = ctx.peer_state.map(|s| ctx.compiled.receivable(ctx.peer_role, s)).unwrap_or_default();
            let candidates: Vec<&MessageSchema> =
                ctx.compiled.spec().messages.iter().filter(|m| !receivable.contains(m.msg_type.as_str())).collect();
            if candidates.is_empty() {
                return edited(field_random(msg, schema, prng));
            }
            let pick = candidates[prng.below(candidates.len() as u64).expect("non-empty") as usize];
            let mut wrong = Message::new(msg.protocol.clone(), pick.msg_type.clone());
            for decl in &pick.fields {
                wrong.set(decl.name.clone(), random_value(decl, None, prng));
            }
            vec![Outgoing::now(msg.clone()), Outgoing::now(wrong)]
        }
    }
}

/// Which sends get mutated.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// One bernoulli draw per send; on a hit, the operator is `below(8)`.
    Random { rate: f64 },
    /// Exactly these (send index, operator) pairs, for replay.
    Fixed(Vec<(u64, MutationOp)>),
}

/// Per-session mutation state. The decision stream and the per-send
/// mutation streams are seeded separately, so replaying a subset of a
/// schedule mutates each remaining send identically.
#[derive(Debug, Clone)]
pub struct Mutator {
    seed: u64,
    decisions: Prng,
    schedule: Schedule,
    next_send: u64,
    applied: Vec<(u64, MutationOp)>,
    history: Vec<Message>,
    compiled: Arc<CompiledSpec>,
    peer_role: String,
    delay: Duration,
}

const DECISION_SALT: u64 = 0xF0CC_5EED_0000_0001;

impl Mutator {
    pub fn new(compiled: Arc<CompiledSpec>, peer_role: &str, seed: u64, schedule: Schedule, delay: Duration) -> Self {
        Mutator {
            seed,
            decisions: Prng::new(mix64(seed ^ DECISION_SALT)),
            schedule,
            next_send: 0,
            applied: Vec::new(),
            history: Vec::new(),
            compiled,
            peer_role: peer_role.to_string(),
            delay,
        }
    }

    pub fn applied(&self) -> &[(u64, MutationOp)] {
        &self.applied
    }

    fn send_prng(&self, index: u64) -> Prng {
        Prng::new(mix64(self.seed ^ mix64(index.wrapping_add(1))))
    }

    pub fn on_send(&mut self, msg: Message, peer_state: Option<&str>) -> (Option<MutationOp>, Vec<Outgoing>) {
        let index = self.next_send;
        self.next_send += 1;
        let op = match &self.schedule {
            Schedule::Random { rate } => {
                let hit = self.decisions.bernoulli(*rate);
                hit.then(|| MutationOp::ALL[self.decisions.below(8).expect("non-zero") as usize])
            }
            Schedule::Fixed(list) => list.iter().find(|(i, _)| *i == index).map(|(_, op)| *op),
        };
        let out = match op {
            None => vec![Outgoing::now(msg.clone())],
            Some(op) => {
                let mut prng = self.send_prng(index);
                let ctx = MutateCtx {
                    compiled: &self.compiled,
                    peer_role: &self.peer_role,
                    peer_state,
                    history: &self.history,
                    delay: self.delay,
                };
                self.applied.push((index, op));
                let mut out = mutate(&msg, op, &ctx, &mut prng);
                for o in &mut out {
                    o.msg.recompute_size();
                }
                out
            }
        };
        self.history.push(msg);
        (op, out)
    }
}
