//! Guard expression language: integer, byte-string, text and boolean
//! values; checked `+`/`-`; comparisons; `&&`, `||`, `!`.

use std::fmt;

use super::value::{Ty, Value};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Ref {
    /// A variable of the role the expression belongs to.
    Var(String),
    /// `role.var`
    RoleVar(String, String),
    /// `msg.field`: the received or matched message.
    Msg(String),
    /// `out.field`: the most recent message sent by the same action list.
    Out(String),
    /// `trig.field`: the trigger event's message in a timed response pattern.
    Trig(String),
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ref::Var(v) => f.write_str(v),
            Ref::RoleVar(r, v) => write!(f, "{r}.{v}"),
            Ref::Msg(x) => write!(f, "msg.{x}"),
            Ref::Out(x) => write!(f, "out.{x}"),
            Ref::Trig(x) => write!(f, "trig.{x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "||",
            BinOp::And => "&&",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::Add | BinOp::Sub => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Lit(Value),
    Ref(Ref),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn int(v: u64) -> Expr {
        Expr::Lit(Value::Int(v))
    }

    pub fn truth() -> Expr {
        Expr::Lit(Value::Bool(true))
    }

    pub fn is_true_literal(&self) -> bool {
        matches!(self, Expr::Lit(Value::Bool(true)))
    }

    pub fn refs(&self) -> Vec<&Ref> {
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a Ref>) {
            match e {
                Expr::Lit(_) => {}
                Expr::Ref(r) => out.push(r),
                Expr::Not(inner) => walk(inner, out),
                Expr::Bin(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(op, ..) => op.precedence(),
            _ => 10,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(Value::Int(i)) => write!(f, "{i}"),
            Expr::Lit(Value::Bool(b)) => write!(f, "{b}"),
            Expr::Lit(Value::Bytes(b)) => write!(f, "x\"{}\"", hex::encode(b)),
            Expr::Lit(Value::Text(t)) => write!(f, "{}", serde_json::to_string(t).expect("string")),
            Expr::Ref(r) => write!(f, "{r}"),
            Expr::Not(inner) => {
                if inner.prec() < 10 {
                    write!(f, "!({inner})")
                } else {
                    write!(f, "!{inner}")
                }
            }
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                // Left-associative: parenthesise the right side at equal
                // precedence. Comparisons never chain, so both sides.
                if a.prec() < p || (p == 3 && a.prec() == 3) {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if b.prec() <= p {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(u64),
    Bytes(Vec<u8>),
    Text(String),
    Ident(String),
    Dot,
    LParen,
    RParen,
    Not,
    Op(BinOp),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset, message: &str| ParseError { offset, message: message.into() };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let mut value: u64 = src[start..i].parse().map_err(|_| err(start, "integer literal out of range"))?;
                let unit_start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
                    i += 1;
                }
                let scale = match &src[unit_start..i] {
                    "" => 1,
                    "ns" => 1,
                    "us" => 1_000,
                    "ms" => 1_000_000,
                    "s" => 1_000_000_000,
                    _ => return Err(err(unit_start, "unknown duration unit")),
                };
                value = value.checked_mul(scale).ok_or_else(|| err(start, "duration literal out of range"))?;
                out.push((start, Tok::Int(value)));
            }
            b'x' if bytes.get(i + 1) == Some(&b'"') => {
                let close = src[i + 2..].find('"').ok_or_else(|| err(start, "unterminated byte literal"))?;
                let body = &src[i + 2..i + 2 + close];
                let b = hex::decode(body).map_err(|_| err(start, "invalid hex in byte literal"))?;
                out.push((start, Tok::Bytes(b)));
                i += close + 3;
            }
            b'"' => {
                let mut j = i + 1;
                let mut escaped = false;
                while j < bytes.len() {
                    match bytes[j] {
                        b'\\' if !escaped => escaped = true,
                        b'"' if !escaped => break,
                        _ => escaped = false,
                    }
                    j += 1;
                }
                if j >= bytes.len() {
                    return Err(err(start, "unterminated string literal"));
                }
                let text: String =
                    serde_json::from_str(&src[i..=j]).map_err(|_| err(start, "invalid string literal"))?;
                out.push((start, Tok::Text(text)));
                i = j + 1;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
            }
            b'.' => {
                out.push((start, Tok::Dot));
                i += 1;
            }
            b'(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            _ => {
                let two = src.get(i..i + 2).unwrap_or("");
                let (tok, len) = match two {
                    "||" => (Tok::Op(BinOp::Or), 2),
                    "&&" => (Tok::Op(BinOp::And), 2),
                    "==" => (Tok::Op(BinOp::Eq), 2),
                    "!=" => (Tok::Op(BinOp::Ne), 2),
                    "<=" => (Tok::Op(BinOp::Le), 2),
                    ">=" => (Tok::Op(BinOp::Ge), 2),
                    _ => match c {
                        b'<' => (Tok::Op(BinOp::Lt), 1),
                        b'>' => (Tok::Op(BinOp::Gt), 1),
                        b'+' => (Tok::Op(BinOp::Add), 1),
                        b'-' => (Tok::Op(BinOp::Sub), 1),
                        b'!' => (Tok::Not, 1),
                        _ => return Err(err(start, &format!("unexpected character `{}`", c as char))),
                    },
                };
                out.push((start, tok));
                i += len;
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn fail<T>(&self, message: &str) -> Result<T, ParseError> {
        Err(ParseError { offset: self.offset(), message: message.into() })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op)) = self.peek().cloned() {
            let p = op.precedence();
            if p < min_prec {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(p + 1)?;
            // Comparisons do not chain.
            if p == 3 {
                if let Some(Tok::Op(next)) = self.peek() {
                    if next.precedence() == 3 {
                        return self.fail("comparison operators do not chain; add parentheses");
                    }
                }
            }
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return self.fail("unexpected end of expression");
        };
        self.pos += 1;
        match tok {
            Tok::Int(i) => Ok(Expr::Lit(Value::Int(i))),
            Tok::Bytes(b) => Ok(Expr::Lit(Value::Bytes(b))),
            Tok::Text(t) => Ok(Expr::Lit(Value::Text(t))),
            Tok::LParen => {
                let e = self.binary(0)?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.fail("expected `)`");
                }
                self.pos += 1;
                Ok(e)
            }
            Tok::Ident(name) => {
                if name == "true" || name == "false" {
                    return Ok(Expr::Lit(Value::Bool(name == "true")));
                }
                if self.peek() == Some(&Tok::Dot) {
                    self.pos += 1;
                    let Some(Tok::Ident(field)) = self.peek().cloned() else {
                        return self.fail("expected a name after `.`");
                    };
                    self.pos += 1;
                    return Ok(Expr::Ref(match name.as_str() {
                        "msg" => Ref::Msg(field),
                        "out" => Ref::Out(field),
                        "trig" => Ref::Trig(field),
                        _ => Ref::RoleVar(name, field),
                    }));
                }
                if matches!(name.as_str(), "msg" | "out" | "trig") {
                    return self.fail(&format!("`{name}` must be followed by `.field`"));
                }
                Ok(Expr::Ref(Ref::Var(name)))
            }
            _ => {
                self.pos -= 1;
                self.fail("expected a value")
            }
        }
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len() };
    let e = p.binary(0)?;
    if p.pos != p.toks.len() {
        return p.fail("unexpected trailing input");
    }
    Ok(e)
}

/// Name-to-type resolution used by [`typecheck`].
pub trait TypeScope {
    fn type_of(&self, r: &Ref) -> Result<Ty, String>;
}

pub fn typecheck(e: &Expr, scope: &dyn TypeScope) -> Result<Ty, String> {
    match e {
        Expr::Lit(v) => Ok(v.ty()),
        Expr::Ref(r) => scope.type_of(r),
        Expr::Not(inner) => match typecheck(inner, scope)? {
            Ty::Bool => Ok(Ty::Bool),
            t => Err(format!("`!` needs a bool operand, found {t} in `{e}`")),
        },
        Expr::Bin(op, a, b) => {
            let ta = typecheck(a, scope)?;
            let tb = typecheck(b, scope)?;
            match op {
                BinOp::Or | BinOp::And => {
                    if ta == Ty::Bool && tb == Ty::Bool {
                        Ok(Ty::Bool)
                    } else {
                        Err(format!("`{}` needs bool operands, found {ta} and {tb} in `{e}`", op.symbol()))
                    }
                }
                BinOp::Add | BinOp::Sub => {
                    if ta == Ty::Int && tb == Ty::Int {
                        Ok(Ty::Int)
                    } else {
                        Err(format!("`{}` needs int operands, found {ta} and {tb} in `{e}`", op.symbol()))
                    }
                }
                BinOp::Eq | BinOp::Ne => {
                    if ta == tb {
                        Ok(Ty::Bool)
                    } else {
                        Err(format!("cannot compare {ta} with {tb} in `{e}`"))
                    }
                }
                BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                    if ta == Ty::Int && tb == Ty::Int {
                        Ok(Ty::Bool)
                    } else {
                        Err(format!("ordering `{}` needs int operands, found {ta} and {tb} in `{e}`", op.symbol()))
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("arithmetic overflow in `{0}`")]
    Overflow(String),
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("type mismatch in `{0}`")]
    Type(String),
}

/// Runtime bindings for [`eval`].
pub trait Env {
    fn get(&self, r: &Ref) -> Option<Value>;
}

pub fn eval(e: &Expr, env: &dyn Env) -> Result<Value, EvalError> {
    let mismatch = || EvalError::Type(e.to_string());
    match e {
        Expr::Lit(v) => Ok(v.clone()),
        Expr::Ref(r) => env.get(r).ok_or_else(|| EvalError::Unbound(r.to_string())),
        Expr::Not(inner) => Ok(Value::Bool(!eval(inner, env)?.as_bool().ok_or_else(mismatch)?)),
        Expr::Bin(BinOp::And, a, b) => {
            if !eval(a, env)?.as_bool().ok_or_else(mismatch)? {
                return Ok(Value::Bool(false));
            }
            Ok(Value::Bool(eval(b, env)?.as_bool().ok_or_else(mismatch)?))
        }
        Expr::Bin(BinOp::Or, a, b) => {
            if eval(a, env)?.as_bool().ok_or_else(mismatch)? {
                return Ok(Value::Bool(true));
            }
            Ok(Value::Bool(eval(b, env)?.as_bool().ok_or_else(mismatch)?))
        }
        Expr::Bin(op, a, b) => {
            let va = eval(a, env)?;
            let vb = eval(b, env)?;
            match op {
                BinOp::Eq => Ok(Value::Bool(va == vb)),
                BinOp::Ne => Ok(Value::Bool(va != vb)),
                _ => {
                    let (x, y) = (va.as_int().ok_or_else(mismatch)?, vb.as_int().ok_or_else(mismatch)?);
                    Ok(match op {
                        BinOp::Add => Value::Int(x.checked_add(y).ok_or_else(|| EvalError::Overflow(e.to_string()))?),
                        BinOp::Sub => Value::Int(x.checked_sub(y).ok_or_else(|| EvalError::Overflow(e.to_string()))?),
                        BinOp::Lt => Value::Bool(x < y),
                        BinOp::Le => Value::Bool(x <= y),
                        BinOp::Gt => Value::Bool(x > y),
                        BinOp::Ge => Value::Bool(x >= y),
                        _ => unreachable!("handled above"),
                    })
                }
            }
        }
    }
}

/// Evaluates a guard; evaluation errors make the guard false.
pub fn eval_guard(e: &Expr, env: &dyn Env) -> Result<bool, EvalError> {
    match eval(e, env)? {
        Value::Bool(b) => Ok(b),
        _ => Err(EvalError::Type(e.to_string())),
    }
}
