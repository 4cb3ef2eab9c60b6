//! Prefix expression trees over two state variables.
//!
//! JSON grammar: a bare number, or an array whose head names the node:
//! `["const", c]`, `["var", i]` (1-based), `["add", e, ...]`, `["sub", e]`
//! (negation) or `["sub", a, b]`, `["mul", e, ...]`, `["pow", e, k]` with a
//! non-negative integer `k`, `["sin", e]`, `["cos", e]`.

use serde_json::Value;

use crate::error::{Error, Result};

pub const VARS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    /// 0-based.
    Var(usize),
    Add(Vec<Expr>),
    Neg(Box<Expr>),
    Mul(Vec<Expr>),
    Pow(Box<Expr>, u32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Expression(msg.into())
}

fn args(items: &[Value], op: &str, min: usize, max: usize) -> Result<Vec<Expr>> {
    let rest = &items[1..];
    if rest.len() < min || rest.len() > max {
        return Err(bad(format!("'{op}' takes {min}..={max} arguments, got {}", rest.len())));
    }
    rest.iter().map(Expr::parse).collect()
}

impl Expr {
    pub fn parse(v: &Value) -> Result<Expr> {
        match v {
            Value::Number(n) => {
                let c = n.as_f64().ok_or_else(|| bad(format!("number {n} out of range")))?;
                Ok(Expr::Const(c))
            }
            Value::Array(items) if !items.is_empty() => {
                let op = items[0].as_str().ok_or_else(|| bad(format!("node head must be a name, got {}", items[0])))?;
                match op {
                    "const" => match items.get(1).and_then(Value::as_f64) {
                        Some(c) if items.len() == 2 && c.is_finite() => Ok(Expr::Const(c)),
                        _ => Err(bad("'const' takes one finite number")),
                    },
                    "var" => match items.get(1).and_then(Value::as_u64) {
                        Some(i) if items.len() == 2 && (1..=VARS as u64).contains(&i) => Ok(Expr::Var(i as usize - 1)),
                        _ => Err(bad(format!("'var' takes an index in 1..={VARS}"))),
                    },
                    "add" => Ok(Expr::Add(args(items, op, 1, usize::MAX)?)),
                    "mul" => Ok(Expr::Mul(args(items, op, 1, usize::MAX)?)),
                    "sub" => {
                        let mut a = args(items, op, 1, 2)?;
                        if a.len() == 1 {
                            Ok(Expr::Neg(Box::new(a.remove(0))))
                        } else {
                            let b = a.pop().expect("two args");
                            Ok(Expr::Add(vec![a.pop().expect("two args"), Expr::Neg(Box::new(b))]))
                        }
                    }
                    "pow" => {
                        if items.len() != 3 {
                            return Err(bad("'pow' takes a base and an integer exponent"));
                        }
                        let k = items[2]
                            .as_u64()
                            .or_else(|| items[2].as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u64))
                            .filter(|k| *k <= 64)
                            .ok_or_else(|| bad(format!("'pow' exponent must be an integer in 0..=64, got {}", items[2])))?;
                        Ok(Expr::Pow(Box::new(Expr::parse(&items[1])?), k as u32))
                    }
                    "sin" => Ok(Expr::Sin(Box::new(args(items, op, 1, 1)?.remove(0)))),
                    "cos" => Ok(Expr::Cos(Box::new(args(items, op, 1, 1)?.remove(0)))),
                    other => Err(bad(format!("unknown node '{other}'"))),
                }
            }
            other => Err(bad(format!("expected a number or a node array, got {other}"))),
        }
    }

    pub fn eval(&self, x: &[f64; VARS]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Add(v) => v.iter().map(|e| e.eval(x)).sum(),
            Expr::Neg(e) => -e.eval(x),
            Expr::Mul(v) => v.iter().map(|e| e.eval(x)).product(),
            Expr::Pow(e, k) => e.eval(x).powi(*k as i32),
            Expr::Sin(e) => e.eval(x).sin(),
            Expr::Cos(e) => e.eval(x).cos(),
        }
    }

    /// Exact partial derivative in variable `i` (0-based), simplified.
    pub fn diff(&self, i: usize) -> Expr {
        let d = match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(j) => Expr::Const(if *j == i { 1.0 } else { 0.0 }),
            Expr::Add(v) => Expr::Add(v.iter().map(|e| e.diff(i)).collect()),
            Expr::Neg(e) => Expr::Neg(Box::new(e.diff(i))),
            Expr::Mul(v) => Expr::Add(
                (0..v.len())
                    .map(|k| {
                        let mut f = v.clone();
                        f[k] = v[k].diff(i);
                        Expr::Mul(f)
                    })
                    .collect(),
            ),
            Expr::Pow(e, k) => match k {
                0 => Expr::Const(0.0),
                _ => Expr::Mul(vec![Expr::Const(*k as f64), Expr::Pow(e.clone(), k - 1), e.diff(i)]),
            },
            Expr::Sin(e) => Expr::Mul(vec![Expr::Cos(e.clone()), e.diff(i)]),
            Expr::Cos(e) => Expr::Neg(Box::new(Expr::Mul(vec![Expr::Sin(e.clone()), e.diff(i)]))),
        };
        d.simplify()
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Constant folding and removal of neutral terms.
    pub fn simplify(self) -> Expr {
        match self {
            Expr::Add(v) => {
                let mut c = 0.0;
                let mut rest = Vec::new();
                for e in v.into_iter().map(Expr::simplify) {
                    match e {
                        Expr::Const(k) => c += k,
                        Expr::Add(inner) => rest.extend(inner),
                        other => rest.push(other),
                    }
                }
                if c != 0.0 {
                    rest.push(Expr::Const(c));
                }
                match rest.len() {
                    0 => Expr::Const(0.0),
                    1 => rest.pop().expect("one term"),
                    _ => Expr::Add(rest),
                }
            }
            Expr::Mul(v) => {
                let mut c = 1.0;
                let mut rest = Vec::new();
                for e in v.into_iter().map(Expr::simplify) {
                    match e {
                        Expr::Const(k) => c *= k,
                        Expr::Mul(inner) => rest.extend(inner),
                        other => rest.push(other),
                    }
                }
                if c == 0.0 {
                    return Expr::Const(0.0);
                }
                if c != 1.0 || rest.is_empty() {
                    rest.insert(0, Expr::Const(c));
                }
                match rest.len() {
                    1 => rest.pop().expect("one factor"),
                    _ => Expr::Mul(rest),
                }
            }
            Expr::Neg(e) => match e.simplify() {
                Expr::Const(c) => Expr::Const(-c),
                Expr::Neg(inner) => *inner,
                other => Expr::Neg(Box::new(other)),
            },
            Expr::Pow(e, k) => {
                let b = e.simplify();
                match (k, b.as_const()) {
                    (0, _) => Expr::Const(1.0),
                    (_, Some(c)) => Expr::Const(c.powi(k as i32)),
                    (1, _) => b,
                    _ => Expr::Pow(Box::new(b), k),
                }
            }
            Expr::Sin(e) => match e.simplify() {
                Expr::Const(c) => Expr::Const(c.sin()),
                other => Expr::Sin(Box::new(other)),
            },
            Expr::Cos(e) => match e.simplify() {
                Expr::Const(c) => Expr::Const(c.cos()),
                other => Expr::Cos(Box::new(other)),
            },
            other => other,
        }
    }
}
