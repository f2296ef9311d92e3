//! Stateless functions over events, represented as expression trees.
//!
//! A `Function` maps a front of input events to output events without
//! retaining state between calls. Functions are first-class: they are
//! built by queries, passed to processors, and evaluated against a
//! context of named variables.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::EngineError;
use crate::event::{Event, Number};

/// Named variables visible to a function or processor.
pub type Context = BTreeMap<String, Event>;

/// Primitive operations applied to evaluated arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
    Pow,
    Abs,
    Gt,
    Lt,
    Eq,
    And,
    Or,
    Not,
}

impl Op {
    pub fn arity(&self) -> usize {
        match self {
            Op::Abs | Op::Not => 1,
            _ => 2,
        }
    }
}

/// An expression tree evaluated over a front of input events.
#[derive(Debug, Clone)]
pub enum Function {
    /// A constant, ignoring its inputs.
    Const(Event),
    /// The i-th event of the input front.
    Arg(usize),
    /// The value bound to a name in the evaluation context.
    ContextRead(String),
    /// Attribute lookup inside tuple events. With a qualifier index the
    /// attribute is read from that position of the front; without one,
    /// the front is scanned for a tuple carrying the attribute.
    GetAttribute {
        qualifier: Option<usize>,
        name: String,
    },
    Apply {
        op: Op,
        args: Vec<Function>,
    },
    /// An arbitrary native function, for behaviors the primitive ops
    /// cannot express.
    Custom(CustomFn),
}

#[derive(Clone)]
pub struct CustomFn {
    pub name: String,
    pub f: Arc<dyn Fn(&[Event]) -> Result<Event, EngineError> + Send + Sync>,
}

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomFn({})", self.name)
    }
}

fn num(e: &Event, what: &str) -> Result<Number, EngineError> {
    e.as_number()
        .ok_or_else(|| EngineError::EventType(format!("{} expects a number, got {}", what, e)))
}

fn arith(op: Op, a: Number, b: Number) -> Result<Event, EngineError> {
    use Number::*;
    let out = match (op, a, b) {
        (Op::Add, Int(x), Int(y)) => Int(x.wrapping_add(y)),
        (Op::Sub, Int(x), Int(y)) => Int(x.wrapping_sub(y)),
        (Op::Mul, Int(x), Int(y)) => Int(x.wrapping_mul(y)),
        (Op::Div, Int(x), Int(y)) => {
            if y == 0 {
                return Err(EngineError::EventType("division by zero".into()));
            }
            // Exact integer quotient stays an integer.
            if x % y == 0 {
                Int(x / y)
            } else {
                Float(x as f64 / y as f64)
            }
        }
        (Op::Max, Int(x), Int(y)) => Int(x.max(y)),
        (Op::Min, Int(x), Int(y)) => Int(x.min(y)),
        (Op::Add, x, y) => Float(x.as_f64() + y.as_f64()),
        (Op::Sub, x, y) => Float(x.as_f64() - y.as_f64()),
        (Op::Mul, x, y) => Float(x.as_f64() * y.as_f64()),
        (Op::Div, x, y) => {
            if y.as_f64() == 0.0 {
                return Err(EngineError::EventType("division by zero".into()));
            }
            Float(x.as_f64() / y.as_f64())
        }
        (Op::Max, x, y) => Float(x.as_f64().max(y.as_f64())),
        (Op::Min, x, y) => Float(x.as_f64().min(y.as_f64())),
        (Op::Pow, x, y) => Float(x.as_f64().powf(y.as_f64())),
        _ => unreachable!(),
    };
    Ok(Event::Number(out))
}

impl Function {
    /// Evaluates the tree against a front of events and a context.
    pub fn eval(&self, front: &[Event], ctx: &Context) -> Result<Event, EngineError> {
        match self {
            Function::Const(e) => Ok(e.clone()),
            Function::Arg(i) => front.get(*i).cloned().ok_or_else(|| {
                EngineError::EventType(format!("argument {} missing from front", i))
            }),
            Function::ContextRead(name) => ctx.get(name).cloned().ok_or_else(|| {
                EngineError::Runtime(format!("context has no binding for {}", name))
            }),
            Function::GetAttribute { qualifier, name } => {
                let tuple = match qualifier {
                    Some(i) => match front.get(*i) {
                        Some(Event::Tuple(t)) => Some(t),
                        Some(other) => {
                            return Err(EngineError::EventType(format!(
                                "attribute {} read from non-tuple {}",
                                name, other
                            )))
                        }
                        None => None,
                    },
                    None => front.iter().find_map(|e| match e {
                        Event::Tuple(t) if t.get(name).is_some() => Some(t),
                        _ => None,
                    }),
                };
                tuple
                    .and_then(|t| t.get(name))
                    .cloned()
                    .ok_or_else(|| EngineError::EventType(format!("no attribute {}", name)))
            }
            Function::Apply { op, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(a.eval(front, ctx)?);
                }
                apply_op(*op, &vals)
            }
            Function::Custom(c) => (c.f)(front),
        }
    }

    pub fn custom<F>(name: &str, f: F) -> Function
    where
        F: Fn(&[Event]) -> Result<Event, EngineError> + Send + Sync + 'static,
    {
        Function::Custom(CustomFn { name: name.to_string(), f: Arc::new(f) })
    }

    pub fn constant(e: Event) -> Function {
        Function::Const(e)
    }

    pub fn binary(op: Op, a: Function, b: Function) -> Function {
        Function::Apply { op, args: vec![a, b] }
    }
}

fn apply_op(op: Op, vals: &[Event]) -> Result<Event, EngineError> {
    if vals.len() != op.arity() {
        return Err(EngineError::EventType(format!(
            "{:?} expects {} arguments, got {}",
            op,
            op.arity(),
            vals.len()
        )));
    }
    match op {
        Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Max | Op::Min | Op::Pow => {
            arith(op, num(&vals[0], "arithmetic")?, num(&vals[1], "arithmetic")?)
        }
        Op::Abs => {
            let n = num(&vals[0], "ABS")?;
            Ok(Event::Number(match n {
                Number::Int(i) => Number::Int(i.wrapping_abs()),
                Number::Float(f) => Number::Float(f.abs()),
            }))
        }
        Op::Gt | Op::Lt => {
            let a = num(&vals[0], "comparison")?;
            let b = num(&vals[1], "comparison")?;
            let r = if op == Op::Gt { a > b } else { a < b };
            Ok(Event::Bool(r))
        }
        Op::Eq => Ok(Event::Bool(vals[0] == vals[1])),
        Op::And | Op::Or => {
            // Two Bools stay Bool; any Troolean operand promotes the
            // result to a Troolean under strong Kleene tables.
            match (&vals[0], &vals[1]) {
                (Event::Bool(a), Event::Bool(b)) => Ok(Event::Bool(if op == Op::And {
                    *a && *b
                } else {
                    *a || *b
                })),
                _ => {
                    let a = vals[0].as_troolean().ok_or_else(|| {
                        EngineError::EventType(format!("logic op on non-boolean {}", vals[0]))
                    })?;
                    let b = vals[1].as_troolean().ok_or_else(|| {
                        EngineError::EventType(format!("logic op on non-boolean {}", vals[1]))
                    })?;
                    Ok(Event::Troolean(if op == Op::And { a.and(b) } else { a.or(b) }))
                }
            }
        }
        Op::Not => match &vals[0] {
            Event::Bool(b) => Ok(Event::Bool(!b)),
            Event::Troolean(t) => Ok(Event::Troolean(t.not())),
            other => Err(EngineError::EventType(format!("NOT on non-boolean {}", other))),
        },
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Function::Const(e) => write!(f, "{}", e),
            Function::Arg(i) => write!(f, "${}", i),
            Function::ContextRead(n) => write!(f, "ctx[{}]", n),
            Function::GetAttribute { qualifier, name } => match qualifier {
                Some(i) => write!(f, "in{}.{}", i, name),
                None => write!(f, "{}", name),
            },
            Function::Apply { op, args } => {
                write!(f, "{:?}(", op)?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}", a)?;
                }
                write!(f, ")")
            }
            Function::Custom(c) => write!(f, "{}", c.name),
        }
    }
}
