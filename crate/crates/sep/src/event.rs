//! The event model: dynamically typed values flowing through pipes.

use std::fmt;
use std::sync::Arc;

/// Three-valued verdict used by prefix monitors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Troolean {
    True,
    False,
    Inconclusive,
}

impl Troolean {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Troolean::True
        } else {
            Troolean::False
        }
    }

    /// Strong Kleene conjunction: False dominates.
    pub fn and(self, other: Troolean) -> Troolean {
        match (self, other) {
            (Troolean::False, _) | (_, Troolean::False) => Troolean::False,
            (Troolean::True, Troolean::True) => Troolean::True,
            _ => Troolean::Inconclusive,
        }
    }

    /// Strong Kleene disjunction: True dominates.
    pub fn or(self, other: Troolean) -> Troolean {
        match (self, other) {
            (Troolean::True, _) | (_, Troolean::True) => Troolean::True,
            (Troolean::False, Troolean::False) => Troolean::False,
            _ => Troolean::Inconclusive,
        }
    }

    pub fn not(self) -> Troolean {
        match self {
            Troolean::True => Troolean::False,
            Troolean::False => Troolean::True,
            Troolean::Inconclusive => Troolean::Inconclusive,
        }
    }
}

impl fmt::Display for Troolean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Troolean::True => write!(f, "TRUE"),
            Troolean::False => write!(f, "FALSE"),
            Troolean::Inconclusive => write!(f, "INCONCLUSIVE"),
        }
    }
}

/// A numeric value, either an exact integer or a binary float.
/// Arithmetic promotes int to float on mixed operands.
#[derive(Debug, Clone, Copy)]
pub enum Number {
    Int(i64),
    Float(f64),
}

impl Number {
    pub fn as_f64(self) -> f64 {
        match self {
            Number::Int(i) => i as f64,
            Number::Float(f) => f,
        }
    }

    pub fn parse(s: &str) -> Option<Number> {
        if let Ok(i) = s.parse::<i64>() {
            return Some(Number::Int(i));
        }
        // Reject strings like "inf" or "1e5x"; only plain decimal notation.
        let looks_numeric = {
            let t = s.strip_prefix('-').unwrap_or(s);
            !t.is_empty() && t.chars().all(|c| c.is_ascii_digit() || c == '.')
        };
        if looks_numeric {
            s.parse::<f64>().ok().map(Number::Float)
        } else {
            None
        }
    }
}

impl PartialEq for Number {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Number::Int(a), Number::Int(b)) => a == b,
            _ => self.as_f64() == other.as_f64(),
        }
    }
}

impl PartialOrd for Number {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        match (self, other) {
            (Number::Int(a), Number::Int(b)) => a.partial_cmp(b),
            _ => self.as_f64().partial_cmp(&other.as_f64()),
        }
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Number::Int(i) => write!(f, "{}", i),
            Number::Float(x) => write!(f, "{}", x),
        }
    }
}

/// A named-attribute record; iteration order is declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tuple {
    attrs: Vec<(String, Event)>,
}

impl Tuple {
    pub fn new() -> Self {
        Tuple { attrs: Vec::new() }
    }

    pub fn from_pairs(pairs: Vec<(String, Event)>) -> Self {
        Tuple { attrs: pairs }
    }

    /// Sets an attribute, replacing an existing one of the same name.
    pub fn set(&mut self, name: &str, value: Event) {
        if let Some(slot) = self.attrs.iter_mut().find(|(n, _)| n == name) {
            slot.1 = value;
        } else {
            self.attrs.push((name.to_string(), value));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Event> {
        self.attrs.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Event)> {
        self.attrs.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }
}

/// User-defined payloads carried through pipes untouched.
pub trait OpaqueValue: fmt::Debug + Send + Sync {
    fn opaque_eq(&self, other: &dyn OpaqueValue) -> bool;
    fn as_any(&self) -> &dyn std::any::Any;
}

/// An event: the atomic unit of data in a stream.
///
/// Equality is defined for every variant; comparing events of different
/// variants yields "not equal", never an error.
#[derive(Debug, Clone)]
pub enum Event {
    Number(Number),
    Text(String),
    Bool(bool),
    Troolean(Troolean),
    Tuple(Tuple),
    Collection(Vec<Event>),
    Opaque(Arc<dyn OpaqueValue>),
    /// Reserved slicing marker, spelled `#` in queries. Never produced by
    /// CSV ingestion and never stored as a slice key.
    Wildcard,
}

impl Event {
    pub fn int(i: i64) -> Event {
        Event::Number(Number::Int(i))
    }

    pub fn float(f: f64) -> Event {
        Event::Number(Number::Float(f))
    }

    pub fn text(s: &str) -> Event {
        Event::Text(s.to_string())
    }

    pub fn as_number(&self) -> Option<Number> {
        match self {
            Event::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Event::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Truth value of a Bool or Troolean event.
    pub fn as_troolean(&self) -> Option<Troolean> {
        match self {
            Event::Bool(b) => Some(Troolean::from_bool(*b)),
            Event::Troolean(t) => Some(*t),
            _ => None,
        }
    }

    pub fn kind(&self) -> EventKind {
        match self {
            Event::Number(_) => EventKind::Number,
            Event::Text(_) => EventKind::Text,
            Event::Bool(_) => EventKind::Bool,
            Event::Troolean(_) => EventKind::Troolean,
            Event::Tuple(_) => EventKind::Tuple,
            Event::Collection(_) => EventKind::Collection,
            Event::Opaque(_) => EventKind::Opaque,
            Event::Wildcard => EventKind::Wildcard,
        }
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Event::Number(a), Event::Number(b)) => a == b,
            (Event::Text(a), Event::Text(b)) => a == b,
            (Event::Bool(a), Event::Bool(b)) => a == b,
            (Event::Troolean(a), Event::Troolean(b)) => a == b,
            (Event::Tuple(a), Event::Tuple(b)) => a == b,
            (Event::Collection(a), Event::Collection(b)) => a == b,
            (Event::Opaque(a), Event::Opaque(b)) => a.opaque_eq(b.as_ref()),
            (Event::Wildcard, Event::Wildcard) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Number(n) => write!(f, "{}", n),
            Event::Text(s) => write!(f, "{}", s),
            Event::Bool(b) => write!(f, "{}", if *b { "true" } else { "false" }),
            Event::Troolean(t) => write!(f, "{}", t),
            Event::Tuple(t) => {
                let mut first = true;
                for (_, v) in t.iter() {
                    if !first {
                        write!(f, ",")?;
                    }
                    first = false;
                    write!(f, "{}", v)?;
                }
                Ok(())
            }
            Event::Collection(c) => {
                write!(f, "[")?;
                for (i, v) in c.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}", v)?;
                }
                write!(f, "]")
            }
            Event::Opaque(o) => write!(f, "{:?}", o),
            Event::Wildcard => write!(f, "#"),
        }
    }
}

/// Variant tag, used for declared pipe types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Number,
    Text,
    Bool,
    Troolean,
    Tuple,
    Collection,
    Opaque,
    Wildcard,
}

/// A set of accepted event variants, declared per pipe and checked at
/// connection time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TypeSet(u16);

impl TypeSet {
    pub const ANY: TypeSet = TypeSet(0xff);

    pub fn only(kinds: &[EventKind]) -> TypeSet {
        let mut bits = 0u16;
        for k in kinds {
            bits |= 1 << (*k as u16);
        }
        TypeSet(bits)
    }

    pub fn contains(&self, kind: EventKind) -> bool {
        self.0 & (1 << (kind as u16)) != 0
    }

    /// True when an upstream declaring `self` may feed a downstream
    /// declaring `other`.
    pub fn compatible(&self, other: &TypeSet) -> bool {
        self.0 & other.0 != 0
    }
}
