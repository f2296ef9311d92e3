//! Moore machines with function-guarded transitions, context
//! assignments and per-state outputs, plus the auction monitoring
//! pipeline that pairs a machine with the slicer.

use std::sync::Arc;

use crate::error::EngineError;
use crate::esql::Interpreter;
use crate::event::{Event, Tuple};
use crate::function::{Context, Function, Op};
use crate::graph::Graph;
use crate::processor::{Processor, Runner, StepResult};
use crate::trace_ops::Slicer;

#[derive(Clone)]
pub struct Transition {
    pub from: usize,
    pub guard: Function,
    pub assignments: Vec<(String, Function)>,
    pub to: usize,
}

/// A machine blueprint: states are indices, each with an optional
/// output expression evaluated on entering. Transitions leaving a
/// state are tried in declaration order; the first true guard fires.
#[derive(Clone)]
pub struct MooreMachine {
    pub state_names: Vec<String>,
    pub outputs: Vec<Option<Function>>,
    pub initial: usize,
    pub transitions: Vec<Transition>,
}

impl MooreMachine {
    pub fn new() -> Self {
        MooreMachine {
            state_names: Vec::new(),
            outputs: Vec::new(),
            initial: 0,
            transitions: Vec::new(),
        }
    }

    pub fn add_state(&mut self, name: &str, output: Option<Function>) -> usize {
        self.state_names.push(name.to_string());
        self.outputs.push(output);
        self.state_names.len() - 1
    }

    pub fn state(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|s| s == name)
    }

    pub fn add_transition(
        &mut self,
        from: usize,
        guard: Function,
        assignments: Vec<(String, Function)>,
        to: usize,
    ) {
        self.transitions.push(Transition { from, guard, assignments, to });
    }

    /// Loads a machine from its text form:
    ///
    /// ```text
    /// state idle
    /// state open output days
    /// init idle
    /// trans idle open when action = 'start' set days := 0
    /// ```
    ///
    /// Guards and outputs are expressions of the query language's
    /// function grammar; assignments are `name := expr` pairs
    /// separated by `set`.
    pub fn load_text(text: &str, itp: &Interpreter) -> Result<MooreMachine, EngineError> {
        let mut m = MooreMachine::new();
        let mut init: Option<String> = None;
        let build = |expr: &str| {
            itp.build_function(expr)
                .map_err(|e| EngineError::Runtime(format!("in `{}`: {}", expr, e)))
        };
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            match words.next() {
                Some("state") => {
                    let name = words.next().ok_or_else(|| {
                        EngineError::Runtime("state needs a name".into())
                    })?;
                    let rest: Vec<&str> = words.collect();
                    let output = match rest.split_first() {
                        Some((&"output", expr)) => Some(build(&expr.join(" "))?),
                        Some(_) => {
                            return Err(EngineError::Runtime(format!(
                                "unexpected words after state {}",
                                name
                            )))
                        }
                        None => None,
                    };
                    if m.state(name).is_some() {
                        return Err(EngineError::Runtime(format!("duplicate state {}", name)));
                    }
                    m.add_state(name, output);
                }
                Some("init") => {
                    init = Some(
                        words
                            .next()
                            .ok_or_else(|| EngineError::Runtime("init needs a state".into()))?
                            .to_string(),
                    );
                }
                Some("trans") => {
                    let from = words.next().and_then(|n| m.state(n)).ok_or_else(|| {
                        EngineError::Runtime(format!("bad transition source in `{}`", line))
                    })?;
                    let to = words.next().and_then(|n| m.state(n)).ok_or_else(|| {
                        EngineError::Runtime(format!("bad transition target in `{}`", line))
                    })?;
                    let rest: Vec<&str> = words.collect();
                    let rest = rest.join(" ");
                    let rest = rest.strip_prefix("when ").ok_or_else(|| {
                        EngineError::Runtime(format!("transition needs `when` in `{}`", line))
                    })?;
                    let (guard_text, assigns_text) = match rest.split_once(" set ") {
                        Some((g, a)) => (g, Some(a)),
                        None => (rest, None),
                    };
                    let guard = build(guard_text)?;
                    let mut assignments = Vec::new();
                    if let Some(a) = assigns_text {
                        for part in a.split(" set ") {
                            let (name, expr) = part.split_once(":=").ok_or_else(|| {
                                EngineError::Runtime(format!("assignment needs `:=` in `{}`", part))
                            })?;
                            assignments.push((name.trim().to_string(), build(expr.trim())?));
                        }
                    }
                    m.add_transition(from, guard, assignments, to);
                }
                Some(other) => {
                    return Err(EngineError::Runtime(format!("unknown directive {}", other)))
                }
                None => {}
            }
        }
        if m.state_names.is_empty() {
            return Err(EngineError::Runtime("machine has no states".into()));
        }
        if let Some(name) = init {
            m.initial = m
                .state(&name)
                .ok_or_else(|| EngineError::Runtime(format!("unknown initial state {}", name)))?;
        }
        Ok(m)
    }

    pub fn runner(self) -> MachineRunner {
        let initial = self.initial;
        MachineRunner { machine: Arc::new(self), state: initial, ctx: Context::new() }
    }
}

impl Default for MooreMachine {
    fn default() -> Self {
        MooreMachine::new()
    }
}

/// A running machine instance: 1:1 processor, silent when no guard
/// fires or when the entered state has no output.
pub struct MachineRunner {
    machine: Arc<MooreMachine>,
    state: usize,
    ctx: Context,
}

impl MachineRunner {
    pub fn current_state(&self) -> usize {
        self.state
    }

    pub fn context(&self) -> &Context {
        &self.ctx
    }
}

impl Processor for MachineRunner {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let fired = self
            .machine
            .transitions
            .iter()
            .filter(|t| t.from == self.state)
            .find_map(|t| match t.guard.eval(front, &self.ctx) {
                Ok(v) => match v.as_bool() {
                    Some(true) => Some(Ok(t)),
                    Some(false) => None,
                    None => Some(Err(EngineError::EventType(format!(
                        "guard produced non-boolean {}",
                        v
                    )))),
                },
                Err(e) => Some(Err(e)),
            })
            .transpose()?;
        let t = match fired {
            Some(t) => t,
            None => return Ok(StepResult::none()),
        };
        for (name, f) in &t.assignments {
            let v = f.eval(front, &self.ctx)?;
            self.ctx.insert(name.clone(), v);
        }
        self.state = t.to;
        match &self.machine.outputs[self.state] {
            Some(f) => Ok(StepResult::one(vec![f.eval(front, &self.ctx)?])),
            None => Ok(StepResult::none()),
        }
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(MachineRunner {
            machine: Arc::clone(&self.machine),
            state: self.machine.initial,
            ctx: self.ctx.clone(),
        })
    }

    fn set_context(&mut self, name: &str, value: Event) {
        self.ctx.insert(name.to_string(), value);
    }
}

fn attr(name: &str) -> Function {
    Function::GetAttribute { qualifier: None, name: name.to_string() }
}

fn text_eq(f: Function, s: &str) -> Function {
    Function::binary(Op::Eq, f, Function::Const(Event::text(s)))
}

/// The per-item auction monitor: `start(item, days, price)` opens an
/// auction with its day counter at zero, bids keep it open, and every
/// end-of-day marker advances the counter. The open state reports the
/// elapsed days.
pub fn auction_machine() -> MooreMachine {
    let mut m = MooreMachine::new();
    let idle = m.add_state("idle", None);
    let open = m.add_state("open", Some(Function::ContextRead("days".into())));
    m.add_transition(
        idle,
        text_eq(attr("action"), "start"),
        vec![
            ("days".into(), Function::Const(Event::int(0))),
            ("lastPrice".into(), Function::Const(Event::int(0))),
            ("minPrice".into(), attr("p2")),
            ("duration".into(), attr("p1")),
        ],
        open,
    );
    m.add_transition(
        open,
        text_eq(attr("action"), "bid"),
        vec![("lastPrice".into(), attr("p1"))],
        open,
    );
    m.add_transition(
        open,
        text_eq(attr("action"), "endOfDay"),
        vec![(
            "days".into(),
            Function::binary(
                Op::Add,
                Function::ContextRead("days".into()),
                Function::Const(Event::int(1)),
            ),
        )],
        open,
    );
    m
}

/// Averages the members of each incoming collection; empty
/// collections produce nothing.
pub struct CollectionAverage;

impl Processor for CollectionAverage {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let vs = match &front[0] {
            Event::Collection(vs) => vs,
            other => {
                return Err(EngineError::EventType(format!(
                    "average over non-collection {}",
                    other
                )))
            }
        };
        if vs.is_empty() {
            return Ok(StepResult::none());
        }
        let mut sum = 0.0;
        for v in vs {
            sum += v
                .as_number()
                .ok_or_else(|| {
                    EngineError::EventType(format!("average over non-number {}", v))
                })?
                .as_f64();
        }
        Ok(StepResult::one(vec![Event::float(sum / vs.len() as f64)]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(CollectionAverage)
    }
}

/// Builds an auction log event. `start(item, days, price)` and
/// `bid(item, price)` carry their arguments in p1/p2; `endOfDay` has
/// no item and is broadcast to every slice.
pub fn auction_event(action: &str, item: Option<&str>, p1: Option<i64>, p2: Option<i64>) -> Event {
    let mut t = Tuple::new();
    t.set("action", Event::text(action));
    if let Some(i) = item {
        t.set("item", Event::text(i));
    }
    if let Some(p) = p1 {
        t.set("p1", Event::int(p));
    }
    if let Some(p) = p2 {
        t.set("p2", Event::int(p));
    }
    Event::Tuple(t)
}

/// The full auction query: slice the log by item name (end-of-day
/// markers go to every slice), run the auction machine per slice, and
/// average the open auctions' elapsed days.
pub fn auction_pipeline() -> Result<Graph, EngineError> {
    let key = Function::custom("auction_key", |front: &[Event]| {
        let t = match &front[0] {
            Event::Tuple(t) => t,
            other => {
                return Err(EngineError::EventType(format!(
                    "auction log event expected, got {}",
                    other
                )))
            }
        };
        match t.get("action") {
            Some(Event::Text(a)) if a == "endOfDay" => Ok(Event::Wildcard),
            _ => t
                .get("item")
                .cloned()
                .ok_or_else(|| EngineError::Runtime("auction event has no item".into())),
        }
    });
    let slicer = Slicer::new(key, Runner::new(Box::new(auction_machine().runner())));
    let mut g = Graph::new();
    let s = g.add(Box::new(slicer));
    let avg = g.add(Box::new(CollectionAverage));
    g.connect(s, 0, avg, 0)?;
    let port = g.add_input_port();
    g.connect_input(port, s, 0)?;
    g.add_output_port(avg, 0)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feed_all(p: Box<dyn Processor>, input: &[Event]) -> Vec<Event> {
        let mut r = Runner::new(p);
        let mut out = Vec::new();
        for e in input {
            out.extend(r.feed(e).unwrap());
        }
        out
    }

    #[test]
    fn single_state_machine_is_a_constant_stream() {
        let mut m = MooreMachine::new();
        let s = m.add_state("only", Some(Function::Const(Event::int(7))));
        m.add_transition(s, Function::Const(Event::Bool(true)), vec![], s);
        let out = feed_all(Box::new(m.runner()), &[Event::int(1), Event::int(2)]);
        assert_eq!(out, vec![Event::int(7), Event::int(7)]);
    }

    #[test]
    fn unmatched_events_are_ignored_silently() {
        let m = auction_machine();
        let out = feed_all(
            Box::new(m.runner()),
            &[auction_event("bid", Some("vase"), Some(5), None)],
        );
        assert!(out.is_empty());
    }

    #[test]
    fn first_true_guard_wins() {
        let mut m = MooreMachine::new();
        let a = m.add_state("a", None);
        let b = m.add_state("b", Some(Function::Const(Event::text("b"))));
        let c = m.add_state("c", Some(Function::Const(Event::text("c"))));
        m.add_transition(a, Function::Const(Event::Bool(true)), vec![], b);
        m.add_transition(a, Function::Const(Event::Bool(true)), vec![], c);
        let out = feed_all(Box::new(m.runner()), &[Event::int(0)]);
        assert_eq!(out, vec![Event::text("b")]);
    }

    #[test]
    fn toaster_style_edge_detection() {
        // power readings: report I on the rise above 100, O on the
        // drop below, nothing in between.
        let above = Function::binary(
            Op::Gt,
            Function::Arg(0),
            Function::Const(Event::int(100)),
        );
        let below = Function::Apply { op: Op::Not, args: vec![above.clone()] };
        let mut m = MooreMachine::new();
        let off = m.add_state("off", Some(Function::Const(Event::text("O"))));
        let on = m.add_state("on", Some(Function::Const(Event::text("I"))));
        m.add_transition(off, above.clone(), vec![], on);
        m.add_transition(on, below, vec![], off);
        m.initial = off;
        let readings: Vec<Event> = [5, 700, 800, 750, 3, 2].iter().map(|&p| Event::int(p)).collect();
        let out = feed_all(Box::new(m.runner()), &readings);
        assert_eq!(out, vec![Event::text("I"), Event::text("O")]);
    }

    #[test]
    fn duplicate_restarts_state_but_keeps_context() {
        let mut m = MooreMachine::new();
        let a = m.add_state("a", None);
        let b = m.add_state("b", Some(Function::ContextRead("k".into())));
        m.add_transition(a, Function::Const(Event::Bool(true)), vec![], b);
        let mut r = m.runner();
        r.set_context("k", Event::int(9));
        let mut first = Runner::new(Box::new(r));
        assert_eq!(first.feed(&Event::int(0)).unwrap(), vec![Event::int(9)]);
        let mut second = first.duplicate();
        assert_eq!(second.feed(&Event::int(0)).unwrap(), vec![Event::int(9)]);
    }

    #[test]
    fn machine_loads_from_text() {
        // attribute references come from the tuple palette's grammar
        let mut itp = Interpreter::new();
        crate::tuples::install(&mut itp).unwrap();
        let m = MooreMachine::load_text(
            "# rising edge\n\
             state off\n\
             state on output CONSTANT 1\n\
             init off\n\
             trans off on when 50 < magnitude set seen := magnitude\n\
             trans on off when magnitude < 50\n",
            &itp,
        )
        .unwrap();
        let mk = |v: i64| {
            let mut t = Tuple::new();
            t.set("magnitude", Event::int(v));
            Event::Tuple(t)
        };
        let mut r = Runner::new(Box::new(m.runner()));
        assert!(r.feed(&mk(10)).unwrap().is_empty());
        assert_eq!(r.feed(&mk(90)).unwrap(), vec![Event::int(1)]);
        assert!(r.feed(&mk(95)).unwrap().is_empty());
        assert!(r.feed(&mk(5)).unwrap().is_empty());
    }

    #[test]
    fn auction_log_produces_day_averages() {
        let mut g = auction_pipeline().unwrap();
        let log = [
            auction_event("start", Some("vase"), Some(3), Some(15)),
            auction_event("bid", Some("vase"), Some(15), None),
            auction_event("endOfDay", None, None, None),
        ];
        for e in &log {
            g.push(0, e.clone()).unwrap();
        }
        let mut out = Vec::new();
        while let Some(e) = g.pop_output(0) {
            out.push(e);
        }
        assert_eq!(out, vec![Event::float(0.0), Event::float(0.0), Event::float(1.0)]);
    }

    #[test]
    fn auction_two_items_average_their_days() {
        let mut g = auction_pipeline().unwrap();
        let log = [
            auction_event("start", Some("vase"), Some(3), Some(15)),
            auction_event("endOfDay", None, None, None),
            auction_event("start", Some("ring"), Some(5), Some(30)),
            auction_event("endOfDay", None, None, None),
        ];
        for e in &log {
            g.push(0, e.clone()).unwrap();
        }
        let mut out = Vec::new();
        while let Some(e) = g.pop_output(0) {
            out.push(e);
        }
        // vase: 0 then 1; ring opens at 0; final day: vase 2, ring 1.
        assert_eq!(
            out,
            vec![
                Event::float(0.0),
                Event::float(1.0),
                Event::float(0.5),
                Event::float(1.5),
            ]
        );
    }
}
