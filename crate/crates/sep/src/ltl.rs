//! Temporal logic operators in two flavors: three-valued prefix
//! monitors that never retract a verdict, and two-valued suffix
//! monitors that delay each output until it is definitive. Plus
//! first-order quantifiers over per-event domains.

use crate::basic::FunctionProcessor;
use crate::error::EngineError;
use crate::esql::{pop_proc, pop_token, Artifact, Composer, Interpreter};
use crate::event::{Event, Troolean};
use crate::function::{Context, Function, Op};
use crate::processor::{Processor, Runner, StepResult};
use crate::trace_ops::Trim;

const LTL_GRAMMAR: &str = r"
<processor> ::= <ltl-not> | <ltl-and> | <ltl-or> | <globally> | <eventually>
             | <next> | <until> ;
<ltl-not> ::= NOT ( <processor> ) ;
<ltl-and> ::= ( <processor> ) AND ( <processor> ) ;
<ltl-or> ::= ( <processor> ) OR ( <processor> ) ;
<globally> ::= G ( <processor> ) ;
<eventually> ::= F ( <processor> ) ;
<next> ::= X ( <processor> ) ;
<until> ::= ( <processor> ) U ( <processor> ) ;
<constant> ::= <troolean> ;
<troolean> ::= TOP | BOT | ? ;
";

fn truth(e: &Event) -> Result<Troolean, EngineError> {
    e.as_troolean()
        .ok_or_else(|| EngineError::EventType(format!("truth value expected, got {}", e)))
}

/// FALSE as soon as any input is FALSE, INCONCLUSIVE until then.
#[derive(Debug, Default)]
pub struct TrooleanAlways {
    falsified: bool,
}

impl TrooleanAlways {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Processor for TrooleanAlways {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        if truth(&front[0])? == Troolean::False {
            self.falsified = true;
        }
        let v = if self.falsified { Troolean::False } else { Troolean::Inconclusive };
        Ok(StepResult::one(vec![Event::Troolean(v)]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(TrooleanAlways::new())
    }
}

/// TRUE as soon as any input is TRUE, INCONCLUSIVE until then.
#[derive(Debug, Default)]
pub struct TrooleanSometime {
    witnessed: bool,
}

impl TrooleanSometime {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Processor for TrooleanSometime {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        if truth(&front[0])? == Troolean::True {
            self.witnessed = true;
        }
        let v = if self.witnessed { Troolean::True } else { Troolean::Inconclusive };
        Ok(StepResult::one(vec![Event::Troolean(v)]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(TrooleanSometime::new())
    }
}

/// One-event shift: the verdict at each position is the value of the
/// next input. Emits nothing for the first event.
#[derive(Debug, Default)]
pub struct TrooleanAfter {
    started: bool,
}

impl TrooleanAfter {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Processor for TrooleanAfter {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let v = truth(&front[0])?;
        if !self.started {
            self.started = true;
            return Ok(StepResult::none());
        }
        Ok(StepResult::one(vec![Event::Troolean(v)]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(TrooleanAfter::new())
    }
}

/// Prefix verdict of `a U b` over synchronized operand streams:
/// TRUE once b holds with a holding since the start, FALSE once both
/// fail, INCONCLUSIVE otherwise. Verdicts never retract.
#[derive(Debug, Default)]
pub struct TrooleanUpTo {
    verdict: Option<bool>,
}

impl TrooleanUpTo {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Processor for TrooleanUpTo {
    fn input_arity(&self) -> usize {
        2
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let a = truth(&front[0])?;
        let b = truth(&front[1])?;
        if self.verdict.is_none() {
            if b == Troolean::True {
                self.verdict = Some(true);
            } else if a == Troolean::False {
                self.verdict = Some(false);
            }
        }
        let v = match self.verdict {
            Some(true) => Troolean::True,
            Some(false) => Troolean::False,
            None => Troolean::Inconclusive,
        };
        Ok(StepResult::one(vec![Event::Troolean(v)]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(TrooleanUpTo::new())
    }
}

/// Definitive two-valued G: position i's verdict is FALSE as soon as
/// a later-or-equal input is false, TRUE at end of trace otherwise.
/// Outputs lag inputs until the verdict is known.
#[derive(Debug, Default)]
pub struct BooleanGlobally {
    pending: usize,
}

impl BooleanGlobally {
    pub fn new() -> Self {
        Self::default()
    }
}

fn bools(v: bool, n: usize) -> StepResult {
    StepResult {
        fronts: std::iter::repeat_with(|| vec![Event::Bool(v)]).take(n).collect(),
        halt: false,
    }
}

impl Processor for BooleanGlobally {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        match truth(&front[0])? {
            Troolean::False => {
                let n = self.pending + 1;
                self.pending = 0;
                Ok(bools(false, n))
            }
            _ => {
                self.pending += 1;
                Ok(StepResult::none())
            }
        }
    }

    fn flush(&mut self) -> Result<StepResult, EngineError> {
        let n = self.pending;
        self.pending = 0;
        Ok(bools(true, n))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(BooleanGlobally::new())
    }
}

/// Definitive two-valued F: TRUE for every open position as soon as a
/// true input arrives, FALSE at end of trace for the rest.
#[derive(Debug, Default)]
pub struct BooleanEventually {
    pending: usize,
}

impl BooleanEventually {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Processor for BooleanEventually {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        match truth(&front[0])? {
            Troolean::True => {
                let n = self.pending + 1;
                self.pending = 0;
                Ok(bools(true, n))
            }
            _ => {
                self.pending += 1;
                Ok(StepResult::none())
            }
        }
    }

    fn flush(&mut self) -> Result<StepResult, EngineError> {
        let n = self.pending;
        self.pending = 0;
        Ok(bools(false, n))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(BooleanEventually::new())
    }
}

/// Two-valued X is observationally a one-event shift.
pub fn boolean_next() -> Box<dyn Processor> {
    Box::new(Trim::new(1))
}

/// Definitive two-valued `a U b` over synchronized operand streams.
/// Open positions (a true, b false so far) share their fate: resolved
/// TRUE by a b, FALSE by a front where both fail or at end of trace.
#[derive(Debug, Default)]
pub struct BooleanUntil {
    pending: usize,
}

impl BooleanUntil {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Processor for BooleanUntil {
    fn input_arity(&self) -> usize {
        2
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let a = truth(&front[0])?;
        let b = truth(&front[1])?;
        if b == Troolean::True {
            let n = self.pending + 1;
            self.pending = 0;
            Ok(bools(true, n))
        } else if a == Troolean::False {
            let n = self.pending + 1;
            self.pending = 0;
            Ok(bools(false, n))
        } else {
            self.pending += 1;
            Ok(StepResult::none())
        }
    }

    fn flush(&mut self) -> Result<StepResult, EngineError> {
        let n = self.pending;
        self.pending = 0;
        Ok(bools(false, n))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(BooleanUntil::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantKind {
    ForAll,
    Exists,
}

/// First-order quantifier: one copy of the body per domain value, the
/// variable bound through the context. New values spawn new copies at
/// their first occurrence; every event feeds every copy. The output is
/// the three-valued conjunction or disjunction of the copies' latest
/// verdicts.
pub struct Quantifier {
    kind: QuantKind,
    var: String,
    domain_fn: Function,
    proto: Runner,
    instances: Vec<(Event, Runner, Option<Troolean>)>,
    ctx: Context,
}

impl Quantifier {
    pub fn new(kind: QuantKind, var: &str, domain_fn: Function, proto: Runner) -> Self {
        Quantifier {
            kind,
            var: var.to_string(),
            domain_fn,
            proto,
            instances: Vec::new(),
            ctx: Context::new(),
        }
    }
}

impl Processor for Quantifier {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let domain = match self.domain_fn.eval(front, &self.ctx)? {
            Event::Collection(vs) => vs,
            other => {
                return Err(EngineError::EventType(format!(
                    "quantifier domain must be a collection, got {}",
                    other
                )))
            }
        };
        for v in domain {
            if !self.instances.iter().any(|(k, _, _)| *k == v) {
                let mut r = self.proto.duplicate();
                r.set_context(&self.var, v.clone());
                self.instances.push((v, r, None));
            }
        }
        for (_, r, last) in &mut self.instances {
            for out in r.feed(&front[0])? {
                *last = Some(truth(&out)?);
            }
        }
        let mut acc = match self.kind {
            QuantKind::ForAll => Troolean::True,
            QuantKind::Exists => Troolean::False,
        };
        for (_, _, last) in &self.instances {
            let v = last.unwrap_or(Troolean::Inconclusive);
            acc = match self.kind {
                QuantKind::ForAll => acc.and(v),
                QuantKind::Exists => acc.or(v),
            };
        }
        Ok(StepResult::one(vec![Event::Troolean(acc)]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        let mut d = Quantifier::new(
            self.kind,
            &self.var,
            self.domain_fn.clone(),
            self.proto.duplicate(),
        );
        d.ctx = self.ctx.clone();
        Box::new(d)
    }

    fn set_context(&mut self, name: &str, value: Event) {
        self.ctx.insert(name.to_string(), value.clone());
        for (_, r, _) in &mut self.instances {
            r.set_context(name, value.clone());
        }
        self.proto.set_context(name, value);
    }
}

fn unary_ltl(
    make: impl Fn() -> Box<dyn Processor> + 'static,
) -> Box<dyn Fn(&mut Vec<Artifact>, usize) -> Result<Artifact, EngineError>> {
    Box::new(move |stack, _| {
        pop_token(stack)?;
        let spec = pop_proc(stack)?;
        pop_token(stack)?;
        pop_token(stack)?;
        Ok(Artifact::Proc(spec.then(make())?))
    })
}

fn binary_ltl(
    make: impl Fn() -> Box<dyn Processor> + 'static,
) -> Box<dyn Fn(&mut Vec<Artifact>, usize) -> Result<Artifact, EngineError>> {
    Box::new(move |stack, _| {
        pop_token(stack)?;
        let right = pop_proc(stack)?;
        pop_token(stack)?;
        pop_token(stack)?;
        pop_token(stack)?;
        let left = pop_proc(stack)?;
        pop_token(stack)?;
        let mut c = Composer::new();
        let op = c.graph.add(make());
        let l = c.add_spec(left);
        let r = c.add_spec(right);
        c.graph.connect(l, 0, op, 0)?;
        c.graph.connect(r, 0, op, 1)?;
        c.finish(op, 0)
        .map(Artifact::Proc)
    })
}

/// Installs the palette's grammar rules and builders. The grammar's
/// G/F/X/U forms build the three-valued monitors; the two-valued ones
/// are available programmatically.
pub fn install(itp: &mut Interpreter) -> Result<(), EngineError> {
    itp.grammar_mut()
        .load_text(LTL_GRAMMAR)
        .map_err(|e| EngineError::Runtime(e.to_string()))?;
    itp.register_association(
        "troolean",
        Box::new(|stack, _| {
            let v = match pop_token(stack)?.as_str() {
                "TOP" => Troolean::True,
                "BOT" => Troolean::False,
                _ => Troolean::Inconclusive,
            };
            Ok(Artifact::Event(Event::Troolean(v)))
        }),
    );
    itp.register_association("globally", unary_ltl(|| Box::new(TrooleanAlways::new())));
    itp.register_association("eventually", unary_ltl(|| Box::new(TrooleanSometime::new())));
    itp.register_association("next", unary_ltl(|| Box::new(TrooleanAfter::new())));
    itp.register_association("until", binary_ltl(|| Box::new(TrooleanUpTo::new())));
    itp.register_association(
        "ltl-not",
        Box::new(|stack, _| {
            pop_token(stack)?;
            let spec = pop_proc(stack)?;
            pop_token(stack)?;
            pop_token(stack)?;
            let f = Function::Apply { op: Op::Not, args: vec![Function::Arg(0)] };
            Ok(Artifact::Proc(spec.then(Box::new(FunctionProcessor::new(f, 1)))?))
        }),
    );
    itp.register_association("ltl-and", binary_connective(Op::And));
    itp.register_association("ltl-or", binary_connective(Op::Or));
    Ok(())
}

fn binary_connective(
    op: Op,
) -> Box<dyn Fn(&mut Vec<Artifact>, usize) -> Result<Artifact, EngineError>> {
    Box::new(move |stack, _| {
        pop_token(stack)?;
        let right = pop_proc(stack)?;
        pop_token(stack)?;
        pop_token(stack)?;
        pop_token(stack)?;
        let left = pop_proc(stack)?;
        pop_token(stack)?;
        let f = Function::binary(op, Function::Arg(0), Function::Arg(1));
        let mut c = Composer::new();
        let node = c.graph.add(Box::new(FunctionProcessor::new(f, 2)));
        let l = c.add_spec(left);
        let r = c.add_spec(right);
        c.graph.connect(l, 0, node, 0)?;
        c.graph.connect(r, 0, node, 1)?;
        c.finish(node, 0).map(Artifact::Proc)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basic::Fork;
    use crate::event::Event;
    use crate::trace_ops::{Filter, Freeze};

    fn feed(p: Box<dyn Processor>, input: &[Event]) -> Vec<Event> {
        let mut r = Runner::new(p);
        let mut out = Vec::new();
        for e in input {
            out.extend(r.feed(e).unwrap());
        }
        out.extend(r.finish().unwrap());
        out
    }

    fn trools(s: &str) -> Vec<Event> {
        s.chars()
            .map(|c| {
                Event::Troolean(match c {
                    'T' => Troolean::True,
                    'F' => Troolean::False,
                    _ => Troolean::Inconclusive,
                })
            })
            .collect()
    }

    fn bools_in(s: &str) -> Vec<Event> {
        s.chars().map(|c| Event::Bool(c == 'T')).collect()
    }

    #[test]
    fn always_is_terminal_on_first_falsification() {
        assert_eq!(
            feed(Box::new(TrooleanAlways::new()), &bools_in("TTFT")),
            trools("??FF")
        );
    }

    #[test]
    fn sometime_stays_inconclusive_without_witness() {
        assert_eq!(
            feed(Box::new(TrooleanSometime::new()), &bools_in("FFF")),
            trools("???")
        );
        assert_eq!(
            feed(Box::new(TrooleanSometime::new()), &bools_in("FFT")),
            trools("??T")
        );
    }

    #[test]
    fn eventually_followed_by_verdict_stream() {
        // property: an a at the start is eventually followed by a b.
        // Encoded as freeze(not(e=a)) OR sometime(e=b) over a,c,c,b.
        let eq = |s: &str| {
            Function::binary(Op::Eq, Function::Arg(0), Function::Const(Event::text(s)))
        };
        let mut g = crate::graph::Graph::new();
        let fork = g.add(Box::new(Fork::new(2)));
        let not_a = g.add(Box::new(FunctionProcessor::new(
            Function::Apply { op: Op::Not, args: vec![eq("a")] },
            1,
        )));
        let frz = g.add(Box::new(Freeze::new()));
        let is_b = g.add(Box::new(FunctionProcessor::new(eq("b"), 1)));
        let sometime = g.add(Box::new(TrooleanSometime::new()));
        let or = g.add(Box::new(FunctionProcessor::new(
            Function::binary(Op::Or, Function::Arg(0), Function::Arg(1)),
            2,
        )));
        g.connect(fork, 0, not_a, 0).unwrap();
        g.connect(not_a, 0, frz, 0).unwrap();
        g.connect(frz, 0, or, 0).unwrap();
        g.connect(fork, 1, is_b, 0).unwrap();
        g.connect(is_b, 0, sometime, 0).unwrap();
        g.connect(sometime, 0, or, 1).unwrap();
        let port = g.add_input_port();
        g.connect_input(port, fork, 0).unwrap();
        g.add_output_port(or, 0).unwrap();
        for s in ["a", "c", "c", "b"] {
            g.push(0, Event::text(s)).unwrap();
        }
        let mut out = Vec::new();
        while let Some(e) = g.pop_output(0) {
            out.push(e);
        }
        assert_eq!(out, trools("???T"));
    }

    #[test]
    fn boolean_eventually_releases_everything_at_the_witness() {
        let mut r = Runner::new(Box::new(BooleanEventually::new()));
        assert!(r.feed(&Event::Bool(false)).unwrap().is_empty());
        assert!(r.feed(&Event::Bool(false)).unwrap().is_empty());
        assert!(r.feed(&Event::Bool(false)).unwrap().is_empty());
        assert_eq!(r.feed(&Event::Bool(true)).unwrap(), bools_in("TTTT"));
    }

    #[test]
    fn boolean_globally_resolves_suffixes_backwards() {
        assert_eq!(
            feed(Box::new(BooleanGlobally::new()), &bools_in("TTF")),
            bools_in("FFF")
        );
        assert_eq!(
            feed(Box::new(BooleanGlobally::new()), &bools_in("TT")),
            bools_in("TT")
        );
    }

    #[test]
    fn boolean_next_equals_one_event_shift() {
        assert_eq!(feed(boolean_next(), &bools_in("TFT")), bools_in("FT"));
    }

    #[test]
    fn boolean_until_requires_a_witness() {
        let mut g = crate::graph::Graph::new();
        let u = g.add(Box::new(BooleanUntil::new()));
        let p0 = g.add_input_port();
        let p1 = g.add_input_port();
        g.connect_input(p0, u, 0).unwrap();
        g.connect_input(p1, u, 1).unwrap();
        g.add_output_port(u, 0).unwrap();
        // a = T,T,F  b = F,T,F : a U b is T at 0 and 1, F at 2
        for (a, b) in [(true, false), (true, true), (false, false)] {
            g.push(0, Event::Bool(a)).unwrap();
            g.push(1, Event::Bool(b)).unwrap();
        }
        g.end_input(0).unwrap();
        g.end_input(1).unwrap();
        let mut out = Vec::new();
        while let Some(e) = g.pop_output(0) {
            out.push(e);
        }
        assert_eq!(out, bools_in("TTF"));
    }

    #[test]
    fn quantifier_domains_grow_per_event() {
        // forall x: current event != x, domain = {value of the event}.
        // Seeing 3 then 2: the instance for 3 sees 2 next (3 != 2 ok),
        // but the new instance for 2 sees 2 itself.
        let domain = Function::custom("singleton", |front: &[Event]| {
            Ok(Event::Collection(vec![front[0].clone()]))
        });
        let body = Function::Apply {
            op: Op::Not,
            args: vec![Function::binary(
                Op::Eq,
                Function::Arg(0),
                Function::ContextRead("x".into()),
            )],
        };
        let proto = Runner::new(Box::new(FunctionProcessor::new(body, 1)));
        let q = Quantifier::new(QuantKind::ForAll, "x", domain, proto);
        let out = feed(Box::new(q), &[Event::int(3), Event::int(2)]);
        assert_eq!(out, trools("FF"));
    }

    #[test]
    fn empty_domain_is_vacuous() {
        let domain = Function::custom("empty", |_: &[Event]| Ok(Event::Collection(vec![])));
        let proto = Runner::new(Box::new(crate::basic::Passthrough));
        let fa = Quantifier::new(QuantKind::ForAll, "x", domain.clone(), proto.duplicate());
        let ex = Quantifier::new(QuantKind::Exists, "x", domain, proto);
        assert_eq!(feed(Box::new(fa), &[Event::int(1)]), trools("T"));
        assert_eq!(feed(Box::new(ex), &[Event::int(1)]), trools("F"));
    }

    #[test]
    fn grammar_globally_builds_the_monitor() {
        let mut itp = Interpreter::new();
        install(&mut itp).unwrap();
        let mut g = itp.interpret("G ( INPUT )").unwrap();
        for b in [true, true, false] {
            g.push(0, Event::Bool(b)).unwrap();
        }
        let mut out = Vec::new();
        while let Some(e) = g.pop_output(0) {
            out.push(e);
        }
        assert_eq!(out, trools("??F"));
    }

    #[test]
    fn grammar_connectives_and_constants() {
        let mut itp = Interpreter::new();
        install(&mut itp).unwrap();
        let mut g = itp
            .interpret("( INPUT ) OR ( F ( APPLY CONSTANT BOT WITH (INPUT) ) )")
            .unwrap();
        g.push(0, Event::Bool(false)).unwrap();
        g.push(0, Event::Bool(true)).unwrap();
        let mut out = Vec::new();
        while let Some(e) = g.pop_output(0) {
            out.push(e);
        }
        // false OR inconclusive, true OR inconclusive
        assert_eq!(out, trools("?T"));
    }

    #[test]
    fn filter_by_suffix_verdict_releases_late() {
        // keep the events of a trace whose F-b verdict is true; all
        // four come out together when b arrives.
        let eq_b = Function::binary(Op::Eq, Function::Arg(0), Function::Const(Event::text("b")));
        let mut g = crate::graph::Graph::new();
        let fork = g.add(Box::new(Fork::new(2)));
        let isb = g.add(Box::new(FunctionProcessor::new(eq_b, 1)));
        let ev = g.add(Box::new(BooleanEventually::new()));
        let filter = g.add(Box::new(Filter));
        g.connect(fork, 0, filter, 0).unwrap();
        g.connect(fork, 1, isb, 0).unwrap();
        g.connect(isb, 0, ev, 0).unwrap();
        g.connect(ev, 0, filter, 1).unwrap();
        let port = g.add_input_port();
        g.connect_input(port, fork, 0).unwrap();
        g.add_output_port(filter, 0).unwrap();
        for s in ["a", "c", "c"] {
            g.push(0, Event::text(s)).unwrap();
            assert!(g.pop_output(0).is_none());
        }
        g.push(0, Event::text("b")).unwrap();
        let mut out = Vec::new();
        while let Some(e) = g.pop_output(0) {
            out.push(e);
        }
        assert_eq!(out, vec![
            Event::text("a"),
            Event::text("c"),
            Event::text("c"),
            Event::text("b"),
        ]);
    }
}
