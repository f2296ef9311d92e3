//! The query language interpreter: the core grammar, builder-stack
//! pipeline construction, collators, placeholders, and user-defined
//! syntactical constructs.

use std::collections::HashMap;

use crate::basic::{ConstantSource, Fork, FunctionProcessor, Passthrough};
use crate::error::{EngineError, ParseError, SepError};
use crate::event::{Event, Number};
use crate::function::{Function, Op};
use crate::grammar::{tokenize, Grammar, ParseTree, Sym};
use crate::graph::Graph;
use crate::processor::{Processor, Runner};
use crate::trace_ops::{CountDecimate, Cumulative, Freeze, Prefix, Slicer, Trim, Window};

const CORE_GRAMMAR: &str = r"
<S> ::= <processor> ;
<processor> ::= <fct-coll> | <fct-cp> | <cumulative> | <p-freeze> | <p-window>
             | <p-decimate> | <p-prefix> | <p-trim> | <p-slicer>
             | <p-input> | <p-placeholder> | <paren-proc> | <p-named> ;
<paren-proc> ::= ( <processor> ) ;
<p-placeholder> ::= * ;
<p-input> ::= INPUT <number> | INPUT ;
<p-named> ::= <var-name> ;
<fct-coll> ::= APPLY <function> <p-collator> ;
<fct-cp> ::= CONSTANT <constant> ;
<cumulative> ::= COMBINE <processor> WITH <fct-name> ;
<p-freeze> ::= FREEZE <processor> ;
<p-trim> ::= TRIM <number> OF <processor> ;
<p-window> ::= GET <processor> FROM <processor> ON A WINDOW OF <number> ;
<p-decimate> ::= EVERY <number> <number-suffix> OF <processor> ;
<number-suffix> ::= ST | ND | RD | TH ;
<p-prefix> ::= THE FIRST <number> OF <processor> ;
<p-slicer> ::= SLICE <processor> WITH <processor> ON <function> ;
<p-collator> ::= WITH <proc-list> ;
<proc-list> ::= <proc-def> , <proc-list> | <proc-def> ;
<proc-def> ::= <proc-def-named> | <proc-def-anonymous> ;
<proc-def-named> ::= <processor> AS <var-name> | ( <processor> ) AS <var-name>
                  | ( <processor> AS <var-name> ) ;
<proc-def-anonymous> ::= ( <processor> ) | <processor> ;
<function> ::= <fct-and> | <fct-or> | <fct-not> | <fct-eq> | <fct-cmp>
            | <fct-arith> | <fct-constant> | <constant> ;
<f-atom> ::= ( <function> ) | <constant> ;
<fct-and> ::= <f-atom> AND <f-atom> ;
<fct-or> ::= <f-atom> OR <f-atom> ;
<fct-not> ::= NOT <f-atom> ;
<fct-eq> ::= <f-atom> = <f-atom> ;
<fct-cmp> ::= <f-atom> < <f-atom> | <f-atom> > <f-atom> ;
<fct-arith> ::= <f-atom> + <f-atom> | <f-atom> - <f-atom>
             | <f-atom> * <f-atom> | <f-atom> / <f-atom> ;
<fct-constant> ::= CONSTANT <constant> ;
<constant> ::= <number> | <boolean> | <map-placeholder> ;
<map-placeholder> ::= <var-name> ;
<fct-name> ::= CONJUNCTION | DISJUNCTION | ADDITION | MULTIPLICATION
            | MAXIMUM | MINIMUM ;
<number> ::= ^\d+(\.\d+)? ;
<boolean> ::= TRUE | FALSE ;
<var-name> ::= ^\$[\w\d]+ ;
";

/// Which outside stream a pipeline fragment's open input stands for.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum PortKey {
    /// A numbered query input (`INPUT n`).
    Input(usize),
    /// The `*` placeholder: the nearest enclosing construct's input.
    Star,
}

/// A built pipeline fragment: a graph with one output port and a key
/// describing each of its input ports.
pub struct PipeSpec {
    pub graph: Graph,
    pub keys: Vec<PortKey>,
}

impl Clone for PipeSpec {
    fn clone(&self) -> Self {
        PipeSpec { graph: self.graph.duplicate_graph(), keys: self.keys.clone() }
    }
}

impl PipeSpec {
    /// A fragment that just relays one outside stream.
    pub fn leaf(key: PortKey) -> PipeSpec {
        let mut g = Graph::new();
        let p = g.add(Box::new(Passthrough));
        let port = g.add_input_port();
        g.connect_input(port, p, 0).expect("fresh graph");
        g.add_output_port(p, 0).expect("fresh graph");
        PipeSpec { graph: g, keys: vec![key] }
    }

    /// A fragment with no inputs wrapping a source processor.
    pub fn source(proc: Box<dyn Processor>) -> Result<PipeSpec, EngineError> {
        let mut g = Graph::new();
        let n = g.add(proc);
        g.add_output_port(n, 0)?;
        Ok(PipeSpec { graph: g, keys: Vec::new() })
    }

    /// Pipes this fragment into a 1:1 processor.
    pub fn then(self, proc: Box<dyn Processor>) -> Result<PipeSpec, EngineError> {
        let mut c = Composer::new();
        let child = c.add_spec(self);
        let w = c.graph.add(proc);
        c.graph.connect(child, 0, w, 0)?;
        c.finish(w, 0)
    }

    /// Collapses a fragment whose only key is `*` into a plain 1:1
    /// processor, for use as a window or slice body.
    pub fn into_body(self) -> Result<Box<dyn Processor>, EngineError> {
        if self.keys.is_empty() {
            return Err(EngineError::Runtime(
                "window or slice body contains no * placeholder".into(),
            ));
        }
        if self.keys.iter().any(|k| *k != PortKey::Star) {
            return Err(EngineError::Runtime(
                "window or slice body may only read the * placeholder".into(),
            ));
        }
        // Star ports were merged during composition: exactly one remains.
        Ok(Box::new(self.graph))
    }

    /// Resolves keys to concrete port indices, producing the final
    /// runnable graph. `*` at top level means INPUT 0.
    pub fn finalize(self) -> Result<Graph, EngineError> {
        let keys = self.keys.clone();
        let mut g = Graph::new();
        let node = g.add(Box::new(self.graph));
        g.add_output_port(node, 0)?;
        let mut wants: Vec<(usize, usize)> = Vec::new();
        for (pipe, key) in keys.iter().enumerate() {
            let idx = match key {
                PortKey::Input(n) => *n,
                PortKey::Star => 0,
            };
            wants.push((idx, pipe));
        }
        let max = wants.iter().map(|(i, _)| *i).max();
        if let Some(max) = max {
            for idx in 0..=max {
                let port = g.add_input_port();
                let members: Vec<usize> =
                    wants.iter().filter(|(i, _)| *i == idx).map(|(_, p)| *p).collect();
                match members.len() {
                    0 => {}
                    1 => g.connect_input(port, node, members[0])?,
                    k => {
                        let f = g.add(Box::new(Fork::new(k)));
                        g.connect_input(port, f, 0)?;
                        for (o, pipe) in members.into_iter().enumerate() {
                            g.connect(f, o, node, pipe)?;
                        }
                    }
                }
            }
        }
        Ok(g)
    }
}

/// Assembles fragments into a bigger one, merging input ports that
/// stand for the same outside stream (same key) behind a fork.
pub struct Composer {
    pub graph: Graph,
    pending: Vec<(PortKey, usize, usize)>,
}

impl Default for Composer {
    fn default() -> Self {
        Composer::new()
    }
}

impl Composer {
    pub fn new() -> Composer {
        Composer { graph: Graph::new(), pending: Vec::new() }
    }

    pub fn add_spec(&mut self, spec: PipeSpec) -> usize {
        let keys = spec.keys.clone();
        let id = self.graph.add(Box::new(spec.graph));
        for (i, k) in keys.into_iter().enumerate() {
            self.pending.push((k, id, i));
        }
        id
    }

    pub fn finish(mut self, out_node: usize, out: usize) -> Result<PipeSpec, EngineError> {
        let mut keys: Vec<PortKey> = self.pending.iter().map(|(k, _, _)| k.clone()).collect();
        keys.sort();
        keys.dedup();
        for key in &keys {
            let members: Vec<(usize, usize)> = self
                .pending
                .iter()
                .filter(|(k, _, _)| k == key)
                .map(|(_, n, j)| (*n, *j))
                .collect();
            let port = self.graph.add_input_port();
            if members.len() == 1 {
                self.graph.connect_input(port, members[0].0, members[0].1)?;
            } else {
                let f = self.graph.add(Box::new(Fork::new(members.len())));
                self.graph.connect_input(port, f, 0)?;
                for (o, (n, j)) in members.into_iter().enumerate() {
                    self.graph.connect(f, o, n, j)?;
                }
            }
        }
        self.graph.add_output_port(out_node, out)?;
        Ok(PipeSpec { graph: self.graph, keys })
    }
}

/// What a parse-tree node leaves on the builder stack.
pub enum Artifact {
    Token(String),
    Event(Event),
    Name(String),
    Func(Function),
    BoundFunc(Option<String>, Function),
    Proc(PipeSpec),
    Bound(Option<String>, PipeSpec),
    List(Vec<Artifact>),
}

impl Artifact {
    fn describe(&self) -> &'static str {
        match self {
            Artifact::Token(_) => "token",
            Artifact::Event(_) => "event",
            Artifact::Name(_) => "name",
            Artifact::Func(_) => "function",
            Artifact::BoundFunc(..) => "named function",
            Artifact::Proc(_) => "processor",
            Artifact::Bound(..) => "named processor",
            Artifact::List(_) => "list",
        }
    }
}

pub type Builder = Box<dyn Fn(&mut Vec<Artifact>, usize) -> Result<Artifact, EngineError>>;

struct Definition {
    /// Hole names in pattern order, with the grammar symbol each must
    /// parse as.
    holes: Vec<(String, String)>,
    template: Vec<String>,
    target: String,
}

/// A language session: grammar, builders and accumulated definitions.
pub struct Interpreter {
    grammar: Grammar,
    builders: HashMap<String, Builder>,
    definitions: HashMap<String, Definition>,
    named: HashMap<String, PipeSpec>,
    def_counter: usize,
}

pub fn pop(stack: &mut Vec<Artifact>) -> Result<Artifact, EngineError> {
    stack
        .pop()
        .ok_or_else(|| EngineError::Runtime("builder stack underflow".into()))
}

pub fn pop_token(stack: &mut Vec<Artifact>) -> Result<String, EngineError> {
    match pop(stack)? {
        Artifact::Token(t) => Ok(t),
        other => Err(stack_shape("token", &other)),
    }
}

/// Turns an artifact into a plain pipeline fragment. A one-element
/// source list (a lone FROM) degrades gracefully to its member.
pub fn artifact_to_proc(a: Artifact) -> Result<PipeSpec, EngineError> {
    match a {
        Artifact::Proc(p) => Ok(p),
        Artifact::Bound(_, p) => Ok(p),
        Artifact::List(mut l) if l.len() == 1 => artifact_to_proc(l.pop().unwrap()),
        other => Err(stack_shape("processor", &other)),
    }
}

pub fn pop_proc(stack: &mut Vec<Artifact>) -> Result<PipeSpec, EngineError> {
    artifact_to_proc(pop(stack)?)
}

pub fn pop_count(stack: &mut Vec<Artifact>) -> Result<usize, EngineError> {
    match pop(stack)? {
        Artifact::Event(Event::Number(Number::Int(i))) if i >= 0 => Ok(i as usize),
        other => Err(stack_shape("whole number", &other)),
    }
}

pub fn stack_shape(wanted: &str, got: &Artifact) -> EngineError {
    EngineError::Runtime(format!(
        "stack-shape error: expected {}, found {}",
        wanted,
        got.describe()
    ))
}

pub fn as_function(a: Artifact) -> Result<Function, EngineError> {
    match a {
        Artifact::Func(f) => Ok(f),
        Artifact::Event(e) => Ok(Function::Const(e)),
        Artifact::Name(n) => Ok(Function::ContextRead(n)),
        other => Err(stack_shape("function", &other)),
    }
}

/// Rewrites `$X` placeholder reads to positional arguments per the
/// collator bindings; an undeclared `$X` is an error.
pub fn bind_placeholders(
    f: &Function,
    names: &HashMap<String, usize>,
) -> Result<Function, EngineError> {
    Ok(match f {
        Function::ContextRead(n) => match names.get(n) {
            Some(i) => Function::Arg(*i),
            None if n.starts_with('$') => {
                return Err(EngineError::Runtime(format!("unbound placeholder {}", n)))
            }
            None => f.clone(),
        },
        Function::Apply { op, args } => Function::Apply {
            op: *op,
            args: args
                .iter()
                .map(|a| bind_placeholders(a, names))
                .collect::<Result<_, _>>()?,
        },
        other => other.clone(),
    })
}

fn cumulative_by_name(name: &str) -> Result<(Function, Event), EngineError> {
    let bin = |op| Function::binary(op, Function::Arg(0), Function::Arg(1));
    Ok(match name {
        "ADDITION" => (bin(Op::Add), Event::int(0)),
        "MULTIPLICATION" => (bin(Op::Mul), Event::int(1)),
        "CONJUNCTION" => (bin(Op::And), Event::Bool(true)),
        "DISJUNCTION" => (bin(Op::Or), Event::Bool(false)),
        "MAXIMUM" => (bin(Op::Max), Event::float(f64::NEG_INFINITY)),
        "MINIMUM" => (bin(Op::Min), Event::float(f64::INFINITY)),
        other => return Err(EngineError::Runtime(format!("unknown function name {}", other))),
    })
}

impl Default for Interpreter {
    fn default() -> Self {
        Interpreter::new()
    }
}

impl Interpreter {
    pub fn new() -> Interpreter {
        let mut grammar = Grammar::new("S");
        grammar.load_text(CORE_GRAMMAR).expect("core grammar is well-formed");
        let mut itp = Interpreter {
            grammar,
            builders: HashMap::new(),
            definitions: HashMap::new(),
            named: HashMap::new(),
            def_counter: 0,
        };
        itp.register_core_builders();
        itp
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn grammar_mut(&mut self) -> &mut Grammar {
        &mut self.grammar
    }

    /// Attaches a builder to a nonterminal: whenever a parse-tree node
    /// with that label completes, the builder consumes its children's
    /// artifacts (one per child, in reverse) and the result is pushed.
    pub fn register_association(&mut self, nonterminal: &str, builder: Builder) {
        self.builders.insert(nonterminal.to_string(), builder);
    }

    /// Binds a name usable as a processor reference in queries.
    pub fn register_named(&mut self, name: &str, spec: PipeSpec) {
        self.named.insert(name.to_string(), spec);
    }

    fn register_core_builders(&mut self) {
        self.register_association(
            "number",
            Box::new(|stack, _| {
                let t = pop_token(stack)?;
                let n = Number::parse(&t)
                    .ok_or_else(|| EngineError::Runtime(format!("bad number {}", t)))?;
                Ok(Artifact::Event(Event::Number(n)))
            }),
        );
        self.register_association(
            "boolean",
            Box::new(|stack, _| {
                let t = pop_token(stack)?;
                Ok(Artifact::Event(Event::Bool(t == "TRUE")))
            }),
        );
        self.register_association(
            "var-name",
            Box::new(|stack, _| Ok(Artifact::Name(pop_token(stack)?))),
        );
        self.register_association(
            "p-placeholder",
            Box::new(|stack, _| {
                pop_token(stack)?;
                Ok(Artifact::Proc(PipeSpec::leaf(PortKey::Star)))
            }),
        );
        self.register_association(
            "p-input",
            Box::new(|stack, n| {
                let idx = if n == 2 { pop_count(stack)? } else { 0 };
                pop_token(stack)?;
                Ok(Artifact::Proc(PipeSpec::leaf(PortKey::Input(idx))))
            }),
        );
        self.register_association(
            "fct-cp",
            Box::new(|stack, _| {
                let e = match pop(stack)? {
                    Artifact::Event(e) => e,
                    other => return Err(stack_shape("constant", &other)),
                };
                pop_token(stack)?;
                Ok(Artifact::Proc(PipeSpec::source(Box::new(ConstantSource::new(e)))?))
            }),
        );
        self.register_association(
            "fct-constant",
            Box::new(|stack, _| {
                let f = as_function(pop(stack)?)?;
                pop_token(stack)?;
                Ok(Artifact::Func(match f {
                    Function::Const(e) => Function::Const(e),
                    other => other,
                }))
            }),
        );
        self.register_association("fct-and", Self::binop_builder(Op::And));
        self.register_association("fct-or", Self::binop_builder(Op::Or));
        self.register_association("fct-eq", Self::binop_builder(Op::Eq));
        self.register_association(
            "fct-not",
            Box::new(|stack, _| {
                let a = as_function(pop(stack)?)?;
                pop_token(stack)?;
                Ok(Artifact::Func(Function::Apply { op: Op::Not, args: vec![a] }))
            }),
        );
        self.register_association(
            "fct-cmp",
            Box::new(|stack, _| {
                let b = as_function(pop(stack)?)?;
                let op = match pop_token(stack)?.as_str() {
                    "<" => Op::Lt,
                    _ => Op::Gt,
                };
                let a = as_function(pop(stack)?)?;
                Ok(Artifact::Func(Function::binary(op, a, b)))
            }),
        );
        self.register_association(
            "fct-arith",
            Box::new(|stack, _| {
                let b = as_function(pop(stack)?)?;
                let op = match pop_token(stack)?.as_str() {
                    "+" => Op::Add,
                    "-" => Op::Sub,
                    "*" => Op::Mul,
                    _ => Op::Div,
                };
                let a = as_function(pop(stack)?)?;
                Ok(Artifact::Func(Function::binary(op, a, b)))
            }),
        );
        self.register_association(
            "cumulative",
            Box::new(|stack, _| {
                let name = pop_token(stack)?;
                pop_token(stack)?;
                let spec = pop_proc(stack)?;
                pop_token(stack)?;
                let (f, seed) = cumulative_by_name(&name)?;
                Ok(Artifact::Proc(spec.then(Box::new(Cumulative::new(f, seed)))?))
            }),
        );
        self.register_association(
            "p-freeze",
            Box::new(|stack, _| {
                let spec = pop_proc(stack)?;
                pop_token(stack)?;
                Ok(Artifact::Proc(spec.then(Box::new(Freeze::new()))?))
            }),
        );
        self.register_association(
            "p-trim",
            Box::new(|stack, _| {
                let spec = pop_proc(stack)?;
                pop_token(stack)?;
                let n = pop_count(stack)?;
                pop_token(stack)?;
                Ok(Artifact::Proc(spec.then(Box::new(Trim::new(n)))?))
            }),
        );
        self.register_association(
            "p-prefix",
            Box::new(|stack, _| {
                let spec = pop_proc(stack)?;
                pop_token(stack)?;
                let n = pop_count(stack)?;
                pop_token(stack)?;
                pop_token(stack)?;
                Ok(Artifact::Proc(spec.then(Box::new(Prefix::new(n)))?))
            }),
        );
        self.register_association(
            "p-decimate",
            Box::new(|stack, _| {
                let spec = pop_proc(stack)?;
                pop_token(stack)?;
                pop_token(stack)?;
                let n = pop_count(stack)?;
                pop_token(stack)?;
                if n == 0 {
                    return Err(EngineError::Runtime("EVERY 0TH is meaningless".into()));
                }
                Ok(Artifact::Proc(spec.then(Box::new(CountDecimate::new(n)))?))
            }),
        );
        self.register_association(
            "p-window",
            Box::new(|stack, _| {
                let n = pop_count(stack)?;
                for _ in 0..4 {
                    pop_token(stack)?;
                }
                let source = pop_proc(stack)?;
                pop_token(stack)?;
                let body = pop_proc(stack)?;
                pop_token(stack)?;
                if n == 0 {
                    return Err(EngineError::Runtime("window of width 0".into()));
                }
                let w = Window::new(Runner::new(body.into_body()?), n);
                Ok(Artifact::Proc(source.then(Box::new(w))?))
            }),
        );
        self.register_association(
            "p-slicer",
            Box::new(|stack, _| {
                let key_fn = as_function(pop(stack)?)?;
                pop_token(stack)?;
                let body = pop_proc(stack)?;
                pop_token(stack)?;
                let source = pop_proc(stack)?;
                pop_token(stack)?;
                let key_fn = bind_placeholders(&key_fn, &HashMap::new())?;
                let s = Slicer::new(key_fn, Runner::new(body.into_body()?));
                Ok(Artifact::Proc(source.then(Box::new(s))?))
            }),
        );
        self.register_association(
            "proc-def-named",
            Box::new(|stack, n| {
                if n == 5 {
                    // ( <processor> AS <var-name> )  or  ( <processor> ) AS <var-name>
                    let last = pop(stack)?;
                    match last {
                        Artifact::Token(_) => {
                            let name = match pop(stack)? {
                                Artifact::Name(s) => s,
                                other => return Err(stack_shape("name", &other)),
                            };
                            pop_token(stack)?;
                            let p = pop_proc(stack)?;
                            pop_token(stack)?;
                            Ok(Artifact::Bound(Some(name), p))
                        }
                        Artifact::Name(name) => {
                            pop_token(stack)?;
                            pop_token(stack)?;
                            let p = pop_proc(stack)?;
                            pop_token(stack)?;
                            Ok(Artifact::Bound(Some(name), p))
                        }
                        other => Err(stack_shape("name or `)`", &other)),
                    }
                } else {
                    let name = match pop(stack)? {
                        Artifact::Name(s) => s,
                        other => return Err(stack_shape("name", &other)),
                    };
                    pop_token(stack)?;
                    let p = pop_proc(stack)?;
                    Ok(Artifact::Bound(Some(name), p))
                }
            }),
        );
        self.register_association(
            "proc-def-anonymous",
            Box::new(|stack, n| {
                if n == 3 {
                    pop_token(stack)?;
                    let p = pop_proc(stack)?;
                    pop_token(stack)?;
                    Ok(Artifact::Bound(None, p))
                } else {
                    Ok(Artifact::Bound(None, pop_proc(stack)?))
                }
            }),
        );
        self.register_association(
            "proc-list",
            Box::new(|stack, n| {
                let mut items = if n == 3 {
                    let rest = match pop(stack)? {
                        Artifact::List(l) => l,
                        other => return Err(stack_shape("list", &other)),
                    };
                    pop_token(stack)?;
                    rest
                } else {
                    Vec::new()
                };
                let head = pop(stack)?;
                let head = match head {
                    Artifact::Bound(..) => head,
                    Artifact::Proc(p) => Artifact::Bound(None, p),
                    other => return Err(stack_shape("processor", &other)),
                };
                items.insert(0, head);
                Ok(Artifact::List(items))
            }),
        );
        self.register_association(
            "fct-coll",
            Box::new(|stack, _| {
                let list = match pop(stack)? {
                    Artifact::List(l) => l,
                    other => return Err(stack_shape("list", &other)),
                };
                let f = as_function(pop(stack)?)?;
                pop_token(stack)?;
                let mut names = HashMap::new();
                let mut specs = Vec::new();
                for (i, item) in list.into_iter().enumerate() {
                    match item {
                        Artifact::Bound(name, p) => {
                            if let Some(name) = name {
                                if names.insert(name.clone(), i).is_some() {
                                    return Err(EngineError::Runtime(format!(
                                        "duplicate collator name {}",
                                        name
                                    )));
                                }
                            }
                            specs.push(p);
                        }
                        other => return Err(stack_shape("processor", &other)),
                    }
                }
                let f = bind_placeholders(&f, &names)?;
                let mut c = Composer::new();
                let arity = specs.len();
                let fp = c.graph.add(Box::new(FunctionProcessor::new(f, arity)));
                for (i, spec) in specs.into_iter().enumerate() {
                    let child = c.add_spec(spec);
                    c.graph.connect(child, 0, fp, i)?;
                }
                Ok(Artifact::Proc(c.finish(fp, 0)?))
            }),
        );
    }

    fn named_spec(&self, name: &str) -> Result<PipeSpec, EngineError> {
        self.named
            .get(name)
            .cloned()
            .ok_or_else(|| EngineError::Runtime(format!("unbound placeholder {}", name)))
    }

    /// Runs the builder pass over a parse tree, leaving one artifact.
    fn build(&self, tree: &ParseTree, stack: &mut Vec<Artifact>) -> Result<(), SepError> {
        match tree {
            ParseTree::Leaf(t) => {
                stack.push(Artifact::Token(t.clone()));
                Ok(())
            }
            ParseTree::Node { label, children } => {
                if let Some(def) = self.definitions.get(label) {
                    return self.expand_definition(def, children, stack);
                }
                // A user-defined case expands to a ready-made artifact of
                // this rule's kind; the rule's own builder must not rerun.
                if let [ParseTree::Node { label: inner, .. }] = children.as_slice() {
                    if self.definitions.contains_key(inner) {
                        return self.build(&children[0], stack);
                    }
                }
                for c in children {
                    self.build(c, stack)?;
                }
                if label == "p-named" {
                    let name = match pop(stack).map_err(EngineError::from)? {
                        Artifact::Name(s) => s,
                        other => return Err(SepError::Engine(stack_shape("name", &other))),
                    };
                    stack.push(Artifact::Proc(self.named_spec(&name)?));
                    return Ok(());
                }
                if let Some(b) = self.builders.get(label.as_str()) {
                    let a = b(stack, children.len())?;
                    stack.push(a);
                } else {
                    self.default_collapse(label, children.len(), stack)?;
                }
                Ok(())
            }
        }
    }

    fn default_collapse(
        &self,
        label: &str,
        n: usize,
        stack: &mut Vec<Artifact>,
    ) -> Result<(), SepError> {
        if n == 1 {
            return Ok(());
        }
        let mut popped = Vec::new();
        for _ in 0..n {
            popped.push(pop(stack).map_err(SepError::Engine)?);
        }
        let mut keep: Vec<Artifact> =
            popped.into_iter().filter(|a| !matches!(a, Artifact::Token(_))).collect();
        if keep.len() == 1 {
            stack.push(keep.pop().unwrap());
            Ok(())
        } else {
            Err(SepError::Engine(EngineError::Runtime(format!(
                "no builder for nonterminal <{}>",
                label
            ))))
        }
    }

    fn expand_definition(
        &self,
        def: &Definition,
        children: &[ParseTree],
        stack: &mut Vec<Artifact>,
    ) -> Result<(), SepError> {
        let mut captured: HashMap<&str, String> = HashMap::new();
        let mut hole = 0;
        for child in children {
            if let ParseTree::Node { .. } = child {
                let (name, symbol) = &def.holes[hole];
                hole += 1;
                let text = child.leaves().join(" ");
                let text = if symbol == "processor" { format!("( {} )", text) } else { text };
                captured.insert(name.as_str(), text);
            }
        }
        let mut expanded: Vec<String> = Vec::new();
        for tok in &def.template {
            match captured.get(tok.as_str()) {
                Some(text) => expanded.push(text.clone()),
                None => expanded.push(tok.clone()),
            }
        }
        let text = expanded.join(" ");
        let tree = self.grammar.parse_with_start(&def.target, &text)?;
        self.build(&tree, stack)
    }

    /// Adds a WHEN-definition (or a parameterless `X IS THE <symbol> Y`).
    /// The grammar is only modified if the template validates.
    pub fn define(&mut self, text: &str) -> Result<(), SepError> {
        let toks = tokenize(text);
        let mut i = 0;
        let mut params: Vec<(String, String)> = Vec::new();
        if toks.first().map(String::as_str) == Some("WHEN") {
            i = 1;
            loop {
                let name = toks.get(i).cloned().ok_or_else(|| ParseError {
                    position: i,
                    message: "definition ends inside WHEN clause".into(),
                })?;
                if !name.starts_with('@') {
                    return Err(ParseError {
                        position: i,
                        message: format!("expected @parameter, found `{}`", name),
                    }
                    .into());
                }
                if toks.get(i + 1).map(String::as_str) != Some("IS")
                    || toks.get(i + 2).map(String::as_str) != Some("A")
                {
                    return Err(ParseError {
                        position: i + 1,
                        message: "expected IS A after parameter".into(),
                    }
                    .into());
                }
                let sym = toks.get(i + 3).cloned().ok_or_else(|| ParseError {
                    position: i + 3,
                    message: "missing grammar symbol".into(),
                })?;
                params.push((name, sym.to_lowercase()));
                i += 4;
                match toks.get(i).map(String::as_str) {
                    Some(",") => i += 1,
                    Some(":") => {
                        i += 1;
                        break;
                    }
                    _ => {
                        return Err(ParseError {
                            position: i,
                            message: "expected `,` or `:` in WHEN clause".into(),
                        }
                        .into())
                    }
                }
            }
        }
        // Pattern: everything up to the first IS (lazy), per the
        // definition grammar's ^.*?(?=IS) capture.
        let mut pattern: Vec<String> = Vec::new();
        while i < toks.len() && toks[i] != "IS" {
            pattern.push(toks[i].clone());
            i += 1;
        }
        if toks.get(i).map(String::as_str) != Some("IS")
            || toks.get(i + 1).map(String::as_str) != Some("THE")
        {
            return Err(ParseError {
                position: i,
                message: "definition needs `IS THE <symbol>`".into(),
            }
            .into());
        }
        let target = toks
            .get(i + 2)
            .cloned()
            .ok_or_else(|| ParseError { position: i + 2, message: "missing target symbol".into() })?
            .to_lowercase();
        let template: Vec<String> = toks[i + 3..].to_vec();
        if pattern.is_empty() {
            return Err(ParseError { position: 0, message: "empty definition pattern".into() }.into());
        }
        if template.is_empty() {
            return Err(ParseError { position: i + 3, message: "empty template".into() }.into());
        }
        if !self.grammar.has_rule(&target) {
            return Err(ParseError {
                position: i + 2,
                message: format!("unknown grammar symbol {}", target),
            }
            .into());
        }
        // Holes, in pattern order.
        let mut holes = Vec::new();
        let mut syms = Vec::new();
        for tok in &pattern {
            if tok.starts_with('@') {
                let (_, sym) = params
                    .iter()
                    .find(|(n, _)| n == tok)
                    .ok_or_else(|| ParseError {
                        position: 0,
                        message: format!("undeclared parameter {}", tok),
                    })?;
                holes.push((tok.clone(), sym.clone()));
                syms.push(Sym::Nt(sym.clone()));
            } else {
                syms.push(Sym::Lit(tok.clone()));
            }
        }
        for tok in &template {
            if tok.starts_with('@') && !params.iter().any(|(n, _)| n == tok) {
                return Err(ParseError {
                    position: 0,
                    message: format!("undeclared parameter {} in template", tok),
                }
                .into());
            }
        }
        // Validate the template against the grammar before committing,
        // substituting an inert parsable stand-in for each hole.
        let dummy = |sym: &str| -> Option<&'static str> {
            match sym {
                "processor" => Some("*"),
                "number" => Some("0"),
                "boolean" => Some("TRUE"),
                "function" => Some("CONSTANT 0"),
                _ => None,
            }
        };
        let mut validatable = true;
        let mut probe: Vec<String> = Vec::new();
        for tok in &template {
            if let Some((_, sym)) = params.iter().find(|(n, _)| n == tok) {
                match dummy(sym) {
                    Some(d) => probe.push(d.to_string()),
                    None => {
                        validatable = false;
                        break;
                    }
                }
            } else {
                probe.push(tok.clone());
            }
        }
        if validatable {
            self.grammar.parse_with_start(&target, &probe.join(" "))?;
        }
        let id = format!("def{}", self.def_counter);
        self.def_counter += 1;
        self.grammar
            .add_rule(&id, syms)
            .expect("nonempty pattern");
        self.grammar.add_case_to_rule(&target, &id);
        self.definitions.insert(id, Definition { holes, template, target });
        Ok(())
    }

    /// Parses and builds a standalone function expression, for guard
    /// and assignment strings outside full queries.
    pub fn build_function(&self, text: &str) -> Result<Function, SepError> {
        let tree = self.grammar.parse_with_start("function", text)?;
        let mut stack = Vec::new();
        self.build(&tree, &mut stack)?;
        if stack.len() != 1 {
            return Err(SepError::Engine(EngineError::Runtime(format!(
                "expression left {} artifacts on the stack",
                stack.len()
            ))));
        }
        Ok(as_function(stack.pop().unwrap())?)
    }

    /// Interprets a single query expression into a runnable graph.
    pub fn interpret(&self, query: &str) -> Result<Graph, SepError> {
        let tree = self.grammar.parse(query)?;
        let mut stack = Vec::new();
        self.build(&tree, &mut stack)?;
        if stack.len() != 1 {
            return Err(SepError::Engine(EngineError::Runtime(format!(
                "query left {} artifacts on the stack",
                stack.len()
            ))));
        }
        Ok(artifact_to_proc(stack.pop().unwrap())?.finalize()?)
    }

    /// Runs a whole program: statements separated by `.`; every
    /// statement but the last must be a definition. Returns the final
    /// query's graph, or None if the program only defines.
    pub fn run_program(&mut self, text: &str) -> Result<Option<Graph>, SepError> {
        let statements = split_statements(text);
        let mut result = None;
        let n = statements.len();
        for (i, stmt) in statements.into_iter().enumerate() {
            if is_definition(&stmt) {
                self.define(&stmt)?;
            } else if i + 1 == n {
                result = Some(self.interpret(&stmt)?);
            } else {
                return Err(SepError::Engine(EngineError::Runtime(
                    "only the final statement may be a query".into(),
                )));
            }
        }
        Ok(result)
    }

    fn binop_builder(op: Op) -> Builder {
        Box::new(move |stack, _| {
            let b = as_function(pop(stack)?)?;
            pop_token(stack)?;
            let a = as_function(pop(stack)?)?;
            Ok(Artifact::Func(Function::binary(op, a, b)))
        })
    }
}

fn is_definition(stmt: &str) -> bool {
    let toks = tokenize(stmt);
    if toks.first().map(String::as_str) == Some("WHEN") {
        return true;
    }
    toks.windows(2).any(|w| w[0] == "IS" && w[1] == "THE")
}

/// Splits program text into statements on `.` followed by whitespace or
/// end of input, outside quotes. Dots inside numbers or qualified names
/// are untouched because they are followed by more of the same token.
pub fn split_statements(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut stmts = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match quote {
            Some(q) => {
                cur.push(c);
                if c == q {
                    quote = None;
                }
            }
            None => {
                if c == '\'' || c == '"' {
                    quote = Some(c);
                    cur.push(c);
                } else if c == '.'
                    && chars.get(i + 1).map(|n| n.is_whitespace()).unwrap_or(true)
                {
                    let s = cur.trim().to_string();
                    if !s.is_empty() {
                        stmts.push(s);
                    }
                    cur.clear();
                } else {
                    cur.push(c);
                }
            }
        }
        i += 1;
    }
    let s = cur.trim().to_string();
    if !s.is_empty() {
        stmts.push(s);
    }
    stmts
}
