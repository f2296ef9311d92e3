//! Tuple events over CSV traces: THE TUPLES OF, FILE sources, and the
//! SELECT / FROM / WHERE query forms.

use std::collections::HashMap;

use crate::basic::{Fork, FunctionProcessor};
use crate::error::EngineError;
use crate::event::{Event, Number, Tuple};
use crate::esql::{
    artifact_to_proc, as_function, pop, pop_proc, pop_token, stack_shape, Artifact, Composer,
    Interpreter, PipeSpec,
};
use crate::function::{Context, Function};
use crate::processor::{Processor, StepResult};
use crate::trace_ops::Filter;

const TUPLES_GRAMMAR: &str = r#"
<processor> ::= <tuples-where> | <tuples-select> | <tuples-from>
             | <tuple-reader> | <file-source> ;
<tuples-where> ::= ( <processor> ) WHERE <function> ;
<tuples-select> ::= SELECT <attribute-expression-list> <processor> ;
<attribute-expression-list> ::= <attribute-expression> , <attribute-expression-list>
                             | <attribute-expression> ;
<attribute-expression> ::= <named-attribute-expression> | <function> ;
<named-attribute-expression> ::= <function> AS <tuple-name> ;
<tuples-from> ::= FROM <tuple-expression-list> ;
<tuple-expression-list> ::= <tuple-expression> , <tuple-expression-list>
                         | <tuple-expression> ;
<tuple-expression> ::= <named-tuple-expression> | <processor> ;
<named-tuple-expression> ::= <processor> AS <tuple-name> ;
<tuple-reader> ::= THE TUPLES OF <processor> ;
<file-source> ::= FILE <quoted-string> ;
<quoted-string> ::= ^'[^']*' | ^"[^"]*" ;
<tuple-name> ::= ^[a-zA-Z][\w-]* ;
<constant> ::= <get-attribute> ;
<get-attribute> ::= <get-attribute-qual> | <get-attribute-unqual> ;
<get-attribute-qual> ::= <tuple-name> . <tuple-name> ;
<get-attribute-unqual> ::= <tuple-name> ;
"#;

/// Splits one CSV line. Fields may be wrapped in double quotes, with
/// `""` standing for a literal quote.
pub fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        if quoted {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    cur.push('"');
                } else {
                    quoted = false;
                }
            } else {
                cur.push(c);
            }
        } else if c == '"' && cur.is_empty() {
            quoted = true;
        } else if c == ',' {
            fields.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    fields.push(cur);
    fields
}

fn csv_quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Renders a tuple's values as one CSV row, in attribute order.
pub fn tuple_to_csv_row(t: &Tuple) -> String {
    t.iter()
        .map(|(_, v)| csv_quote(&v.to_string()))
        .collect::<Vec<_>>()
        .join(",")
}

/// Renders a tuple's attribute names as a CSV header row.
pub fn tuple_header(t: &Tuple) -> String {
    t.iter().map(|(k, _)| csv_quote(k)).collect::<Vec<_>>().join(",")
}

fn infer_field(s: &str) -> Event {
    match Number::parse(s) {
        Some(n) => Event::Number(n),
        None => Event::text(s),
    }
}

/// Turns a stream of text lines into a stream of tuples. The first
/// line is the comma-separated attribute header.
#[derive(Debug)]
pub struct TupleReader {
    header: Option<Vec<String>>,
    row: usize,
}

impl Default for TupleReader {
    fn default() -> Self {
        TupleReader::new()
    }
}

impl TupleReader {
    pub fn new() -> Self {
        TupleReader { header: None, row: 0 }
    }
}

impl Processor for TupleReader {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        // numeric lines arrive pre-parsed when the trace came from a
        // plain text file; render them back before splitting
        let line = match &front[0] {
            Event::Text(s) => s.clone(),
            other => other.to_string(),
        };
        let line = &line;
        self.row += 1;
        let fields = split_csv_line(line);
        match &self.header {
            None => {
                self.header = Some(fields);
                Ok(StepResult::none())
            }
            Some(header) => {
                if fields.len() != header.len() {
                    return Err(EngineError::Runtime(format!(
                        "row {}: {} fields, header has {}",
                        self.row,
                        fields.len(),
                        header.len()
                    )));
                }
                let mut t = Tuple::new();
                for (name, field) in header.iter().zip(fields) {
                    t.set(name, infer_field(&field));
                }
                Ok(StepResult::one(vec![Event::Tuple(t)]))
            }
        }
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(TupleReader::new())
    }
}

/// Evaluates one expression per attribute over each front and emits
/// the resulting tuple.
pub struct SelectProcessor {
    exprs: Vec<(String, Function)>,
    arity: usize,
    ctx: Context,
}

impl SelectProcessor {
    pub fn new(exprs: Vec<(String, Function)>, arity: usize) -> Self {
        SelectProcessor { exprs, arity, ctx: Context::new() }
    }
}

impl Processor for SelectProcessor {
    fn input_arity(&self) -> usize {
        self.arity
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let mut t = Tuple::new();
        for (name, f) in &self.exprs {
            t.set(name, f.eval(front, &self.ctx)?);
        }
        Ok(StepResult::one(vec![Event::Tuple(t)]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        let mut d = SelectProcessor::new(self.exprs.clone(), self.arity);
        d.ctx = self.ctx.clone();
        Box::new(d)
    }

    fn set_context(&mut self, name: &str, value: Event) {
        self.ctx.insert(name.to_string(), value);
    }
}

/// Keeps only the fronts whose condition evaluates to true: a fork,
/// the condition, and a filter.
pub fn where_fragment(source: PipeSpec, cond: Function) -> Result<PipeSpec, EngineError> {
    let mut c = Composer::new();
    let child = c.add_spec(source);
    let fork = c.graph.add(Box::new(Fork::new(2)));
    let test = c.graph.add(Box::new(FunctionProcessor::new(cond, 1)));
    let filter = c.graph.add(Box::new(Filter));
    c.graph.connect(child, 0, fork, 0)?;
    c.graph.connect(fork, 0, filter, 0)?;
    c.graph.connect(fork, 1, test, 0)?;
    c.graph.connect(test, 0, filter, 1)?;
    c.finish(filter, 0)
}

/// Builds the select fragment: sources zipped into one front, one
/// expression per output attribute. `scope` maps FROM names to source
/// positions for qualified attribute references.
pub fn select_fragment(
    exprs: Vec<(Option<String>, Function)>,
    sources: Vec<PipeSpec>,
    scope: &HashMap<String, usize>,
) -> Result<PipeSpec, EngineError> {
    let arity = sources.len().max(1);
    let mut named = Vec::new();
    for (i, (name, f)) in exprs.into_iter().enumerate() {
        let f = resolve_attributes(&f, scope)?;
        let name = match name {
            Some(n) => n,
            None => match &f {
                Function::GetAttribute { name, .. } => name.clone(),
                _ => format!("c{}", i),
            },
        };
        named.push((name, f));
    }
    let mut c = Composer::new();
    let sel = c.graph.add(Box::new(SelectProcessor::new(named, arity)));
    for (i, s) in sources.into_iter().enumerate() {
        let child = c.add_spec(s);
        c.graph.connect(child, 0, sel, i)?;
    }
    c.finish(sel, 0)
}

/// Rewrites `T.a` qualified attribute reads to positional qualifiers
/// per the FROM scope; an unknown qualifier is an error.
pub fn resolve_attributes(
    f: &Function,
    scope: &HashMap<String, usize>,
) -> Result<Function, EngineError> {
    Ok(match f {
        Function::GetAttribute { qualifier: None, name } => match name.split_once('.') {
            Some((q, attr)) => {
                let idx = scope.get(q).ok_or_else(|| {
                    EngineError::Runtime(format!("unresolved trace name {} in {}", q, name))
                })?;
                Function::GetAttribute { qualifier: Some(*idx), name: attr.to_string() }
            }
            None => f.clone(),
        },
        Function::Apply { op, args } => Function::Apply {
            op: *op,
            args: args
                .iter()
                .map(|a| resolve_attributes(a, scope))
                .collect::<Result<_, _>>()?,
        },
        other => other.clone(),
    })
}

fn source_list(a: Artifact) -> Result<Vec<(Option<String>, PipeSpec)>, EngineError> {
    match a {
        Artifact::List(items) => items
            .into_iter()
            .map(|i| match i {
                Artifact::Bound(n, p) => Ok((n, p)),
                other => Ok((None, artifact_to_proc(other)?)),
            })
            .collect(),
        other => Ok(vec![(None, artifact_to_proc(other)?)]),
    }
}

/// Installs the palette's grammar rules and builders.
pub fn install(itp: &mut Interpreter) -> Result<(), EngineError> {
    itp.grammar_mut()
        .load_text(TUPLES_GRAMMAR)
        .map_err(|e| EngineError::Runtime(e.to_string()))?;
    itp.register_association(
        "tuple-name",
        Box::new(|stack, _| Ok(Artifact::Name(pop_token(stack)?))),
    );
    itp.register_association(
        "get-attribute-unqual",
        Box::new(|stack, _| {
            let name = match pop(stack)? {
                Artifact::Name(n) => n,
                other => return Err(stack_shape("name", &other)),
            };
            Ok(Artifact::Func(Function::GetAttribute { qualifier: None, name }))
        }),
    );
    itp.register_association(
        "get-attribute-qual",
        Box::new(|stack, _| {
            let attr = match pop(stack)? {
                Artifact::Name(n) => n,
                other => return Err(stack_shape("name", &other)),
            };
            pop_token(stack)?;
            let q = match pop(stack)? {
                Artifact::Name(n) => n,
                other => return Err(stack_shape("name", &other)),
            };
            // Resolution to a position happens inside SELECT, where the
            // FROM scope is known.
            Ok(Artifact::Func(Function::GetAttribute {
                qualifier: None,
                name: format!("{}.{}", q, attr),
            }))
        }),
    );
    itp.register_association(
        "named-attribute-expression",
        Box::new(|stack, _| {
            let name = match pop(stack)? {
                Artifact::Name(n) => n,
                other => return Err(stack_shape("name", &other)),
            };
            pop_token(stack)?;
            let f = as_function(pop(stack)?)?;
            Ok(Artifact::BoundFunc(Some(name), f))
        }),
    );
    itp.register_association(
        "attribute-expression-list",
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
            let head = match pop(stack)? {
                Artifact::BoundFunc(n, f) => Artifact::BoundFunc(n, f),
                other => Artifact::BoundFunc(None, as_function(other)?),
            };
            items.insert(0, head);
            Ok(Artifact::List(items))
        }),
    );
    itp.register_association(
        "named-tuple-expression",
        Box::new(|stack, _| {
            let name = match pop(stack)? {
                Artifact::Name(n) => n,
                other => return Err(stack_shape("name", &other)),
            };
            pop_token(stack)?;
            let p = pop_proc(stack)?;
            Ok(Artifact::Bound(Some(name), p))
        }),
    );
    itp.register_association(
        "tuple-expression-list",
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
            let head = match pop(stack)? {
                b @ Artifact::Bound(..) => b,
                other => Artifact::Bound(None, artifact_to_proc(other)?),
            };
            items.insert(0, head);
            Ok(Artifact::List(items))
        }),
    );
    itp.register_association(
        "tuples-from",
        Box::new(|stack, _| {
            let list = match pop(stack)? {
                Artifact::List(l) => l,
                other => return Err(stack_shape("list", &other)),
            };
            pop_token(stack)?;
            Ok(Artifact::List(list))
        }),
    );
    itp.register_association(
        "tuples-select",
        Box::new(|stack, _| {
            let sources = source_list(pop(stack)?)?;
            let exprs = match pop(stack)? {
                Artifact::List(l) => l,
                other => return Err(stack_shape("list", &other)),
            };
            pop_token(stack)?;
            let mut scope = HashMap::new();
            let mut specs = Vec::new();
            for (i, (name, p)) in sources.into_iter().enumerate() {
                if let Some(name) = name {
                    if scope.insert(name.clone(), i).is_some() {
                        return Err(EngineError::Runtime(format!(
                            "duplicate trace name {}",
                            name
                        )));
                    }
                }
                specs.push(p);
            }
            let exprs = exprs
                .into_iter()
                .map(|a| match a {
                    Artifact::BoundFunc(n, f) => Ok((n, f)),
                    other => Ok((None, as_function(other)?)),
                })
                .collect::<Result<Vec<_>, EngineError>>()?;
            Ok(Artifact::Proc(select_fragment(exprs, specs, &scope)?))
        }),
    );
    itp.register_association(
        "tuples-where",
        Box::new(|stack, _| {
            let cond = as_function(pop(stack)?)?;
            pop_token(stack)?;
            pop_token(stack)?;
            let source = pop_proc(stack)?;
            pop_token(stack)?;
            Ok(Artifact::Proc(where_fragment(source, cond)?))
        }),
    );
    itp.register_association(
        "tuple-reader",
        Box::new(|stack, _| {
            let source = pop_proc(stack)?;
            for _ in 0..3 {
                pop_token(stack)?;
            }
            Ok(Artifact::Proc(source.then(Box::new(TupleReader::new()))?))
        }),
    );
    itp.register_association(
        "quoted-string",
        Box::new(|stack, _| {
            let t = pop_token(stack)?;
            Ok(Artifact::Event(Event::text(&t[1..t.len() - 1])))
        }),
    );
    itp.register_association(
        "file-source",
        Box::new(|stack, _| {
            let path = match pop(stack)? {
                Artifact::Event(Event::Text(s)) => s,
                other => return Err(stack_shape("file name", &other)),
            };
            pop_token(stack)?;
            let text = std::fs::read_to_string(&path)
                .map_err(|e| EngineError::Runtime(format!("cannot read {}: {}", path, e)))?;
            let lines: Vec<Event> =
                text.lines().map(Event::text).collect();
            Ok(Artifact::Proc(PipeSpec::source(Box::new(
                crate::basic::QueueSource::new(lines),
            ))?))
        }),
    );
    Ok(())
}
