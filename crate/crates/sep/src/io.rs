//! Batch execution of queries over text traces: palette loading,
//! input feeding, and deterministic output rendering.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{EngineError, SepError};
use crate::esql::Interpreter;
use crate::event::Event;
use crate::grammar::ParseTree;
use crate::graph::Graph;
use crate::{ltl, tuples};

#[derive(Debug, Default, Clone)]
pub struct SessionConfig {
    pub query: String,
    pub inputs: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    pub grammar_files: Vec<PathBuf>,
    pub palettes: Vec<String>,
    pub parse_only: bool,
}

/// Builds an interpreter with the requested palettes and grammar
/// extension files installed.
pub fn build_interpreter(cfg: &SessionConfig) -> Result<Interpreter, SepError> {
    let mut itp = Interpreter::new();
    let mut wants_tuples = false;
    let mut wants_ltl = false;
    for p in &cfg.palettes {
        match p.as_str() {
            "tuples" => wants_tuples = true,
            "ltl" => wants_ltl = true,
            // the machine palette has no grammar surface of its own;
            // its guard expressions use the tuple palette
            "fsm" => wants_tuples = true,
            other => {
                return Err(SepError::Engine(EngineError::Runtime(format!(
                    "unknown palette {}",
                    other
                ))))
            }
        }
    }
    if wants_tuples {
        tuples::install(&mut itp)?;
    }
    if wants_ltl {
        ltl::install(&mut itp)?;
    }
    for f in &cfg.grammar_files {
        let text = std::fs::read_to_string(f)?;
        itp.grammar_mut()
            .load_text(&text)
            .map_err(SepError::Parse)?;
    }
    Ok(itp)
}

/// Renders one output event as a text line. Tuples print as CSV rows;
/// the first tuple is preceded by its header so the output is itself
/// a readable trace.
pub fn emit(e: &Event, header_done: &mut bool, w: &mut dyn Write) -> std::io::Result<()> {
    if let Event::Tuple(t) = e {
        if !*header_done {
            writeln!(w, "{}", tuples::tuple_header(t))?;
            *header_done = true;
        }
        return writeln!(w, "{}", tuples::tuple_to_csv_row(t));
    }
    writeln!(w, "{}", e)
}

fn render_tree(t: &ParseTree, depth: usize, out: &mut String) {
    match t {
        ParseTree::Leaf(tok) => {
            out.push_str(&"  ".repeat(depth));
            out.push_str(tok);
            out.push('\n');
        }
        ParseTree::Node { label, children } => {
            out.push_str(&"  ".repeat(depth));
            out.push('<');
            out.push_str(label);
            out.push_str(">\n");
            for c in children {
                render_tree(c, depth + 1, out);
            }
        }
    }
}

/// Turns one trace line into an event: integers and decimals become
/// numbers, TRUE and FALSE become booleans, anything else stays text.
pub fn parse_line(line: &str) -> Event {
    match line.trim() {
        "TRUE" => return Event::Bool(true),
        "FALSE" => return Event::Bool(false),
        t => {
            if let Some(n) = crate::event::Number::parse(t) {
                return Event::Number(n);
            }
        }
    }
    Event::text(line)
}

fn read_lines(path: &Path) -> Result<Vec<String>, SepError> {
    let f = File::open(path)?;
    let mut lines = Vec::new();
    for l in BufReader::new(f).lines() {
        lines.push(l?);
    }
    Ok(lines)
}

/// Feeds the traces through the graph in push mode and drains every
/// output port. A graph with no input ports is driven by pulling its
/// first output until it runs dry.
pub fn execute(
    graph: &mut Graph,
    traces: &[Vec<String>],
    w: &mut dyn Write,
) -> Result<(), SepError> {
    let mut header_done = false;
    let drain = |g: &mut Graph, w: &mut dyn Write, header_done: &mut bool| {
        for port in 0..g.output_count() {
            while let Some(e) = g.pop_output(port) {
                emit(&e, header_done, w).map_err(SepError::Io)?;
            }
        }
        Ok::<(), SepError>(())
    };
    if graph.input_count() == 0 {
        while let Some(e) = graph.pull_hard(0)? {
            emit(&e, &mut header_done, w)?;
        }
        return Ok(());
    }
    if traces.len() < graph.input_count() {
        return Err(SepError::Engine(EngineError::Runtime(format!(
            "query reads {} input streams, {} provided",
            graph.input_count(),
            traces.len()
        ))));
    }
    let longest = traces.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for (port, trace) in traces.iter().enumerate().take(graph.input_count()) {
            if let Some(line) = trace.get(i) {
                graph.push(port, parse_line(line))?;
            }
        }
        drain(graph, w, &mut header_done)?;
    }
    for port in 0..graph.input_count() {
        graph.end_input(port)?;
    }
    drain(graph, w, &mut header_done)?;
    Ok(())
}

/// Runs one session: definitions then at most one query, over the
/// configured inputs. Returns without output if the program only
/// defines.
pub fn run(cfg: &SessionConfig) -> Result<(), SepError> {
    let mut itp = build_interpreter(cfg)?;
    let mut out: Box<dyn Write> = match &cfg.output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    };
    if cfg.parse_only {
        let tree = itp.grammar().parse(&cfg.query)?;
        let mut text = String::new();
        render_tree(&tree, 0, &mut text);
        out.write_all(text.as_bytes())?;
        out.flush()?;
        return Ok(());
    }
    let graph = itp.run_program(&cfg.query)?;
    let Some(mut graph) = graph else {
        return Ok(());
    };
    let mut traces = Vec::new();
    if cfg.inputs.is_empty() && graph.input_count() > 0 {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text)?;
        traces.push(text.lines().map(String::from).collect());
    } else {
        for p in &cfg.inputs {
            traces.push(read_lines(p)?);
        }
    }
    execute(&mut graph, &traces, &mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Number, Troolean, Tuple};

    fn cfg(query: &str) -> SessionConfig {
        SessionConfig {
            query: query.into(),
            palettes: vec!["tuples".into()],
            ..SessionConfig::default()
        }
    }

    #[test]
    fn emit_renders_each_event_kind() {
        let mut buf = Vec::new();
        let mut hd = false;
        let mut t = Tuple::new();
        t.set("a", Event::int(1));
        t.set("b", Event::int(2));
        emit(&Event::Tuple(t.clone()), &mut hd, &mut buf).unwrap();
        emit(&Event::Tuple(t), &mut hd, &mut buf).unwrap();
        emit(&Event::int(6), &mut hd, &mut buf).unwrap();
        emit(&Event::Number(Number::Float(2.5)), &mut hd, &mut buf).unwrap();
        emit(&Event::Troolean(Troolean::Inconclusive), &mut hd, &mut buf).unwrap();
        emit(&Event::Collection(vec![Event::int(2), Event::int(8)]), &mut hd, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "a,b\n1,2\n1,2\n6\n2.5\nINCONCLUSIVE\n[2,8]\n"
        );
    }

    #[test]
    fn run_executes_a_filter_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        let output = dir.path().join("out.csv");
        std::fs::write(&input, "stockSymbol,closingPrice\n1,10\n2,20\n1,30\n").unwrap();
        let mut c = cfg("(THE TUPLES OF INPUT) WHERE stockSymbol = 1");
        c.inputs = vec![input];
        c.output = Some(output.clone());
        run(&c).unwrap();
        assert_eq!(
            std::fs::read_to_string(output).unwrap(),
            "stockSymbol,closingPrice\n1,10\n1,30\n"
        );
    }

    #[test]
    fn output_feeds_back_in_as_a_trace() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let c_file = dir.path().join("c.csv");
        std::fs::write(&a, "s,p\n1,5\n2,6\n1,7\n").unwrap();
        let mut c1 = cfg("(THE TUPLES OF INPUT) WHERE s = 1");
        c1.inputs = vec![a];
        c1.output = Some(b.clone());
        run(&c1).unwrap();
        let mut c2 = cfg("SELECT p + p AS d FROM THE TUPLES OF INPUT");
        c2.inputs = vec![b];
        c2.output = Some(c_file.clone());
        run(&c2).unwrap();
        assert_eq!(std::fs::read_to_string(c_file).unwrap(), "d\n10\n14\n");
    }

    #[test]
    fn definitions_then_query_in_one_program() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        let output = dir.path().join("out.txt");
        std::fs::write(&input, "h\na\nb\nc\n").unwrap();
        let mut c = cfg(
            "WHEN @P IS A PROCESSOR: THE COUNT OF @P IS THE PROCESSOR \
             COMBINE APPLY CONSTANT 1 WITH @P WITH ADDITION. \
             THE COUNT OF THE TUPLES OF INPUT.",
        );
        c.inputs = vec![input];
        c.output = Some(output.clone());
        run(&c).unwrap();
        assert_eq!(std::fs::read_to_string(output).unwrap(), "1\n2\n3\n");
    }

    #[test]
    fn parse_only_prints_a_tree() {
        let dir = tempfile::tempdir().unwrap();
        let output = dir.path().join("tree.txt");
        let mut c = cfg("COMBINE INPUT WITH ADDITION");
        c.parse_only = true;
        c.output = Some(output.clone());
        run(&c).unwrap();
        let text = std::fs::read_to_string(output).unwrap();
        assert!(text.contains("<cumulative>"));
        assert!(text.contains("ADDITION"));
    }

    #[test]
    fn missing_input_stream_is_a_runtime_error() {
        let c = SessionConfig { query: "COMBINE INPUT WITH ADDITION".into(), ..cfg("") };
        let mut itp = build_interpreter(&c).unwrap();
        let mut g = itp.run_program(&c.query).unwrap().unwrap();
        let err = execute(&mut g, &[], &mut Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
