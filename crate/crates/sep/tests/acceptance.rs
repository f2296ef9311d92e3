//! End-to-end acceptance gate. Each test checks one criterion and
//! prints a single pass/fail line (visible with `--nocapture`).

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sep::basic::{Fork, FunctionProcessor, Passthrough, QueueSource};
use sep::bench;
use sep::error::EngineError;
use sep::esql::{pop_count, pop_proc, pop_token, Artifact, Interpreter};
use sep::event::{Event, Number, Troolean};
use sep::fsm::{auction_event, auction_pipeline, MooreMachine};
use sep::function::{Function, Op};
use sep::graph::Graph;
use sep::ltl::{BooleanEventually, TrooleanSometime};
use sep::processor::{Processor, Runner, StepResult};
use sep::trace_ops::{CountDecimate, Cumulative, Filter, Freeze, Prefix, Slicer, Trim, Window};

macro_rules! ensure {
    ($c:expr, $($m:tt)*) => {
        if !$c {
            return Err(format!($($m)*));
        }
    };
}

macro_rules! ensure_eq {
    ($a:expr, $b:expr, $($m:tt)*) => {{
        let (a, b) = (&$a, &$b);
        if a != b {
            return Err(format!(
                "{}: {:?} != {:?}",
                format!($($m)*),
                a,
                b
            ));
        }
    }};
}

fn report(n: usize, name: &str, r: Result<(), String>) {
    match &r {
        Ok(()) => println!("criterion {} ({}): pass", n, name),
        Err(e) => println!("criterion {} ({}): FAIL: {}", n, name, e),
    }
    if let Err(e) = r {
        panic!("criterion {} failed: {}", n, e);
    }
}

fn ints(v: &[i64]) -> Vec<Event> {
    v.iter().map(|&i| Event::int(i)).collect()
}

fn texts(v: &[&str]) -> Vec<Event> {
    v.iter().map(|s| Event::text(s)).collect()
}

fn adder() -> Function {
    Function::binary(Op::Add, Function::Arg(0), Function::Arg(1))
}

fn cumsum() -> Box<dyn Processor> {
    Box::new(Cumulative::new(adder(), Event::int(0)))
}

/// Pushes one trace into port 0, draining every output port as it goes.
fn run_graph(g: &mut Graph, events: &[Event]) -> Result<Vec<Event>, String> {
    let mut out = Vec::new();
    let drain = |g: &mut Graph, out: &mut Vec<Event>| {
        for p in 0..g.output_count() {
            while let Some(e) = g.pop_output(p) {
                out.push(e);
            }
        }
    };
    for e in events {
        g.push(0, e.clone()).map_err(|e| e.to_string())?;
        drain(g, &mut out);
    }
    for p in 0..g.input_count() {
        g.end_input(p).map_err(|e| e.to_string())?;
    }
    drain(g, &mut out);
    Ok(out)
}

fn run_query(itp: &Interpreter, q: &str, events: &[Event]) -> Result<Vec<Event>, String> {
    let mut g = itp.interpret(q).map_err(|e| e.to_string())?;
    run_graph(&mut g, events)
}

fn run_runner(proc: Box<dyn Processor>, events: &[Event]) -> Result<Vec<Event>, String> {
    let mut r = Runner::new(proc);
    let mut out = Vec::new();
    for e in events {
        out.extend(r.feed(e).map_err(|e| e.to_string())?);
    }
    out.extend(r.finish().map_err(|e| e.to_string())?);
    Ok(out)
}

// 1. Slicing with a stateful per-slice body

#[test]
fn c1_slicer_partial_sums() {
    report(1, "slicer with per-slice running sums", (|| {
        let parity = Function::custom("parity", |front| match front[0].as_number() {
            Some(Number::Int(i)) => Ok(Event::int(i.rem_euclid(2))),
            _ => Err(EngineError::EventType("parity needs an integer".into())),
        });
        let slicer = Slicer::new(parity, Runner::new(cumsum()));
        let out = run_runner(Box::new(slicer), &ints(&[2, 3, 5]))?;
        ensure_eq!(
            out,
            vec![
                Event::Collection(ints(&[2])),
                Event::Collection(ints(&[2, 3])),
                Event::Collection(ints(&[2, 8])),
            ],
            "slice collections"
        );
        Ok(())
    })());
}

// 2. Temporal verdicts, both flavors

#[test]
fn c2_temporal_verdicts() {
    report(2, "prefix verdicts and suffix filtering", (|| {
        // "if the first event is a, some later event is b" over a,c,c,b
        let eq = |s: &str| {
            Function::binary(Op::Eq, Function::Arg(0), Function::Const(Event::text(s)))
        };
        let mut g = Graph::new();
        let port = g.add_input_port();
        let fork = g.add(Box::new(Fork::new(2)));
        let not_a = g.add(Box::new(FunctionProcessor::new(
            Function::Apply { op: Op::Not, args: vec![eq("a")] },
            1,
        )));
        let frz = g.add(Box::new(Freeze::new()));
        let is_b = g.add(Box::new(FunctionProcessor::new(eq("b"), 1)));
        let some = g.add(Box::new(TrooleanSometime::new()));
        let or = g.add(Box::new(FunctionProcessor::new(
            Function::binary(Op::Or, Function::Arg(0), Function::Arg(1)),
            2,
        )));
        g.connect_input(port, fork, 0).map_err(|e| e.to_string())?;
        g.connect(fork, 0, not_a, 0).map_err(|e| e.to_string())?;
        g.connect(not_a, 0, frz, 0).map_err(|e| e.to_string())?;
        g.connect(fork, 1, is_b, 0).map_err(|e| e.to_string())?;
        g.connect(is_b, 0, some, 0).map_err(|e| e.to_string())?;
        g.connect(frz, 0, or, 0).map_err(|e| e.to_string())?;
        g.connect(some, 0, or, 1).map_err(|e| e.to_string())?;
        g.add_output_port(or, 0).map_err(|e| e.to_string())?;
        let out = run_graph(&mut g, &texts(&["a", "c", "c", "b"]))?;
        ensure_eq!(
            out,
            vec![
                Event::Troolean(Troolean::Inconclusive),
                Event::Troolean(Troolean::Inconclusive),
                Event::Troolean(Troolean::Inconclusive),
                Event::Troolean(Troolean::True),
            ],
            "prefix verdict trace"
        );

        // the suffix flavor gates a filter: nothing can leave until
        // the witness shows up, then the whole prefix is released
        let mut g = Graph::new();
        let port = g.add_input_port();
        let fork = g.add(Box::new(Fork::new(2)));
        let is_b = g.add(Box::new(FunctionProcessor::new(eq("b"), 1)));
        let ev = g.add(Box::new(BooleanEventually::new()));
        let filt = g.add(Box::new(Filter));
        g.connect_input(port, fork, 0).map_err(|e| e.to_string())?;
        g.connect(fork, 0, filt, 0).map_err(|e| e.to_string())?;
        g.connect(fork, 1, is_b, 0).map_err(|e| e.to_string())?;
        g.connect(is_b, 0, ev, 0).map_err(|e| e.to_string())?;
        g.connect(ev, 0, filt, 1).map_err(|e| e.to_string())?;
        g.add_output_port(filt, 0).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        for (i, e) in texts(&["a", "c", "c", "b"]).iter().enumerate() {
            g.push(0, e.clone()).map_err(|e| e.to_string())?;
            let mut burst = Vec::new();
            while let Some(e) = g.pop_output(0) {
                burst.push(e);
            }
            if i < 3 {
                ensure!(burst.is_empty(), "released events before the witness");
            }
            out.extend(burst);
        }
        ensure_eq!(out, texts(&["a", "c", "c", "b"]), "release on witness");
        Ok(())
    })());
}

// 3. Fork plus decimation: synchronized fronts and queue growth

#[test]
fn c3_fork_decimate_composition() {
    report(3, "fork/decimate synchronization and queue depth", (|| {
        let k = 1000usize;
        let trace: Vec<i64> = (0..k as i64).map(|i| i * 3 + 1).collect();
        for n in [1usize, 2, 3, 5] {
            let mut g = Graph::new();
            let port = g.add_input_port();
            let fork = g.add(Box::new(Fork::new(2)));
            let dec = g.add(Box::new(CountDecimate::new(n)));
            let add = g.add(Box::new(FunctionProcessor::new(adder(), 2)));
            g.connect_input(port, fork, 0).map_err(|e| e.to_string())?;
            g.connect(fork, 0, add, 0).map_err(|e| e.to_string())?;
            g.connect(fork, 1, dec, 0).map_err(|e| e.to_string())?;
            g.connect(dec, 0, add, 1).map_err(|e| e.to_string())?;
            g.add_output_port(add, 0).map_err(|e| e.to_string())?;
            let mut out = Vec::new();
            for v in &trace {
                g.push(0, Event::int(*v)).map_err(|e| e.to_string())?;
                while let Some(e) = g.pop_output(0) {
                    out.push(e);
                }
            }
            let kept = k.div_ceil(n);
            ensure_eq!(g.queue_len(add, 0), k - kept, "queue depth for n={}", n);
            ensure_eq!(out.len(), kept, "output count for n={}", n);
            for (i, e) in out.iter().enumerate() {
                let want = trace[i] + trace[n * i];
                ensure_eq!(*e, Event::int(want), "out[{}] for n={}", i, n);
            }
        }
        Ok(())
    })());
}

// 4. Push and pull agree on random pipelines

#[derive(Clone)]
enum Stage {
    Trim(usize),
    Prefix(usize),
    Decimate(usize),
    CumSum,
    Freeze,
    Pass,
}

impl Stage {
    fn boxed(&self) -> Box<dyn Processor> {
        match self {
            Stage::Trim(n) => Box::new(Trim::new(*n)),
            Stage::Prefix(n) => Box::new(Prefix::new(*n)),
            Stage::Decimate(n) => Box::new(CountDecimate::new(*n)),
            Stage::CumSum => cumsum(),
            Stage::Freeze => Box::new(Freeze::new()),
            Stage::Pass => Box::new(Passthrough),
        }
    }
}

fn random_stage(rng: &mut ChaCha8Rng) -> Stage {
    match rng.gen_range(0..6) {
        0 => Stage::Trim(rng.gen_range(0..4)),
        1 => Stage::Prefix(rng.gen_range(1..20)),
        2 => Stage::Decimate(rng.gen_range(1..5)),
        3 => Stage::CumSum,
        4 => Stage::Freeze,
        _ => Stage::Pass,
    }
}

#[test]
fn c4_push_equals_pull() {
    report(4, "push and hard pull agree on 200 random pipelines", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..200 {
            let stages: Vec<Stage> =
                (0..rng.gen_range(1..5)).map(|_| random_stage(&mut rng)).collect();
            let trace: Vec<i64> =
                (0..rng.gen_range(0..60)).map(|_| rng.gen_range(-50..50)).collect();

            let mut g = Graph::new();
            let port = g.add_input_port();
            let mut prev = None;
            for s in &stages {
                let n = g.add(s.boxed());
                match prev {
                    None => g.connect_input(port, n, 0).map_err(|e| e.to_string())?,
                    Some(p) => g.connect(p, 0, n, 0).map_err(|e| e.to_string())?,
                }
                prev = Some(n);
            }
            g.add_output_port(prev.unwrap(), 0).map_err(|e| e.to_string())?;
            let pushed = run_graph(&mut g, &ints(&trace))?;

            let mut g = Graph::new();
            let src = g.add(Box::new(QueueSource::new(ints(&trace))));
            let mut prev = src;
            for s in &stages {
                let n = g.add(s.boxed());
                g.connect(prev, 0, n, 0).map_err(|e| e.to_string())?;
                prev = n;
            }
            g.add_output_port(prev, 0).map_err(|e| e.to_string())?;
            let mut pulled = Vec::new();
            while let Some(e) = g.pull_hard(0).map_err(|e| e.to_string())? {
                pulled.push(e);
            }
            ensure_eq!(pushed, pulled, "case {}", case);
        }
        Ok(())
    })());
}

// 5. Operator behavior against brute-force oracles

#[test]
fn c5_operator_oracles() {
    report(5, "trace operators match brute-force oracles", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..100 {
            let trace: Vec<i64> =
                (0..rng.gen_range(1..50)).map(|_| rng.gen_range(-50..50)).collect();
            let evs = ints(&trace);
            let n = rng.gen_range(1..8);
            let w = rng.gen_range(1..6);

            let out = run_runner(Box::new(Trim::new(n)), &evs)?;
            ensure_eq!(out, ints(&trace[n.min(trace.len())..]), "trim case {}", case);

            let out = run_runner(Box::new(Prefix::new(n)), &evs)?;
            ensure_eq!(out, ints(&trace[..n.min(trace.len())]), "prefix case {}", case);

            let out = run_runner(Box::new(CountDecimate::new(n)), &evs)?;
            let oracle: Vec<Event> = trace.iter().step_by(n).map(|v| Event::int(*v)).collect();
            ensure_eq!(out, oracle, "decimate case {}", case);

            let out = run_runner(cumsum(), &evs)?;
            let mut acc = 0i64;
            let oracle: Vec<Event> = trace
                .iter()
                .map(|v| {
                    acc += v;
                    Event::int(acc)
                })
                .collect();
            ensure_eq!(out, oracle, "running sum case {}", case);

            let body = Runner::new(cumsum());
            let out = run_runner(Box::new(Window::new(body, w)), &evs)?;
            let oracle: Vec<Event> =
                trace.windows(w).map(|s| Event::int(s.iter().sum())).collect();
            ensure_eq!(out, oracle, "window case {}", case);

            let out = run_runner(Box::new(Freeze::new()), &evs)?;
            ensure_eq!(out, vec![Event::int(trace[0]); trace.len()], "freeze case {}", case);

            // algebraic laws on the same trace
            let a = rng.gen_range(1..5);
            let b = rng.gen_range(1..5);
            let two = run_runner(Box::new(CountDecimate::new(a)), &evs)
                .and_then(|mid| run_runner(Box::new(CountDecimate::new(b)), &mid))?;
            let one = run_runner(Box::new(CountDecimate::new(a * b)), &evs)?;
            ensure_eq!(two, one, "decimate law case {}", case);

            let two = run_runner(Box::new(Trim::new(a)), &evs)
                .and_then(|mid| run_runner(Box::new(Trim::new(b)), &mid))?;
            let one = run_runner(Box::new(Trim::new(a + b)), &evs)?;
            ensure_eq!(two, one, "trim law case {}", case);
        }
        Ok(())
    })());
}

// 6. The query corpus builds the same pipelines by hand

#[test]
fn c6_query_corpus() {
    report(6, "query corpus matches hand-built pipelines", (|| {
        let itp = Interpreter::new();
        let nums = ints(&[4, -2, 7, 1, 9, 3, -5, 8, 2, 6]);

        let q = run_query(&itp, "COMBINE INPUT WITH ADDITION", &nums)?;
        ensure_eq!(q, run_runner(cumsum(), &nums)?, "running sum query");

        let q = run_query(&itp, "COMBINE INPUT WITH MULTIPLICATION", &nums)?;
        let hand = run_runner(
            Box::new(Cumulative::new(
                Function::binary(Op::Mul, Function::Arg(0), Function::Arg(1)),
                Event::int(1),
            )),
            &nums,
        )?;
        ensure_eq!(q, hand, "running product query");

        let q = run_query(
            &itp,
            "GET (COMBINE * WITH ADDITION) FROM INPUT ON A WINDOW OF 3",
            &nums,
        )?;
        let hand = run_runner(Box::new(Window::new(Runner::new(cumsum()), 3)), &nums)?;
        ensure_eq!(q, hand, "window query");

        let q = run_query(&itp, "EVERY 4TH OF INPUT", &nums)?;
        ensure_eq!(q, run_runner(Box::new(CountDecimate::new(4)), &nums)?, "decimate query");

        let q = run_query(&itp, "THE FIRST 5 OF INPUT", &nums)?;
        ensure_eq!(q, run_runner(Box::new(Prefix::new(5)), &nums)?, "prefix query");

        let q = run_query(&itp, "TRIM 2 OF INPUT", &nums)?;
        ensure_eq!(q, run_runner(Box::new(Trim::new(2)), &nums)?, "trim query");

        let q = run_query(&itp, "FREEZE INPUT", &nums)?;
        ensure_eq!(q, run_runner(Box::new(Freeze::new()), &nums)?, "freeze query");

        // two collated branches of the same stream
        let q = run_query(
            &itp,
            "APPLY $A + $B WITH (TRIM 1 OF INPUT) AS $A, (INPUT) AS $B",
            &nums,
        )?;
        let mut g = Graph::new();
        let port = g.add_input_port();
        let fork = g.add(Box::new(Fork::new(2)));
        let trim = g.add(Box::new(Trim::new(1)));
        let add = g.add(Box::new(FunctionProcessor::new(adder(), 2)));
        g.connect_input(port, fork, 0).map_err(|e| e.to_string())?;
        g.connect(fork, 0, trim, 0).map_err(|e| e.to_string())?;
        g.connect(trim, 0, add, 0).map_err(|e| e.to_string())?;
        g.connect(fork, 1, add, 1).map_err(|e| e.to_string())?;
        g.add_output_port(add, 0).map_err(|e| e.to_string())?;
        ensure_eq!(q, run_graph(&mut g, &nums)?, "collator query");

        let q = run_query(
            &itp,
            "SLICE INPUT WITH (COMBINE * WITH ADDITION) ON CONSTANT 1",
            &nums,
        )?;
        let hand = run_runner(
            Box::new(Slicer::new(Function::Const(Event::int(1)), Runner::new(cumsum()))),
            &nums,
        )?;
        ensure_eq!(q, hand, "slicer query");

        // tuple queries read CSV text lines
        let mut titp = Interpreter::new();
        sep::tuples::install(&mut titp).map_err(|e| e.to_string())?;
        let lines = texts(&["a,b", "1,10", "2,20", "3,30"]);
        let q = run_query(&titp, "SELECT a + b AS c FROM THE TUPLES OF INPUT", &lines)?;
        let want: Vec<Event> = [11i64, 22, 33]
            .iter()
            .map(|v| {
                let mut t = sep::event::Tuple::new();
                t.set("c", Event::int(*v));
                Event::Tuple(t)
            })
            .collect();
        ensure_eq!(q, want, "select query");

        let q = run_query(&titp, "(THE TUPLES OF INPUT) WHERE a > 1", &lines)?;
        ensure_eq!(q.len(), 2, "where query length");
        for (e, a) in q.iter().zip([2i64, 3]) {
            match e {
                Event::Tuple(t) => {
                    ensure_eq!(t.get("a"), Some(&Event::int(a)), "where query row")
                }
                other => return Err(format!("where query produced {}", other)),
            }
        }

        // a definition introduced by the program itself
        let mut ditp = Interpreter::new();
        ditp.define(
            "WHEN @P IS A PROCESSOR: THE COUNT OF @P IS THE PROCESSOR \
             COMBINE APPLY CONSTANT 1 WITH @P WITH ADDITION",
        )
        .map_err(|e| e.to_string())?;
        let q = run_query(&ditp, "THE COUNT OF INPUT", &nums)?;
        ensure_eq!(q, ints(&(1..=nums.len() as i64).collect::<Vec<_>>()), "count query");

        // a temporal query over a verdict stream
        let mut litp = Interpreter::new();
        sep::ltl::install(&mut litp).map_err(|e| e.to_string())?;
        let flags = vec![Event::Bool(true), Event::Bool(true), Event::Bool(false)];
        let q = run_query(&litp, "G ( INPUT )", &flags)?;
        ensure_eq!(
            q,
            vec![
                Event::Troolean(Troolean::Inconclusive),
                Event::Troolean(Troolean::Inconclusive),
                Event::Troolean(Troolean::False),
            ],
            "always query"
        );
        let q = run_query(&litp, "F ( INPUT )", &flags)?;
        ensure_eq!(
            q,
            vec![
                Event::Troolean(Troolean::True),
                Event::Troolean(Troolean::True),
                Event::Troolean(Troolean::True),
            ],
            "sometime query"
        );
        Ok(())
    })());
}

// 7. The language grows at runtime without disturbing what exists

struct Repeater {
    times: usize,
}

impl Processor for Repeater {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        Ok(StepResult {
            fronts: vec![front.to_vec(); self.times],
            halt: false,
        })
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Repeater { times: self.times })
    }
}

#[test]
fn c7_runtime_grammar_extension() {
    report(7, "runtime grammar extension leaves the corpus intact", (|| {
        let corpus = [
            "COMBINE INPUT WITH ADDITION",
            "GET (COMBINE * WITH ADDITION) FROM INPUT ON A WINDOW OF 3",
            "EVERY 4TH OF INPUT",
            "THE FIRST 5 OF INPUT",
            "TRIM 2 OF INPUT",
            "FREEZE INPUT",
        ];
        let mut itp = Interpreter::new();
        let before: Vec<String> = corpus
            .iter()
            .map(|q| itp.grammar().parse(q).map(|t| format!("{:?}", t)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;

        itp.grammar_mut()
            .load_text("<p-repeat> ::= REPEAT ( <processor> ) <number> TIMES ;")
            .map_err(|e| e.to_string())?;
        itp.grammar_mut().add_case_to_rule("processor", "p-repeat");
        itp.register_association(
            "p-repeat",
            Box::new(|stack: &mut Vec<Artifact>, _| {
                pop_token(stack)?; // TIMES
                let n = pop_count(stack)?;
                pop_token(stack)?; // )
                let spec = pop_proc(stack)?;
                pop_token(stack)?; // (
                pop_token(stack)?; // REPEAT
                Ok(Artifact::Proc(spec.then(Box::new(Repeater { times: n }))?))
            }),
        );

        let out = run_query(&itp, "REPEAT ( INPUT ) 3 TIMES", &ints(&[5, 6]))?;
        ensure_eq!(out, ints(&[5, 5, 5, 6, 6, 6]), "repeater output");

        let after: Vec<String> = corpus
            .iter()
            .map(|q| itp.grammar().parse(q).map(|t| format!("{:?}", t)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure_eq!(before, after, "corpus parse trees changed");
        Ok(())
    })());
}

// 8. The stock query suite: correctness on a prefix, then throughput

#[test]
fn c8_stock_suite_throughput() {
    report(8, "stock suite correct and fast enough", (|| {
        let ids: Vec<String> = bench::QUERY_IDS.iter().map(|s| s.to_string()).collect();
        let start = Instant::now();
        let results = bench::run_suite(&ids, 1_000_000, 42, 10_000).map_err(|e| e.to_string())?;
        let total = start.elapsed().as_secs_f64();
        ensure!(total <= 600.0, "suite took {:.1}s", total);
        let s1 = results.iter().find(|r| r.query == "S1").ok_or("no S1")?;
        let s7 = results.iter().find(|r| r.query == "S7").ok_or("no S7")?;
        ensure!(
            s1.events_per_second >= 10_000.0,
            "S1 ran at {:.0} events/s",
            s1.events_per_second
        );
        ensure!(
            s1.events_per_second >= s7.events_per_second,
            "S1 ({:.0}/s) slower than S7 ({:.0}/s)",
            s1.events_per_second,
            s7.events_per_second
        );
        Ok(())
    })());
}

// 9. State machines against a table-driven simulator

#[derive(Clone)]
struct SimTransition {
    from: usize,
    on: Option<i64>, // None = always fires
    to: usize,
}

#[derive(Clone)]
struct SimMachine {
    outputs: Vec<Option<i64>>,
    transitions: Vec<SimTransition>,
}

fn random_machine(rng: &mut ChaCha8Rng) -> SimMachine {
    let states = rng.gen_range(2..5);
    let outputs: Vec<Option<i64>> = (0..states)
        .map(|_| if rng.gen_bool(0.7) { Some(rng.gen_range(-9..10)) } else { None })
        .collect();
    let mut transitions = Vec::new();
    for from in 0..states {
        for _ in 0..rng.gen_range(0..4) {
            transitions.push(SimTransition {
                from,
                on: if rng.gen_bool(0.8) { Some(rng.gen_range(0..3)) } else { None },
                to: rng.gen_range(0..states),
            });
        }
    }
    SimMachine { outputs, transitions }
}

fn simulate(m: &SimMachine, trace: &[i64]) -> Vec<Event> {
    let mut state = 0usize;
    let mut out = Vec::new();
    for sym in trace {
        let fired = m
            .transitions
            .iter()
            .find(|t| t.from == state && t.on.map_or(true, |v| v == *sym));
        if let Some(t) = fired {
            state = t.to;
            if let Some(v) = m.outputs[state] {
                out.push(Event::int(v));
            }
        }
    }
    out
}

fn realize(m: &SimMachine) -> MooreMachine {
    let mut mm = MooreMachine::new();
    for (i, o) in m.outputs.iter().enumerate() {
        mm.add_state(&format!("s{}", i), o.map(|v| Function::Const(Event::int(v))));
    }
    for t in &m.transitions {
        let guard = match t.on {
            Some(v) => Function::binary(Op::Eq, Function::Arg(0), Function::Const(Event::int(v))),
            None => Function::Const(Event::Bool(true)),
        };
        mm.add_transition(t.from, guard, Vec::new(), t.to);
    }
    mm
}

#[test]
fn c9_state_machines() {
    report(9, "state machines agree with a table simulator", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for mi in 0..100 {
            let sim = random_machine(&mut rng);
            let machine = realize(&sim);
            for ti in 0..100 {
                let trace: Vec<i64> =
                    (0..rng.gen_range(0..30)).map(|_| rng.gen_range(0..3)).collect();
                let got = run_runner(Box::new(machine.clone().runner()), &ints(&trace))?;
                let want = simulate(&sim, &trace);
                ensure_eq!(got, want, "machine {} trace {}", mi, ti);
            }
        }

        // replay of the auction log through the sliced pipeline
        let mut g = auction_pipeline().map_err(|e| e.to_string())?;
        let log = vec![
            auction_event("start", Some("vase"), Some(3), Some(15)),
            auction_event("bid", Some("vase"), Some(20), None),
            auction_event("endOfDay", None, None, None),
        ];
        let out = run_graph(&mut g, &log)?;
        ensure_eq!(
            out,
            vec![Event::float(0.0), Event::float(0.0), Event::float(1.0)],
            "auction replay"
        );
        Ok(())
    })());
}
