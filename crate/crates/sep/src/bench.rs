//! Synthetic stock-ticker traces and a throughput harness for the
//! seven classic queries S1..S7.
//!
//! Concrete readings of the informally stated queries:
//! - S1 passthrough: every row, verbatim.
//! - S2: rows with stockSymbol 1.
//! - S3: mean closingPrice over each width-5 window of the symbol-1
//!   subsequence.
//! - S4: rows whose price exceeds the mean of the 50 rows before them;
//!   nothing for the first 50 rows.
//! - S5: the first symbol-1 row after a symbol-2 row priced below 2,
//!   when both prices are equal. The symbol-1 row is emitted.
//! - S6: a symbol-2 row priced below 2 that closes a stretch opened by
//!   another such row, during which every symbol-1 row priced above
//!   the opening price. The closing row is emitted and reopens.
//! - S7: over the zipped width-50 mean series of symbol-1 and symbol-2
//!   prices, whether at least 4 of each 5 successive comparisons favor
//!   symbol 1. A stream of booleans.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basic::{Fork, FunctionProcessor};
use crate::error::{EngineError, SepError};
use crate::event::{Event, Number, Tuple};
use crate::fsm::MooreMachine;
use crate::function::{Function, Op};
use crate::graph::Graph;
use crate::processor::Runner;
use crate::trace_ops::{Cumulative, Filter, Trim, Window};
use crate::tuples::TupleReader;

pub const QUERY_IDS: [&str; 7] = ["S1", "S2", "S3", "S4", "S5", "S6", "S7"];

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub query: String,
    pub events: usize,
    pub build_seconds: f64,
    pub seconds: f64,
    pub events_per_second: f64,
}

/// One data row of the synthetic ticker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Row {
    pub timestamp: i64,
    pub symbol: i64,
    pub price: i64,
}

impl Row {
    pub fn tuple(&self) -> Event {
        let mut t = Tuple::new();
        t.set("timestamp", Event::int(self.timestamp));
        t.set("stockSymbol", Event::int(self.symbol));
        t.set("closingPrice", Event::int(self.price));
        Event::Tuple(t)
    }
}

/// Deterministic trace: symbols in {1,2,3}, integer prices in 1..=100
/// so the below-2 pattern triggers occasionally.
pub fn generate_rows(count: usize, seed: u64) -> Vec<Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| Row {
            timestamp: i as i64,
            symbol: rng.gen_range(1..=3),
            price: rng.gen_range(1..=100),
        })
        .collect()
}

pub fn rows_to_csv(rows: &[Row]) -> String {
    let mut s = String::from("timestamp,stockSymbol,closingPrice\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.timestamp, r.symbol, r.price);
    }
    s
}

fn attr(name: &str) -> Function {
    Function::GetAttribute { qualifier: None, name: name.into() }
}

fn int_const(v: i64) -> Function {
    Function::Const(Event::int(v))
}

fn sym_eq(v: i64) -> Function {
    Function::binary(Op::Eq, attr("stockSymbol"), int_const(v))
}

/// Exact-division mean, matching the engine's arithmetic: integral
/// when the sum divides evenly, floating otherwise.
fn mean_event(sum: i64, n: i64) -> Event {
    if sum % n == 0 {
        Event::int(sum / n)
    } else {
        Event::Number(Number::Float(sum as f64 / n as f64))
    }
}

/// Running mean as a 1:1 subgraph, for use as a window body.
fn running_mean() -> Result<Graph, EngineError> {
    crate::basic::average_pipeline()
}

fn filter_by(g: &mut Graph, source: (usize, usize), cond: Function) -> Result<usize, EngineError> {
    let fork = g.add(Box::new(Fork::new(2)));
    let test = g.add(Box::new(FunctionProcessor::new(cond, 1)));
    let filter = g.add(Box::new(Filter));
    g.connect(source.0, source.1, fork, 0)?;
    g.connect(fork, 0, filter, 0)?;
    g.connect(fork, 1, test, 0)?;
    g.connect(test, 0, filter, 1)?;
    Ok(filter)
}

fn reader_graph() -> Result<(Graph, usize), EngineError> {
    let mut g = Graph::new();
    let reader = g.add(Box::new(TupleReader::new()));
    let port = g.add_input_port();
    g.connect_input(port, reader, 0)?;
    Ok((g, reader))
}

fn s5_machine() -> MooreMachine {
    let trigger = Function::binary(
        Op::And,
        sym_eq(2),
        Function::binary(Op::Lt, attr("closingPrice"), int_const(2)),
    );
    let same_price = Function::binary(
        Op::And,
        sym_eq(1),
        Function::binary(Op::Eq, attr("closingPrice"), Function::ContextRead("p".into())),
    );
    let arm = vec![("p".to_string(), attr("closingPrice"))];
    let mut m = MooreMachine::new();
    let wait = m.add_state("wait", None);
    let armed = m.add_state("armed", None);
    let matched = m.add_state("matched", Some(Function::Arg(0)));
    m.add_transition(wait, trigger.clone(), arm.clone(), armed);
    m.add_transition(armed, trigger.clone(), arm.clone(), armed);
    m.add_transition(armed, same_price, vec![], matched);
    m.add_transition(armed, sym_eq(1), vec![], wait);
    m.add_transition(matched, trigger, arm, armed);
    m
}

fn s6_machine() -> MooreMachine {
    let trigger = Function::binary(
        Op::And,
        sym_eq(2),
        Function::binary(Op::Lt, attr("closingPrice"), int_const(2)),
    );
    let sym2_high = Function::binary(
        Op::And,
        sym_eq(2),
        Function::Apply {
            op: Op::Not,
            args: vec![Function::binary(Op::Lt, attr("closingPrice"), int_const(2))],
        },
    );
    let sym1_above = Function::binary(
        Op::And,
        sym_eq(1),
        Function::binary(Op::Gt, attr("closingPrice"), Function::ContextRead("p2".into())),
    );
    let arm = vec![("p2".to_string(), attr("closingPrice"))];
    let mut m = MooreMachine::new();
    let idle = m.add_state("idle", None);
    let inside = m.add_state("inside", None);
    let done = m.add_state("done", Some(Function::Arg(0)));
    m.add_transition(idle, trigger.clone(), arm.clone(), inside);
    for s in [inside, done] {
        m.add_transition(s, trigger.clone(), arm.clone(), done);
        // back to the silent state so a rising row after a close does
        // not re-enter `done` and re-emit
        m.add_transition(s, sym1_above.clone(), vec![], inside);
        m.add_transition(s, sym_eq(1), vec![], idle);
        m.add_transition(s, sym2_high.clone(), vec![], idle);
    }
    m
}

/// Builds the pipeline for one query id, reading raw CSV lines on
/// input port 0.
pub fn build_query(id: &str) -> Result<Graph, SepError> {
    let (mut g, reader) = reader_graph()?;
    match id {
        "S1" => {
            g.add_output_port(reader, 0)?;
        }
        "S2" => {
            let f = filter_by(&mut g, (reader, 0), sym_eq(1))?;
            g.add_output_port(f, 0)?;
        }
        "S3" => {
            let f = filter_by(&mut g, (reader, 0), sym_eq(1))?;
            let price = g.add(Box::new(FunctionProcessor::new(attr("closingPrice"), 1)));
            let win = g.add(Box::new(Window::new(
                Runner::new(Box::new(running_mean()?)),
                5,
            )));
            g.connect(f, 0, price, 0)?;
            g.connect(price, 0, win, 0)?;
            g.add_output_port(win, 0)?;
        }
        "S4" => {
            let fork = g.add(Box::new(Fork::new(2)));
            g.connect(reader, 0, fork, 0)?;
            let trim = g.add(Box::new(Trim::new(50)));
            g.connect(fork, 0, trim, 0)?;
            let price = g.add(Box::new(FunctionProcessor::new(attr("closingPrice"), 1)));
            g.connect(fork, 1, price, 0)?;
            let win = g.add(Box::new(Window::new(
                Runner::new(Box::new(running_mean()?)),
                50,
            )));
            g.connect(price, 0, win, 0)?;
            let fork2 = g.add(Box::new(Fork::new(2)));
            g.connect(trim, 0, fork2, 0)?;
            let guard = g.add(Box::new(FunctionProcessor::new(
                Function::binary(
                    Op::Gt,
                    Function::GetAttribute { qualifier: Some(0), name: "closingPrice".into() },
                    Function::Arg(1),
                ),
                2,
            )));
            let filter = g.add(Box::new(Filter));
            g.connect(fork2, 0, filter, 0)?;
            g.connect(fork2, 1, guard, 0)?;
            g.connect(win, 0, guard, 1)?;
            g.connect(guard, 0, filter, 1)?;
            g.add_output_port(filter, 0)?;
        }
        "S5" => {
            let m = g.add(Box::new(s5_machine().runner()));
            g.connect(reader, 0, m, 0)?;
            g.add_output_port(m, 0)?;
        }
        "S6" => {
            let m = g.add(Box::new(s6_machine().runner()));
            g.connect(reader, 0, m, 0)?;
            g.add_output_port(m, 0)?;
        }
        "S7" => {
            let fork = g.add(Box::new(Fork::new(2)));
            g.connect(reader, 0, fork, 0)?;
            let mean_branch = |g: &mut Graph, out: usize, sym: i64| -> Result<usize, EngineError> {
                let f = filter_by(g, (fork, out), sym_eq(sym))?;
                let price = g.add(Box::new(FunctionProcessor::new(attr("closingPrice"), 1)));
                g.connect(f, 0, price, 0)?;
                let win = g.add(Box::new(Window::new(
                    Runner::new(Box::new(running_mean()?)),
                    50,
                )));
                g.connect(price, 0, win, 0)?;
                Ok(win)
            };
            let m1 = mean_branch(&mut g, 0, 1)?;
            let m2 = mean_branch(&mut g, 1, 2)?;
            let indicator = g.add(Box::new(FunctionProcessor::new(
                Function::custom("gt_indicator", |front: &[Event]| {
                    let a = front[0].as_number().ok_or_else(|| {
                        EngineError::EventType("mean expected".into())
                    })?;
                    let b = front[1].as_number().ok_or_else(|| {
                        EngineError::EventType("mean expected".into())
                    })?;
                    Ok(Event::int((a.as_f64() > b.as_f64()) as i64))
                }),
                2,
            )));
            g.connect(m1, 0, indicator, 0)?;
            g.connect(m2, 0, indicator, 1)?;
            let count = g.add(Box::new(Window::new(
                Runner::new(Box::new(Cumulative::new(
                    Function::binary(Op::Add, Function::Arg(0), Function::Arg(1)),
                    Event::int(0),
                ))),
                5,
            )));
            g.connect(indicator, 0, count, 0)?;
            let verdict = g.add(Box::new(FunctionProcessor::new(
                Function::binary(Op::Gt, Function::Arg(0), int_const(3)),
                1,
            )));
            g.connect(count, 0, verdict, 0)?;
            g.add_output_port(verdict, 0)?;
        }
        other => {
            return Err(SepError::Engine(EngineError::Runtime(format!(
                "unknown query {}",
                other
            ))))
        }
    }
    Ok(g)
}

/// Whole-trace brute-force evaluation of one query, the ground truth
/// the pipelines are checked against.
pub fn reference(id: &str, rows: &[Row]) -> Vec<Event> {
    match id {
        "S1" => rows.iter().map(Row::tuple).collect(),
        "S2" => rows.iter().filter(|r| r.symbol == 1).map(Row::tuple).collect(),
        "S3" => {
            let prices: Vec<i64> =
                rows.iter().filter(|r| r.symbol == 1).map(|r| r.price).collect();
            prices
                .windows(5)
                .map(|w| mean_event(w.iter().sum(), 5))
                .collect()
        }
        "S4" => (50..rows.len())
            .filter(|&i| {
                let sum: i64 = rows[i - 50..i].iter().map(|r| r.price).sum();
                (rows[i].price as f64) > sum as f64 / 50.0
            })
            .map(|i| rows[i].tuple())
            .collect(),
        "S5" => {
            let mut out = Vec::new();
            let mut armed: Option<i64> = None;
            for r in rows {
                if r.symbol == 2 && r.price < 2 {
                    armed = Some(r.price);
                } else if r.symbol == 1 {
                    if let Some(p) = armed.take() {
                        if r.price == p {
                            out.push(r.tuple());
                        }
                    }
                }
            }
            out
        }
        "S6" => {
            let mut out = Vec::new();
            let mut open: Option<i64> = None;
            for r in rows {
                let trigger = r.symbol == 2 && r.price < 2;
                match open {
                    None => {
                        if trigger {
                            open = Some(r.price);
                        }
                    }
                    Some(p2) => {
                        if trigger {
                            out.push(r.tuple());
                            open = Some(r.price);
                        } else if r.symbol == 1 {
                            if r.price <= p2 {
                                open = None;
                            }
                        } else if r.symbol == 2 {
                            open = None;
                        }
                    }
                }
            }
            out
        }
        "S7" => {
            let mean_series = |sym: i64| -> Vec<f64> {
                let prices: Vec<i64> =
                    rows.iter().filter(|r| r.symbol == sym).map(|r| r.price).collect();
                prices
                    .windows(50)
                    .map(|w| w.iter().sum::<i64>() as f64 / 50.0)
                    .collect()
            };
            let a = mean_series(1);
            let b = mean_series(2);
            let flags: Vec<i64> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x > y) as i64)
                .collect();
            flags
                .windows(5)
                .map(|w| Event::Bool(w.iter().sum::<i64>() >= 4))
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Pushes the trace through a query pipeline and collects the output.
pub fn run_query(id: &str, lines: &[String]) -> Result<Vec<Event>, SepError> {
    let mut g = build_query(id)?;
    let mut out = Vec::new();
    for line in lines {
        g.push(0, Event::text(line))?;
        while let Some(e) = g.pop_output(0) {
            out.push(e);
        }
    }
    g.end_input(0)?;
    while let Some(e) = g.pop_output(0) {
        out.push(e);
    }
    Ok(out)
}

/// Checks a query's output against the reference on the given rows.
pub fn check_query(id: &str, rows: &[Row]) -> Result<(), SepError> {
    let csv = rows_to_csv(rows);
    let lines: Vec<String> = csv.lines().map(String::from).collect();
    let got = run_query(id, &lines)?;
    let want = reference(id, rows);
    if got != want {
        return Err(SepError::Engine(EngineError::Runtime(format!(
            "{}: pipeline output diverges from reference ({} vs {} events)",
            id,
            got.len(),
            want.len()
        ))));
    }
    Ok(())
}

/// Verifies each query on a prefix, then times it on the full trace.
pub fn run_suite(
    ids: &[String],
    events: usize,
    seed: u64,
    check_prefix: usize,
) -> Result<Vec<BenchResult>, SepError> {
    let rows = generate_rows(events, seed);
    let csv = rows_to_csv(&rows);
    let lines: Vec<String> = csv.lines().map(String::from).collect();
    let mut results = Vec::new();
    for id in ids {
        let prefix = check_prefix.min(rows.len());
        check_query(id, &rows[..prefix])?;
        let t0 = Instant::now();
        let mut g = build_query(id)?;
        let build_seconds = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        for line in &lines {
            g.push(0, Event::text(line))?;
            while g.pop_output(0).is_some() {}
        }
        g.end_input(0)?;
        while g.pop_output(0).is_some() {}
        let seconds = t1.elapsed().as_secs_f64();
        results.push(BenchResult {
            query: id.clone(),
            events,
            build_seconds,
            seconds,
            events_per_second: events as f64 / seconds,
        });
    }
    Ok(results)
}

/// Formats results as requested: `csv` rows or aligned text, with
/// throughput normalized to the first query.
pub fn report(results: &[BenchResult], format: &str) -> String {
    let base = results.first().map(|r| r.events_per_second).unwrap_or(1.0);
    let mut s = String::new();
    if format == "csv" {
        s.push_str("query,events,build_seconds,seconds,events_per_second,relative\n");
        for r in results {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.0},{:.3}",
                r.query,
                r.events,
                r.build_seconds,
                r.seconds,
                r.events_per_second,
                r.events_per_second / base
            );
        }
    } else {
        for r in results {
            let _ = writeln!(
                s,
                "{}: {} events in {:.3} s ({:.0} events/s, {:.3}x of {}), build {:.4} s",
                r.query,
                r.events,
                r.seconds,
                r.events_per_second,
                r.events_per_second / base,
                results[0].query,
                r.build_seconds
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_generation_is_seed_deterministic() {
        assert_eq!(generate_rows(100, 7), generate_rows(100, 7));
        assert_ne!(generate_rows(100, 7), generate_rows(100, 8));
    }

    #[test]
    fn every_query_matches_its_reference_on_a_small_trace() {
        let rows = generate_rows(600, 42);
        for id in QUERY_IDS {
            check_query(id, &rows).unwrap();
        }
    }

    #[test]
    fn patterns_fire_on_crafted_rows() {
        // force the S5 pattern: symbol 2 priced 1, then symbol 1 at 1
        let rows = vec![
            Row { timestamp: 0, symbol: 2, price: 1 },
            Row { timestamp: 1, symbol: 3, price: 9 },
            Row { timestamp: 2, symbol: 1, price: 1 },
        ];
        assert_eq!(reference("S5", &rows), vec![rows[2].tuple()]);
        check_query("S5", &rows).unwrap();
        // S6: open, one rising symbol-1 row, close
        let rows = vec![
            Row { timestamp: 0, symbol: 2, price: 1 },
            Row { timestamp: 1, symbol: 1, price: 50 },
            Row { timestamp: 2, symbol: 2, price: 0 },
        ];
        assert_eq!(reference("S6", &rows), vec![rows[2].tuple()]);
        check_query("S6", &rows).unwrap();
    }

    #[test]
    fn report_normalizes_to_the_first_query() {
        let results = vec![
            BenchResult {
                query: "S1".into(),
                events: 100,
                build_seconds: 0.0,
                seconds: 1.0,
                events_per_second: 100.0,
            },
            BenchResult {
                query: "S7".into(),
                events: 100,
                build_seconds: 0.0,
                seconds: 2.0,
                events_per_second: 50.0,
            },
        ];
        let csv = report(&results, "csv");
        assert!(csv.contains("S7,100,"));
        assert!(csv.contains(",0.500"));
    }
}
