//! Trace-shaping processors: accumulation, sampling, windows, slices.

use std::collections::VecDeque;

use crate::error::EngineError;
use crate::event::Event;
use crate::function::{Context, Function};
use crate::processor::{Processor, Runner, StepResult};

/// Folds a binary function over the trace: the i-th output is
/// f(previous output, i-th input), starting from a seed value.
pub struct Cumulative {
    func: Function,
    seed: Event,
    last: Option<Event>,
    ctx: Context,
}

impl Cumulative {
    pub fn new(func: Function, seed: Event) -> Self {
        Cumulative { func, seed, last: None, ctx: Context::new() }
    }
}

impl Processor for Cumulative {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let prev = self.last.clone().unwrap_or_else(|| self.seed.clone());
        let out = self.func.eval(&[prev, front[0].clone()], &self.ctx)?;
        self.last = Some(out.clone());
        Ok(StepResult::one(vec![out]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Cumulative {
            func: self.func.clone(),
            seed: self.seed.clone(),
            last: None,
            ctx: self.ctx.clone(),
        })
    }

    fn set_context(&mut self, name: &str, value: Event) {
        self.ctx.insert(name.to_string(), value);
    }
}

/// Keeps every n-th event, starting with the first.
pub struct CountDecimate {
    interval: usize,
    count: usize,
}

impl CountDecimate {
    pub fn new(interval: usize) -> Self {
        assert!(interval > 0, "decimation interval must be positive");
        CountDecimate { interval, count: 0 }
    }
}

impl Processor for CountDecimate {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let keep = self.count % self.interval == 0;
        self.count += 1;
        Ok(if keep {
            StepResult::one(vec![front[0].clone()])
        } else {
            StepResult::none()
        })
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(CountDecimate::new(self.interval))
    }
}

/// Repeats the first event seen, once per input.
pub struct Freeze {
    first: Option<Event>,
}

impl Freeze {
    pub fn new() -> Self {
        Freeze { first: None }
    }
}

impl Default for Freeze {
    fn default() -> Self {
        Freeze::new()
    }
}

impl Processor for Freeze {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let f = self.first.get_or_insert_with(|| front[0].clone());
        Ok(StepResult::one(vec![f.clone()]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Freeze::new())
    }
}

/// Discards the first n events, passes the rest.
pub struct Trim {
    skip: usize,
    seen: usize,
}

impl Trim {
    pub fn new(skip: usize) -> Self {
        Trim { skip, seen: 0 }
    }
}

impl Processor for Trim {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        if self.seen < self.skip {
            self.seen += 1;
            return Ok(StepResult::none());
        }
        Ok(StepResult::one(vec![front[0].clone()]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Trim::new(self.skip))
    }
}

/// Passes the first n events, then halts for good.
pub struct Prefix {
    keep: usize,
    seen: usize,
}

impl Prefix {
    pub fn new(keep: usize) -> Self {
        Prefix { keep, seen: 0 }
    }
}

impl Processor for Prefix {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        if self.seen >= self.keep {
            return Ok(StepResult::halt());
        }
        self.seen += 1;
        Ok(StepResult {
            fronts: vec![vec![front[0].clone()]],
            halt: self.seen >= self.keep,
        })
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Prefix::new(self.keep))
    }
}

/// 2:1 gate: lets the first event through when the second, a Boolean,
/// is true; otherwise the front vanishes entirely.
pub struct Filter;

impl Processor for Filter {
    fn input_arity(&self) -> usize {
        2
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let keep = front[1]
            .as_bool()
            .ok_or_else(|| EngineError::EventType(format!("filter on non-boolean {}", front[1])))?;
        Ok(if keep {
            StepResult::one(vec![front[0].clone()])
        } else {
            StepResult::none()
        })
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Filter)
    }
}

/// Sliding window of width n over an inner processor. For every complete
/// window, a fresh copy of the inner processor is run on the n events and
/// the n-th thing it outputs becomes this processor's output.
pub struct Window {
    body: Runner,
    width: usize,
    buf: VecDeque<Event>,
}

impl Window {
    pub fn new(body: Runner, width: usize) -> Self {
        assert!(width > 0, "window width must be positive");
        Window { body, width, buf: VecDeque::new() }
    }
}

impl Processor for Window {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        self.buf.push_back(front[0].clone());
        if self.buf.len() < self.width {
            return Ok(StepResult::none());
        }
        let mut run = self.body.duplicate();
        let mut outs = Vec::new();
        for e in &self.buf {
            outs.extend(run.feed(e)?);
        }
        outs.extend(run.finish()?);
        if outs.len() < self.width {
            return Err(EngineError::Runtime(format!(
                "window of {} produced only {} inner outputs",
                self.width,
                outs.len()
            )));
        }
        self.buf.pop_front();
        Ok(StepResult::one(vec![outs.swap_remove(self.width - 1)]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Window { body: self.body.duplicate(), width: self.width, buf: VecDeque::new() })
    }

    fn set_context(&mut self, name: &str, value: Event) {
        self.body.set_context(name, value);
    }
}

/// Demultiplexes a trace into slices keyed by a function of each event.
/// Each key gets its own copy of the inner processor; the reserved `#`
/// key broadcasts the event to every existing slice. After each input
/// the processor emits the collection of last outputs of all slices, in
/// slice creation order; slices that never spoke contribute nothing.
pub struct Slicer {
    key_fn: Function,
    proto: Runner,
    slices: Vec<(Event, Runner, Option<Event>)>,
    ctx: Context,
}

impl Slicer {
    pub fn new(key_fn: Function, proto: Runner) -> Self {
        Slicer { key_fn, proto, slices: Vec::new(), ctx: Context::new() }
    }
}

impl Processor for Slicer {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let key = self.key_fn.eval(front, &self.ctx)?;
        let targets: Vec<usize> = if key == Event::Wildcard {
            (0..self.slices.len()).collect()
        } else {
            let idx = match self.slices.iter().position(|(k, _, _)| *k == key) {
                Some(i) => i,
                None => {
                    self.slices.push((key, self.proto.duplicate(), None));
                    self.slices.len() - 1
                }
            };
            vec![idx]
        };
        for i in targets {
            let outs = self.slices[i].1.feed(&front[0])?;
            if let Some(last) = outs.into_iter().last() {
                self.slices[i].2 = Some(last);
            }
        }
        let coll: Vec<Event> = self
            .slices
            .iter()
            .filter_map(|(_, _, last)| last.clone())
            .collect();
        Ok(StepResult::one(vec![Event::Collection(coll)]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Slicer {
            key_fn: self.key_fn.clone(),
            proto: self.proto.duplicate(),
            slices: Vec::new(),
            ctx: self.ctx.clone(),
        })
    }

    fn set_context(&mut self, name: &str, value: Event) {
        self.ctx.insert(name.to_string(), value.clone());
        self.proto.set_context(name, value.clone());
        for (_, r, _) in &mut self.slices {
            r.set_context(name, value.clone());
        }
    }
}
