//! Elementary processors: sources, function application, forks.

use crate::error::EngineError;
use crate::event::Event;
use crate::function::{Context, Function};
use crate::processor::{Processor, StepResult};

/// Applies a stateless function to every input front; m:1.
pub struct FunctionProcessor {
    func: Function,
    arity: usize,
    ctx: Context,
}

impl FunctionProcessor {
    pub fn new(func: Function, arity: usize) -> Self {
        FunctionProcessor { func, arity, ctx: Context::new() }
    }
}

impl Processor for FunctionProcessor {
    fn input_arity(&self) -> usize {
        self.arity
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        Ok(StepResult::one(vec![self.func.eval(front, &self.ctx)?]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(FunctionProcessor { func: self.func.clone(), arity: self.arity, ctx: self.ctx.clone() })
    }

    fn set_context(&mut self, name: &str, value: Event) {
        self.ctx.insert(name.to_string(), value);
    }
}

/// Emits every input unchanged.
pub struct Passthrough;

impl Processor for Passthrough {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        Ok(StepResult::one(vec![front[0].clone()]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Passthrough)
    }
}

/// Replaces every input with a fixed event, regardless of its content.
pub struct Mutator {
    value: Event,
}

impl Mutator {
    pub fn new(value: Event) -> Self {
        Mutator { value }
    }
}

impl Processor for Mutator {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, _front: &[Event]) -> Result<StepResult, EngineError> {
        Ok(StepResult::one(vec![self.value.clone()]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Mutator { value: self.value.clone() })
    }
}

/// Copies its single input onto n output pipes.
pub struct Fork {
    ways: usize,
}

impl Fork {
    pub fn new(ways: usize) -> Self {
        Fork { ways }
    }
}

impl Processor for Fork {
    fn input_arity(&self) -> usize {
        1
    }

    fn output_arity(&self) -> usize {
        self.ways
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        Ok(StepResult::one(vec![front[0].clone(); self.ways]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Fork { ways: self.ways })
    }
}

/// A source feeding events from a preloaded queue; halts when empty.
pub struct QueueSource {
    events: Vec<Event>,
    next: usize,
}

impl QueueSource {
    pub fn new(events: Vec<Event>) -> Self {
        QueueSource { events, next: 0 }
    }
}

impl Processor for QueueSource {
    fn input_arity(&self) -> usize {
        0
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, _front: &[Event]) -> Result<StepResult, EngineError> {
        if self.next >= self.events.len() {
            return Ok(StepResult::halt());
        }
        let e = self.events[self.next].clone();
        self.next += 1;
        Ok(StepResult::one(vec![e]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(QueueSource { events: self.events.clone(), next: 0 })
    }
}

/// A source emitting the same constant forever, one event per demand.
pub struct ConstantSource {
    value: Event,
}

impl ConstantSource {
    pub fn new(value: Event) -> Self {
        ConstantSource { value }
    }
}

impl Processor for ConstantSource {
    fn input_arity(&self) -> usize {
        0
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, _front: &[Event]) -> Result<StepResult, EngineError> {
        Ok(StepResult::one(vec![self.value.clone()]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(ConstantSource { value: self.value.clone() })
    }
}

/// Keeps event two or three of a 3:1 front depending on the truth of the
/// first: a stream-level if-then-else.
pub struct Dispatcher;

impl Processor for Dispatcher {
    fn input_arity(&self) -> usize {
        3
    }

    fn output_arity(&self) -> usize {
        1
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        let cond = front[0]
            .as_bool()
            .ok_or_else(|| EngineError::EventType(format!("dispatch on non-boolean {}", front[0])))?;
        let pick = if cond { &front[1] } else { &front[2] };
        Ok(StepResult::one(vec![pick.clone()]))
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(Dispatcher)
    }
}

/// The statistical moment of order n of a stream, assembled from the
/// primitives: fork, x^n, running sum, constant 1, running count and a
/// final division. Order 1 is the running mean.
pub fn moment_pipeline(n: u32) -> Result<crate::graph::Graph, EngineError> {
    use crate::function::Op;
    use crate::graph::Graph;
    use crate::trace_ops::Cumulative;

    let adder = Function::binary(Op::Add, Function::Arg(0), Function::Arg(1));
    let mut g = Graph::new();
    let fork = g.add(Box::new(Fork::new(2)));
    let pow = g.add(Box::new(FunctionProcessor::new(
        Function::binary(Op::Pow, Function::Arg(0), Function::Const(Event::int(n as i64))),
        1,
    )));
    let sum = g.add(Box::new(Cumulative::new(adder.clone(), Event::int(0))));
    let one = g.add(Box::new(Mutator::new(Event::int(1))));
    let count = g.add(Box::new(Cumulative::new(adder, Event::int(0))));
    let div = g.add(Box::new(FunctionProcessor::new(
        Function::binary(Op::Div, Function::Arg(0), Function::Arg(1)),
        2,
    )));
    g.connect(fork, 0, pow, 0)?;
    g.connect(pow, 0, sum, 0)?;
    g.connect(fork, 1, one, 0)?;
    g.connect(one, 0, count, 0)?;
    g.connect(sum, 0, div, 0)?;
    g.connect(count, 0, div, 1)?;
    let port = g.add_input_port();
    g.connect_input(port, fork, 0)?;
    g.add_output_port(div, 0)?;
    Ok(g)
}

pub fn average_pipeline() -> Result<crate::graph::Graph, EngineError> {
    moment_pipeline(1)
}
