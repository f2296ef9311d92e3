//! The processor abstraction: stateful stream transducers.

use crate::error::EngineError;
use crate::event::{Event, TypeSet};

/// What one step of computation produced.
///
/// Each front holds exactly one event per output pipe; a step may produce
/// zero, one or several fronts. `halt` signals that the processor will
/// never produce anything again regardless of further input.
#[derive(Debug, Default)]
pub struct StepResult {
    pub fronts: Vec<Vec<Event>>,
    pub halt: bool,
}

impl StepResult {
    pub fn none() -> StepResult {
        StepResult::default()
    }

    pub fn one(front: Vec<Event>) -> StepResult {
        StepResult { fronts: vec![front], halt: false }
    }

    pub fn halt() -> StepResult {
        StepResult { fronts: Vec::new(), halt: true }
    }
}

/// Verdict of a soft pull.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PullStatus {
    /// An event was produced.
    Yes,
    /// Nothing now, but more may come.
    Maybe,
    /// Nothing now or ever; terminal.
    No,
}

/// A stateful m:n event transducer.
///
/// A processor consumes complete input fronts (one event per input pipe,
/// atomically) and produces output fronts. Buffering of partial fronts is
/// the engine's job, not the processor's: `step` is only called once a
/// whole front is available.
pub trait Processor: Send {
    fn input_arity(&self) -> usize;
    fn output_arity(&self) -> usize;

    /// Consumes one input front. Sources (arity 0) are stepped with an
    /// empty slice.
    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError>;

    /// Called once when the input trace ends; a last chance to emit.
    fn flush(&mut self) -> Result<StepResult, EngineError> {
        Ok(StepResult::none())
    }

    /// A fresh copy with initial state. Context values are carried over.
    fn duplicate(&self) -> Box<dyn Processor>;

    /// Binds a context variable, propagating to children if any.
    fn set_context(&mut self, _name: &str, _value: Event) {}

    fn input_types(&self, _index: usize) -> TypeSet {
        TypeSet::ANY
    }

    fn output_types(&self, _index: usize) -> TypeSet {
        TypeSet::ANY
    }
}

/// Drives a 1:1-shaped processor event by event, collecting everything it
/// emits. Used wherever a processor is run as a subroutine (windows,
/// slices) rather than wired into a graph.
pub struct Runner {
    proc: Box<dyn Processor>,
    halted: bool,
}

impl Runner {
    pub fn new(proc: Box<dyn Processor>) -> Runner {
        Runner { proc, halted: false }
    }

    pub fn duplicate(&self) -> Runner {
        Runner { proc: self.proc.duplicate(), halted: false }
    }

    pub fn set_context(&mut self, name: &str, value: Event) {
        self.proc.set_context(name, value);
    }

    /// Feeds one event, returning the events emitted in response.
    pub fn feed(&mut self, e: &Event) -> Result<Vec<Event>, EngineError> {
        if self.halted {
            return Ok(Vec::new());
        }
        let r = self.proc.step(std::slice::from_ref(e))?;
        if r.halt {
            self.halted = true;
        }
        Ok(first_of_each(r.fronts))
    }

    /// Signals end of input, returning any final emissions.
    pub fn finish(&mut self) -> Result<Vec<Event>, EngineError> {
        if self.halted {
            return Ok(Vec::new());
        }
        self.halted = true;
        let r = self.proc.flush()?;
        Ok(first_of_each(r.fronts))
    }
}

fn first_of_each(fronts: Vec<Vec<Event>>) -> Vec<Event> {
    fronts
        .into_iter()
        .filter_map(|mut f| if f.is_empty() { None } else { Some(f.swap_remove(0)) })
        .collect()
}
