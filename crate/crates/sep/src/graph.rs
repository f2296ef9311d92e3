//! The pipeline graph: processors wired together with buffered pipes.
//!
//! The engine supports two modes of operation on the same structure.
//! Pushing an event into an input port propagates it eagerly: every
//! processor whose input front is complete fires at once and its outputs
//! travel downstream immediately. Pulling from an output port works
//! lazily: the engine walks upstream, fetching just enough events to
//! complete a front, stepping processors on demand. Pipes buffer
//! unconsumed events without bound in both modes; a processor only ever
//! sees complete fronts.

use std::collections::VecDeque;

use crate::error::EngineError;
use crate::event::Event;
use crate::processor::{Processor, PullStatus, StepResult};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Port(usize),
    Node(NodeId, usize),
}

#[derive(Debug, Clone, Copy)]
enum Consumer {
    Node(NodeId, usize),
    Output(usize),
}

struct Node {
    proc: Box<dyn Processor>,
    in_queues: Vec<VecDeque<Event>>,
    in_edges: Vec<Option<Source>>,
    out_buffers: Vec<VecDeque<Event>>,
    consumers: Vec<Option<Consumer>>,
    /// Set once the processor can never emit again: it halted itself, or
    /// an upstream pipe ran dry and `flush` has been given its chance.
    done: bool,
}

struct InputPort {
    consumer: Option<(NodeId, usize)>,
    ended: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PullMode {
    Soft,
    Hard,
}

struct OutputPort {
    source: (NodeId, usize),
    collected: VecDeque<Event>,
    mode: Option<PullMode>,
}

/// Result of a soft pull on a graph output.
#[derive(Debug, Clone, PartialEq)]
pub enum Pulled {
    Event(Event),
    Maybe,
    No,
}

impl Pulled {
    pub fn status(&self) -> PullStatus {
        match self {
            Pulled::Event(_) => PullStatus::Yes,
            Pulled::Maybe => PullStatus::Maybe,
            Pulled::No => PullStatus::No,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Got {
    Event(Event),
    Starved,
    Dead,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<InputPort>,
    outputs: Vec<OutputPort>,
    /// Monotone progress counter; a hard pull that fails to advance it is
    /// stalled and reported as an error instead of spinning.
    work: u64,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn add(&mut self, proc: Box<dyn Processor>) -> NodeId {
        let m = proc.input_arity();
        let n = proc.output_arity();
        self.nodes.push(Node {
            proc,
            in_queues: (0..m).map(|_| VecDeque::new()).collect(),
            in_edges: vec![None; m],
            out_buffers: (0..n).map(|_| VecDeque::new()).collect(),
            consumers: vec![None; n],
            done: false,
        });
        self.nodes.len() - 1
    }

    pub fn add_input_port(&mut self) -> usize {
        self.inputs.push(InputPort { consumer: None, ended: false });
        self.inputs.len() - 1
    }

    pub fn add_output_port(&mut self, node: NodeId, out: usize) -> Result<usize, EngineError> {
        self.check_output_free(node, out)?;
        let p = self.outputs.len();
        self.nodes[node].consumers[out] = Some(Consumer::Output(p));
        self.outputs.push(OutputPort { source: (node, out), collected: VecDeque::new(), mode: None });
        Ok(p)
    }

    fn check_output_free(&self, node: NodeId, out: usize) -> Result<(), EngineError> {
        let n = self
            .nodes
            .get(node)
            .ok_or_else(|| EngineError::BadPipe(format!("no node {}", node)))?;
        if out >= n.consumers.len() {
            return Err(EngineError::BadPipe(format!("node {} has no output {}", node, out)));
        }
        if n.consumers[out].is_some() {
            return Err(EngineError::AlreadyConnected(format!("output {} of node {}", out, node)));
        }
        Ok(())
    }

    fn check_input_free(&self, node: NodeId, inp: usize) -> Result<(), EngineError> {
        let n = self
            .nodes
            .get(node)
            .ok_or_else(|| EngineError::BadPipe(format!("no node {}", node)))?;
        if inp >= n.in_edges.len() {
            return Err(EngineError::BadPipe(format!("node {} has no input {}", node, inp)));
        }
        if n.in_edges[inp].is_some() {
            return Err(EngineError::AlreadyConnected(format!("input {} of node {}", inp, node)));
        }
        Ok(())
    }

    /// True if `from` is reachable by following pipes downstream of `to`.
    fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        if from == to {
            return true;
        }
        let mut stack = vec![to];
        let mut seen = vec![false; self.nodes.len()];
        while let Some(n) = stack.pop() {
            if seen[n] {
                continue;
            }
            seen[n] = true;
            if n == from {
                return true;
            }
            for c in &self.nodes[n].consumers {
                if let Some(Consumer::Node(m, _)) = c {
                    stack.push(*m);
                }
            }
        }
        false
    }

    pub fn connect(
        &mut self,
        from: NodeId,
        out: usize,
        to: NodeId,
        inp: usize,
    ) -> Result<(), EngineError> {
        self.check_output_free(from, out)?;
        self.check_input_free(to, inp)?;
        let ot = self.nodes[from].proc.output_types(out);
        let it = self.nodes[to].proc.input_types(inp);
        if !ot.compatible(&it) {
            return Err(EngineError::TypeMismatch(format!(
                "output {} of node {} into input {} of node {}",
                out, from, inp, to
            )));
        }
        if self.reaches(from, to) {
            return Err(EngineError::Cycle);
        }
        self.nodes[from].consumers[out] = Some(Consumer::Node(to, inp));
        self.nodes[to].in_edges[inp] = Some(Source::Node(from, out));
        Ok(())
    }

    pub fn connect_input(&mut self, port: usize, to: NodeId, inp: usize) -> Result<(), EngineError> {
        if port >= self.inputs.len() {
            return Err(EngineError::BadPipe(format!("no input port {}", port)));
        }
        if self.inputs[port].consumer.is_some() {
            return Err(EngineError::AlreadyConnected(format!("input port {}", port)));
        }
        self.check_input_free(to, inp)?;
        self.inputs[port].consumer = Some((to, inp));
        self.nodes[to].in_edges[inp] = Some(Source::Port(port));
        Ok(())
    }

    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    pub fn queue_len(&self, node: NodeId, inp: usize) -> usize {
        self.nodes[node].in_queues[inp].len()
    }

    /// Pops a front from the node's queues, steps it and buffers the
    /// produced fronts on its output side.
    fn step_node(&mut self, n: NodeId) -> Result<(), EngineError> {
        let front: Vec<Event> = {
            let node = &mut self.nodes[n];
            node.in_queues
                .iter_mut()
                .map(|q| q.pop_front().expect("front must be complete"))
                .collect()
        };
        let r = self.nodes[n].proc.step(&front)?;
        self.absorb(n, r)
    }

    fn finish_node(&mut self, n: NodeId) -> Result<(), EngineError> {
        let r = self.nodes[n].proc.flush()?;
        self.absorb(n, r)?;
        self.nodes[n].done = true;
        self.work += 1;
        Ok(())
    }

    fn absorb(&mut self, n: NodeId, r: StepResult) -> Result<(), EngineError> {
        let arity = self.nodes[n].out_buffers.len();
        for front in r.fronts {
            if front.len() != arity {
                return Err(EngineError::Runtime(format!(
                    "node {} emitted a front of {} events, expected {}",
                    n,
                    front.len(),
                    arity
                )));
            }
            for (o, e) in front.into_iter().enumerate() {
                self.nodes[n].out_buffers[o].push_back(e);
            }
        }
        if r.halt {
            self.nodes[n].done = true;
        }
        self.work += 1;
        Ok(())
    }

    /// Push-mode engine: fires the node while a front can be completed,
    /// then moves buffered outputs to their consumers and recurses.
    /// Inputs whose queue is empty are offered one lazy pull upstream,
    /// which is how source processors participate in push mode.
    fn propagate(&mut self, n: NodeId) -> Result<(), EngineError> {
        'fire: while !self.nodes[n].done && !self.nodes[n].in_edges.is_empty() {
            for j in 0..self.nodes[n].in_edges.len() {
                if !self.nodes[n].in_queues[j].is_empty() {
                    continue;
                }
                let src = match self.nodes[n].in_edges[j] {
                    Some(src) => src,
                    None => break 'fire,
                };
                match self.attempt_source(src)? {
                    Got::Event(e) => {
                        self.nodes[n].in_queues[j].push_back(e);
                        self.work += 1;
                    }
                    Got::Starved => break 'fire,
                    Got::Dead => {
                        self.finish_node(n)?;
                        break 'fire;
                    }
                }
            }
            self.step_node(n)?;
        }
        let mut fed = Vec::new();
        for o in 0..self.nodes[n].out_buffers.len() {
            if let Some(cons) = self.nodes[n].consumers[o] {
                while let Some(e) = self.nodes[n].out_buffers[o].pop_front() {
                    match cons {
                        Consumer::Node(m, j) => {
                            self.nodes[m].in_queues[j].push_back(e);
                            if !fed.contains(&m) {
                                fed.push(m);
                            }
                        }
                        Consumer::Output(p) => self.outputs[p].collected.push_back(e),
                    }
                }
            }
        }
        for m in fed {
            self.propagate(m)?;
        }
        Ok(())
    }

    pub fn push(&mut self, port: usize, e: Event) -> Result<(), EngineError> {
        if port >= self.inputs.len() {
            return Err(EngineError::BadPipe(format!("no input port {}", port)));
        }
        if self.inputs[port].ended {
            return Err(EngineError::Runtime(format!("push on ended input port {}", port)));
        }
        match self.inputs[port].consumer {
            Some((n, j)) => {
                self.nodes[n].in_queues[j].push_back(e);
                self.work += 1;
                self.propagate(n)
            }
            None => Ok(()),
        }
    }

    fn source_dead(&self, src: Source) -> bool {
        match src {
            Source::Port(p) => self.inputs[p].ended,
            Source::Node(m, o) => self.nodes[m].done && self.nodes[m].out_buffers[o].is_empty(),
        }
    }

    /// Ends one input trace and runs starvation to a fixpoint: every node
    /// that can no longer form a front is flushed, and its final output
    /// travels downstream, possibly starving others in turn.
    pub fn end_input(&mut self, port: usize) -> Result<(), EngineError> {
        if port >= self.inputs.len() {
            return Err(EngineError::BadPipe(format!("no input port {}", port)));
        }
        self.inputs[port].ended = true;
        loop {
            let mut changed = false;
            for n in 0..self.nodes.len() {
                if self.nodes[n].done || self.nodes[n].in_edges.is_empty() {
                    continue;
                }
                let starving = (0..self.nodes[n].in_edges.len()).any(|j| {
                    self.nodes[n].in_queues[j].is_empty()
                        && match self.nodes[n].in_edges[j] {
                            Some(src) => self.source_dead(src),
                            None => false,
                        }
                });
                if starving {
                    self.finish_node(n)?;
                    self.propagate(n)?;
                    changed = true;
                }
            }
            if !changed {
                return Ok(());
            }
        }
    }

    fn attempt_source(&mut self, src: Source) -> Result<Got, EngineError> {
        match src {
            Source::Port(p) => Ok(if self.inputs[p].ended { Got::Dead } else { Got::Starved }),
            Source::Node(n, o) => self.attempt_node(n, o),
        }
    }

    /// One lazy production attempt on a node output.
    fn attempt_node(&mut self, n: NodeId, o: usize) -> Result<Got, EngineError> {
        if let Some(e) = self.nodes[n].out_buffers[o].pop_front() {
            return Ok(Got::Event(e));
        }
        if self.nodes[n].done {
            return Ok(Got::Dead);
        }
        for j in 0..self.nodes[n].in_edges.len() {
            if !self.nodes[n].in_queues[j].is_empty() {
                continue;
            }
            let src = self.nodes[n].in_edges[j]
                .ok_or_else(|| EngineError::Runtime(format!("input {} of node {} is unconnected", j, n)))?;
            match self.attempt_source(src)? {
                Got::Event(e) => {
                    self.nodes[n].in_queues[j].push_back(e);
                    self.work += 1;
                }
                Got::Starved => return Ok(Got::Starved),
                Got::Dead => {
                    self.finish_node(n)?;
                    return Ok(match self.nodes[n].out_buffers[o].pop_front() {
                        Some(e) => Got::Event(e),
                        None => Got::Dead,
                    });
                }
            }
        }
        self.step_node(n)?;
        Ok(match self.nodes[n].out_buffers[o].pop_front() {
            Some(e) => Got::Event(e),
            None => {
                if self.nodes[n].done {
                    Got::Dead
                } else {
                    Got::Starved
                }
            }
        })
    }

    fn record_mode(&mut self, port: usize, mode: PullMode) -> Result<(), EngineError> {
        match self.outputs[port].mode {
            None => {
                self.outputs[port].mode = Some(mode);
                Ok(())
            }
            Some(m) if m == mode => Ok(()),
            Some(_) => Err(EngineError::MixedPullModes),
        }
    }

    fn pull_inner(&mut self, port: usize) -> Result<Pulled, EngineError> {
        if let Some(e) = self.outputs[port].collected.pop_front() {
            return Ok(Pulled::Event(e));
        }
        let (n, o) = self.outputs[port].source;
        Ok(match self.attempt_node(n, o)? {
            Got::Event(e) => Pulled::Event(e),
            Got::Starved => Pulled::Maybe,
            Got::Dead => Pulled::No,
        })
    }

    /// Soft pull: one production attempt, may answer `Maybe`.
    pub fn pull(&mut self, port: usize) -> Result<Pulled, EngineError> {
        if port >= self.outputs.len() {
            return Err(EngineError::BadPipe(format!("no output port {}", port)));
        }
        self.record_mode(port, PullMode::Soft)?;
        self.pull_inner(port)
    }

    /// Hard pull: retries soft pulls until an event or a definitive end.
    pub fn pull_hard(&mut self, port: usize) -> Result<Option<Event>, EngineError> {
        if port >= self.outputs.len() {
            return Err(EngineError::BadPipe(format!("no output port {}", port)));
        }
        self.record_mode(port, PullMode::Hard)?;
        loop {
            let before = self.work;
            match self.pull_inner(port)? {
                Pulled::Event(e) => return Ok(Some(e)),
                Pulled::No => return Ok(None),
                Pulled::Maybe => {
                    if self.work == before {
                        return Err(EngineError::Runtime(
                            "hard pull stalled on an input port with no pending event".into(),
                        ));
                    }
                }
            }
        }
    }

    /// A structural copy with every processor reset to initial state.
    pub fn duplicate_graph(&self) -> Graph {
        let mut g = Graph::new();
        for node in &self.nodes {
            g.add(node.proc.duplicate());
        }
        for _ in &self.inputs {
            g.add_input_port();
        }
        for (n, node) in self.nodes.iter().enumerate() {
            for (j, edge) in node.in_edges.iter().enumerate() {
                match edge {
                    Some(Source::Port(p)) => g.connect_input(*p, n, j).expect("rewire"),
                    Some(Source::Node(m, o)) => g.connect(*m, *o, n, j).expect("rewire"),
                    None => {}
                }
            }
        }
        for out in &self.outputs {
            g.add_output_port(out.source.0, out.source.1).expect("rewire");
        }
        g
    }

    /// Pops one event collected at an output port during pushes.
    pub fn pop_output(&mut self, port: usize) -> Option<Event> {
        self.outputs[port].collected.pop_front()
    }

    fn output_dead(&self, port: usize) -> bool {
        let (n, o) = self.outputs[port].source;
        self.outputs[port].collected.is_empty()
            && self.nodes[n].done
            && self.nodes[n].out_buffers[o].is_empty()
    }
}

impl Processor for Graph {
    fn input_arity(&self) -> usize {
        self.inputs.len()
    }

    fn output_arity(&self) -> usize {
        self.outputs.len()
    }

    fn step(&mut self, front: &[Event]) -> Result<StepResult, EngineError> {
        for (i, e) in front.iter().enumerate() {
            self.push(i, e.clone())?;
        }
        if self.inputs.is_empty() {
            // A source graph is driven by demand, one production per step.
            for p in 0..self.outputs.len() {
                if let Pulled::Event(e) = self.pull_inner(p)? {
                    self.outputs[p].collected.push_back(e);
                }
            }
        }
        self.collect_fronts(false)
    }

    fn flush(&mut self) -> Result<StepResult, EngineError> {
        for p in 0..self.inputs.len() {
            if !self.inputs[p].ended {
                self.end_input(p)?;
            }
        }
        let mut r = self.collect_fronts(true)?;
        r.halt = true;
        Ok(r)
    }

    fn duplicate(&self) -> Box<dyn Processor> {
        Box::new(self.duplicate_graph())
    }

    fn set_context(&mut self, name: &str, value: Event) {
        for node in &mut self.nodes {
            node.proc.set_context(name, value.clone());
        }
    }
}

impl Graph {
    /// Zips collected output events into fronts, one event per output
    /// port. With `rest` set, trailing unmatched events are an error
    /// surface we silently drop, mirroring pipes left unread at the end
    /// of a trace.
    fn collect_fronts(&mut self, rest: bool) -> Result<StepResult, EngineError> {
        let mut fronts = Vec::new();
        while !self.outputs.is_empty() && self.outputs.iter().all(|o| !o.collected.is_empty()) {
            fronts.push(
                (0..self.outputs.len())
                    .map(|p| self.outputs[p].collected.pop_front().unwrap())
                    .collect(),
            );
        }
        if rest {
            for o in &mut self.outputs {
                o.collected.clear();
            }
        }
        let halt = (0..self.outputs.len()).all(|p| self.output_dead(p));
        Ok(StepResult { fronts, halt })
    }
}
