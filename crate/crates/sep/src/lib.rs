//! An event stream processing engine with an extensible query language.

pub mod basic;
pub mod bench;
pub mod error;
pub mod esql;
pub mod event;
pub mod fsm;
pub mod function;
pub mod grammar;
pub mod graph;
pub mod io;
pub mod ltl;
pub mod processor;
pub mod trace_ops;
pub mod tuples;
