//! Evolution of tree-structured thoughts for formulaic alpha mining.
//!
//! The crate is organized bottom-up:
//!
//! - [`thought_tree`]: the hierarchical thought genome.
//! - [`dsl`]: the alpha expression language thoughts are grounded into.
//! - [`panel`] and [`data`]: market data panels, file IO, splits, synthetic data.
//! - [`eval`]: expression evaluation and IC / RankIC fitness.
//! - [`llm`]: text-generation backends and output extraction.
//! - [`operators`]: LLM-backed crossover, mutation and pruning of thoughts.
//! - [`evolution`]: the search loop, evaluation budget and run log.
//! - [`gp`]: a symbol-level genetic programming baseline over the same DSL.
//! - [`backtest`]: Top-K / Drop-M daily rebalance simulation.

pub mod backtest;
pub mod data;
pub mod dsl;
pub mod eval;
pub mod evolution;
pub mod gp;
pub mod llm;
pub mod operators;
pub mod panel;
pub mod thought_tree;

pub use dsl::{parse, AlphaExpr, DslError, Feature, Op};
pub use eval::{fitness, FitnessReport};
pub use panel::{Matrix, Panel};
pub use thought_tree::{NodePath, ThoughtNode, ThoughtTree};
