//! Direct-access evaluation of conjunctive queries with grouping,
//! aggregation, and commutative-semiring annotations.
//!
//! Quasi-linear preprocessing builds a compact index over the answers of a
//! query; afterwards the i-th answer in the head's lexicographic order —
//! including the computed aggregate or annotation value — is retrieved in
//! logarithmic time. A static classifier decides which pipeline applies to a
//! given query, semiring, and annotation profile, or explains why none does.

pub mod access;
pub mod bench;
pub mod cli;
pub mod consts;
pub mod db;
pub mod gen;
pub mod hypergraph;
pub mod oracle;
pub mod parse;
pub mod planner;
pub mod query;
pub mod semiring;
pub mod translate;
pub mod rewrite;
pub mod vdb;
