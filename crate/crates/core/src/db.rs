//! Relations of constant tuples and CSV ingestion.
//!
//! CSV files are header-less and comma-separated with no quoting; every row
//! becomes one fact. When a relation is declared with an annotation column,
//! the trailing column is split off and returned as raw literals to be parsed
//! against the semiring later. Facts are sets: duplicate rows are rejected.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::consts::{ConstId, ConstTable};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{relation} row {row}: expected {expected} columns, found {found}")]
    ArityMismatch { relation: String, row: usize, expected: usize, found: usize },
    #[error("{relation} row {row}: duplicate fact")]
    DuplicateFact { relation: String, row: usize },
    #[error("relation {relation}: empty value in row {row}")]
    EmptyValue { relation: String, row: usize },
}

/// A named relation: a set of constant tuples of fixed arity.
#[derive(Clone, Debug)]
pub struct Relation {
    pub name: String,
    pub arity: usize,
    pub facts: Vec<Vec<ConstId>>,
}

impl Relation {
    pub fn new(name: impl Into<String>, arity: usize) -> Relation {
        Relation { name: name.into(), arity, facts: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }
}

/// Loads a relation from a CSV file. With `annot` set, each row carries one
/// extra trailing column returned as the raw annotation literals, in fact
/// order.
pub fn load_relation(
    path: &Path,
    name: &str,
    arity: usize,
    annot: bool,
    consts: &mut ConstTable,
) -> Result<(Relation, Option<Vec<String>>), LoadError> {
    let text = fs::read_to_string(path)
        .map_err(|e| LoadError::Io { path: path.display().to_string(), source: e })?;
    load_relation_str(&text, name, arity, annot, consts)
}

pub fn load_relation_str(
    text: &str,
    name: &str,
    arity: usize,
    annot: bool,
    consts: &mut ConstTable,
) -> Result<(Relation, Option<Vec<String>>), LoadError> {
    let mut rel = Relation::new(name, arity);
    let mut annots = if annot { Some(Vec::new()) } else { None };
    let mut seen: HashSet<Vec<ConstId>> = HashSet::new();
    let expected = arity + usize::from(annot);
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != expected {
            return Err(LoadError::ArityMismatch {
                relation: name.to_string(),
                row,
                expected,
                found: cols.len(),
            });
        }
        if cols.iter().any(|c| c.is_empty()) {
            return Err(LoadError::EmptyValue { relation: name.to_string(), row });
        }
        let fact: Vec<ConstId> = cols[..arity].iter().map(|c| consts.intern(c)).collect();
        if !seen.insert(fact.clone()) {
            return Err(LoadError::DuplicateFact { relation: name.to_string(), row });
        }
        if let Some(list) = annots.as_mut() {
            list.push(cols[arity].to_string());
        }
        rel.facts.push(fact);
    }
    Ok((rel, annots))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_facts() {
        let mut t = ConstTable::new();
        let (rel, ann) = load_relation_str("1,5\n2,5", "R", 2, false, &mut t).unwrap();
        assert_eq!(rel.len(), 2);
        assert!(ann.is_none());
    }

    #[test]
    fn annotation_column_split_off() {
        let mut t = ConstTable::new();
        let text = "1,1,1\n1,31,31\n1,50,50\n2,5,5\n1,90,90";
        let (rel, ann) = load_relation_str(text, "Replays", 2, true, &mut t).unwrap();
        assert_eq!(rel.len(), 5);
        assert_eq!(ann.unwrap(), vec!["1", "31", "50", "5", "90"]);
    }

    #[test]
    fn arity_mismatch_reports_row() {
        let mut t = ConstTable::new();
        let err = load_relation_str("1,2,3", "R", 2, false, &mut t).unwrap_err();
        assert!(matches!(err, LoadError::ArityMismatch { row: 1, expected: 2, found: 3, .. }));
    }

    #[test]
    fn duplicates_rejected() {
        let mut t = ConstTable::new();
        let err = load_relation_str("1,2\n1,2", "R", 2, false, &mut t).unwrap_err();
        assert!(matches!(err, LoadError::DuplicateFact { row: 2, .. }));
    }
}
