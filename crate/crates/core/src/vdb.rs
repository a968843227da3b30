//! Annotated databases as consumed by the rewrite pipeline and the access
//! structures.
//!
//! Rows mix interned constants with semiring values: query rewrites widen
//! relations with columns holding annotation values, and from then on those
//! columns participate in ordering and hashing like any other column. Each
//! fact additionally carries its annotation τ(f).

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::consts::{ConstId, ConstOrder, ConstTable};
use crate::db::Relation;
use crate::semiring::{self, SemiringSpec, Value};

/// One column entry: a database constant or a semiring value.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Const(ConstId),
    Val(Box<Value>),
}

impl Cell {
    pub fn val(v: Value) -> Cell {
        Cell::Val(Box::new(v))
    }

    pub fn as_const(&self) -> Option<ConstId> {
        match self {
            Cell::Const(c) => Some(*c),
            Cell::Val(_) => None,
        }
    }

    pub fn as_value(&self) -> Option<&Value> {
        match self {
            Cell::Const(_) => None,
            Cell::Val(v) => Some(v),
        }
    }
}

/// Compares cells of the same column: constants under the frozen constant
/// order, values under the semiring order. Constants sort before values if a
/// column ever mixes them (well-formed pipelines never mix).
pub struct CellCmp<'a> {
    pub order: &'a ConstOrder,
    pub semiring: &'a SemiringSpec,
}

impl<'a> CellCmp<'a> {
    pub fn cmp(&self, a: &Cell, b: &Cell) -> Ordering {
        match (a, b) {
            (Cell::Const(x), Cell::Const(y)) => self.order.cmp(*x, *y),
            (Cell::Val(x), Cell::Val(y)) => semiring::compare(self.semiring, x, y),
            (Cell::Const(_), Cell::Val(_)) => Ordering::Less,
            (Cell::Val(_), Cell::Const(_)) => Ordering::Greater,
        }
    }

    pub fn cmp_rows(&self, a: &[Cell], b: &[Cell]) -> Ordering {
        for (x, y) in a.iter().zip(b.iter()) {
            let c = self.cmp(x, y);
            if c != Ordering::Equal {
                return c;
            }
        }
        a.len().cmp(&b.len())
    }
}

/// A relation whose rows may contain semiring values, with a per-row
/// annotation.
#[derive(Clone, Debug)]
pub struct VRelation {
    pub arity: usize,
    pub rows: Vec<Vec<Cell>>,
    pub tau: Vec<Value>,
}

impl VRelation {
    pub fn empty(arity: usize) -> VRelation {
        VRelation { arity, rows: Vec::new(), tau: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<Cell>, tau: Value) {
        debug_assert_eq!(row.len(), self.arity);
        self.rows.push(row);
        self.tau.push(tau);
    }

    pub fn from_relation(rel: &Relation, tau: Vec<Value>) -> VRelation {
        debug_assert_eq!(rel.facts.len(), tau.len());
        VRelation {
            arity: rel.arity,
            rows: rel.facts.iter().map(|f| f.iter().map(|&c| Cell::Const(c)).collect()).collect(),
            tau,
        }
    }
}

/// An annotated database over one semiring.
#[derive(Clone, Debug)]
pub struct VDatabase {
    pub semiring: SemiringSpec,
    pub relations: BTreeMap<String, VRelation>,
    /// Set when exactly one relation carries annotations other than 1̄;
    /// `None` with `all_one = true` means every fact is annotated 1̄.
    pub annotated_relation: Option<String>,
}

impl VDatabase {
    pub fn new(semiring: SemiringSpec) -> VDatabase {
        VDatabase { semiring, relations: BTreeMap::new(), annotated_relation: None }
    }

    pub fn rel(&self, name: &str) -> &VRelation {
        self.relations
            .get(name)
            .unwrap_or_else(|| panic!("relation {name} missing from database"))
    }

    /// Total number of facts.
    pub fn size(&self) -> usize {
        self.relations.values().map(|r| r.len()).sum()
    }

    /// Recomputes `annotated_relation` from the data: the set of relations
    /// carrying a non-1̄ annotation. Empty set leaves the field `None` (an
    /// all-1̄ database is locally annotated with respect to any relation).
    pub fn refresh_annotation_profile(&mut self) {
        let mut non_trivial: Vec<&String> = Vec::new();
        for (name, rel) in &self.relations {
            if rel.tau.iter().any(|v| !self.semiring.is_one(v)) {
                non_trivial.push(name);
            }
        }
        self.annotated_relation =
            if non_trivial.len() == 1 { Some(non_trivial[0].clone()) } else { None };
    }

    /// True when all facts outside `rel` carry 1̄.
    pub fn is_locally_annotated_at(&self, rel: &str) -> bool {
        self.relations.iter().all(|(name, r)| {
            name == rel || r.tau.iter().all(|v| self.semiring.is_one(v))
        })
    }

    pub fn all_one(&self) -> bool {
        self.relations
            .values()
            .all(|r| r.tau.iter().all(|v| self.semiring.is_one(v)))
    }
}

/// How a database's annotations are distributed, as the planner sees it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnnotationProfile {
    /// Every fact carries 1̄ (locally annotated with respect to any relation).
    AllOne,
    /// Exactly one relation carries non-1̄ annotations.
    LocallyAnnotated(String),
    /// Several relations carry non-1̄ annotations.
    General,
}

impl AnnotationProfile {
    pub fn of(db: &VDatabase) -> AnnotationProfile {
        let mut non_trivial: Vec<&String> = Vec::new();
        for (name, rel) in &db.relations {
            if rel.tau.iter().any(|v| !db.semiring.is_one(v)) {
                non_trivial.push(name);
            }
        }
        match non_trivial.len() {
            0 => AnnotationProfile::AllOne,
            1 => AnnotationProfile::LocallyAnnotated(non_trivial[0].clone()),
            _ => AnnotationProfile::General,
        }
    }
}

/// Renders a row the way the CLI prints answers.
pub fn render_row(row: &[Cell], consts: &ConstTable, s: &SemiringSpec) -> String {
    row.iter()
        .map(|c| match c {
            Cell::Const(id) => consts.name(*id).to_string(),
            Cell::Val(v) => semiring::render_value(s, v),
        })
        .collect::<Vec<_>>()
        .join(",")
}
