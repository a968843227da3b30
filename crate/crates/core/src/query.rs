//! Query AST: atoms over a schema plus an ordered head.
//!
//! The head is a sequence of entries read left to right; it fixes both the
//! shape of an answer tuple and the lexicographic order over answers. Besides
//! plain variables the head may carry one `*` placeholder (the annotation of
//! the answer goes in that slot) or aggregate entries. Several aggregates are
//! allowed only as a trailing block; a `*` or an interior aggregate must be
//! unique.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

pub type Var = String;

/// Aggregate functions supported in heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggFunc {
    Count,
    CountD,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggFunc {
    pub fn name(&self) -> &'static str {
        match self {
            AggFunc::Count => "Count",
            AggFunc::CountD => "CountD",
            AggFunc::Sum => "Sum",
            AggFunc::Avg => "Avg",
            AggFunc::Min => "Min",
            AggFunc::Max => "Max",
        }
    }

    pub fn from_name(s: &str) -> Option<AggFunc> {
        Some(match s {
            "Count" => AggFunc::Count,
            "CountD" => AggFunc::CountD,
            "Sum" => AggFunc::Sum,
            "Avg" => AggFunc::Avg,
            "Min" => AggFunc::Min,
            "Max" => AggFunc::Max,
            _ => return None,
        })
    }

    /// Count takes no argument, every other aggregate takes exactly one.
    pub fn takes_argument(&self) -> bool {
        !matches!(self, AggFunc::Count)
    }
}

/// One position of the head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HeadEntry {
    Var(Var),
    Star,
    Agg { func: AggFunc, arg: Option<Var> },
}

impl HeadEntry {
    pub fn is_computed(&self) -> bool {
        !matches!(self, HeadEntry::Var(_))
    }
}

/// A relational atom: relation name applied to a list of variables.
/// Constants inside atoms are out of scope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub relation: String,
    pub terms: Vec<Var>,
}

impl Atom {
    pub fn new(relation: impl Into<String>, terms: Vec<&str>) -> Atom {
        Atom { relation: relation.into(), terms: terms.into_iter().map(|s| s.to_string()).collect() }
    }

    /// Distinct variables of the atom, in first-occurrence order.
    pub fn var_set(&self) -> Vec<&Var> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in &self.terms {
            if seen.insert(t) {
                out.push(t);
            }
        }
        out
    }
}

/// A conjunctive query with an ordered head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub name: String,
    pub head: Vec<HeadEntry>,
    pub body: Vec<Atom>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("head variable `{0}` does not occur in the body")]
    UnboundHeadVar(String),
    #[error("head contains two `*` entries")]
    TwoStars,
    #[error("head variable `{0}` appears twice")]
    DuplicateHeadVar(String),
    #[error("aggregate argument `{0}` does not occur in the body")]
    AggArgNotInBody(String),
    #[error("aggregate argument `{0}` must be existential, but it is a head variable")]
    AggArgNotExistential(String),
    #[error("{0} takes no argument")]
    UnexpectedAggArg(&'static str),
    #[error("{0} requires exactly one argument")]
    MissingAggArg(&'static str),
    #[error("multiple computed entries are only allowed as a trailing aggregate block")]
    InteriorMultiComputed,
    #[error("atom {0} has no variables")]
    EmptyAtom(String),
}

impl Query {
    pub fn new(name: impl Into<String>, head: Vec<HeadEntry>, body: Vec<Atom>) -> Result<Query, QueryError> {
        let q = Query { name: name.into(), head, body };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        let body_vars = self.body_vars();
        for atom in &self.body {
            if atom.terms.is_empty() {
                return Err(QueryError::EmptyAtom(atom.relation.clone()));
            }
        }
        let mut seen_star = false;
        let mut seen_head: BTreeSet<&Var> = BTreeSet::new();
        for e in &self.head {
            match e {
                HeadEntry::Var(v) => {
                    if !body_vars.contains(v) {
                        return Err(QueryError::UnboundHeadVar(v.clone()));
                    }
                    if !seen_head.insert(v) {
                        return Err(QueryError::DuplicateHeadVar(v.clone()));
                    }
                }
                HeadEntry::Star => {
                    if seen_star {
                        return Err(QueryError::TwoStars);
                    }
                    seen_star = true;
                }
                HeadEntry::Agg { func, arg } => match (func.takes_argument(), arg) {
                    (false, Some(_)) => return Err(QueryError::UnexpectedAggArg(func.name())),
                    (true, None) => return Err(QueryError::MissingAggArg(func.name())),
                    (true, Some(a)) => {
                        if !body_vars.contains(a) {
                            return Err(QueryError::AggArgNotInBody(a.clone()));
                        }
                    }
                    (false, None) => {}
                },
            }
        }
        // Aggregate arguments must be existential.
        for e in &self.head {
            if let HeadEntry::Agg { arg: Some(a), .. } = e {
                if self.head.iter().any(|h| matches!(h, HeadEntry::Var(v) if v == a)) {
                    return Err(QueryError::AggArgNotExistential(a.clone()));
                }
            }
        }
        // Computed entries: either a single one anywhere, or all trailing.
        let computed: Vec<usize> =
            self.head.iter().enumerate().filter(|(_, e)| e.is_computed()).map(|(i, _)| i).collect();
        if computed.len() > 1 {
            let trailing = computed[0] == self.head.len() - computed.len();
            let all_aggs = computed
                .iter()
                .all(|&i| matches!(self.head[i], HeadEntry::Agg { .. }));
            if !trailing || !all_aggs {
                return Err(QueryError::InteriorMultiComputed);
            }
        }
        Ok(())
    }

    /// Free variables: head variables, in head order.
    pub fn free_vars(&self) -> Vec<Var> {
        self.head
            .iter()
            .filter_map(|e| match e {
                HeadEntry::Var(v) => Some(v.clone()),
                _ => None,
            })
            .collect()
    }

    /// All body variables.
    pub fn body_vars(&self) -> BTreeSet<Var> {
        self.body.iter().flat_map(|a| a.terms.iter().cloned()).collect()
    }

    /// Existential variables: body variables that are not free.
    pub fn existential_vars(&self) -> BTreeSet<Var> {
        let free: BTreeSet<Var> = self.free_vars().into_iter().collect();
        self.body_vars().into_iter().filter(|v| !free.contains(v)).collect()
    }

    /// Position of the unique computed entry, if there is exactly one.
    pub fn star_position(&self) -> Option<usize> {
        let mut it = self.head.iter().enumerate().filter(|(_, e)| e.is_computed());
        match (it.next(), it.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    pub fn computed_entries(&self) -> Vec<(usize, &HeadEntry)> {
        self.head.iter().enumerate().filter(|(_, e)| e.is_computed()).collect()
    }

    /// True when every body variable is free.
    pub fn is_full(&self) -> bool {
        self.existential_vars().is_empty()
    }

    pub fn is_self_join_free(&self) -> bool {
        let mut names = BTreeSet::new();
        self.body.iter().all(|a| names.insert(&a.relation))
    }

    /// The query with all computed entries removed from the head.
    pub fn drop_computed(&self) -> Query {
        Query {
            name: self.name.clone(),
            head: self.head.iter().filter(|e| !e.is_computed()).cloned().collect(),
            body: self.body.clone(),
        }
    }

    /// Variables of `z⃗`: head variables after the unique computed entry.
    pub fn vars_after_star(&self) -> Vec<Var> {
        match self.star_position() {
            None => Vec::new(),
            Some(p) => self.head[p + 1..]
                .iter()
                .filter_map(|e| match e {
                    HeadEntry::Var(v) => Some(v.clone()),
                    _ => None,
                })
                .collect(),
        }
    }

    /// Variables of `x⃗`: head variables before the unique computed entry.
    pub fn vars_before_star(&self) -> Vec<Var> {
        match self.star_position() {
            None => self.free_vars(),
            Some(p) => self.head[..p]
                .iter()
                .filter_map(|e| match e {
                    HeadEntry::Var(v) => Some(v.clone()),
                    _ => None,
                })
                .collect(),
        }
    }

    /// A fresh variable name not used anywhere in the query, derived from `base`.
    pub fn fresh_var(&self, base: &str) -> Var {
        let used = self.body_vars();
        if !used.contains(base) {
            return base.to_string();
        }
        for i in 0.. {
            let cand = format!("{base}{i}");
            if !used.contains(&cand) {
                return cand;
            }
        }
        unreachable!()
    }
}

impl fmt::Display for HeadEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadEntry::Var(v) => write!(f, "{v}"),
            HeadEntry::Star => write!(f, "*"),
            HeadEntry::Agg { func, arg } => match arg {
                Some(a) => write!(f, "{}({})", func.name(), a),
                None => write!(f, "{}()", func.name()),
            },
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.relation, self.terms.join(","))
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<String> = self.head.iter().map(|e| e.to_string()).collect();
        let body: Vec<String> = self.body.iter().map(|a| a.to_string()).collect();
        write!(f, "{}({}) :- {}.", self.name, head.join(","), body.join(", "))
    }
}
