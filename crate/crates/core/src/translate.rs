//! Turning aggregate queries into star queries over annotated databases, and
//! assembling annotated databases from loaded relations.
//!
//! Each aggregate maps to a semiring: Count to counting, Sum to numeric, Min
//! and Max to the tropical semirings, CountD to the set semiring over a
//! declared domain, Avg to sum/count pairs. The aggregated value becomes the
//! annotation of one body atom (the carrier); every other fact is annotated
//! 1̄. When the aggregate argument occurs only in the carrier atom, that
//! column is projected away up front and the annotations of collapsing rows
//! are ⊕-combined, which keeps the query full whenever it was full apart from
//! the argument.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::consts::ConstTable;
use crate::db::Relation;
use crate::query::{AggFunc, Atom, HeadEntry, Query, Var};
use crate::semiring::{
    self, SemiringError, SemiringKind, SemiringSpec, SetDomain, Value,
};
use crate::vdb::{VDatabase, VRelation};

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("query has no aggregate entry")]
    NoAggregate,
    #[error("query has more than one aggregate entry")]
    MultipleAggregates,
    #[error("CountD requires a declared set domain")]
    CountDWithoutDomain,
    #[error("aggregate argument `{0}` occurs in no atom")]
    ArgumentInNoAtom(String),
    #[error("relation {relation} row {row}: aggregate input `{value}` is not numeric")]
    NonNumericValue { relation: String, row: usize, value: String },
    #[error(transparent)]
    Semiring(#[from] SemiringError),
    #[error("relation {0} referenced by the query was not loaded")]
    MissingRelation(String),
}

/// How facts receive their annotations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationRule {
    pub func: AggFunc,
    /// `None` for Count: every fact is annotated 1 and no atom is special.
    pub carrier: Option<CarrierRule>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CarrierRule {
    /// Relation whose facts carry the aggregated value.
    pub relation: String,
    /// Column of the aggregate argument in that relation.
    pub agg_col: usize,
    /// Position groups that must bind equal values (the carrier atom repeats
    /// a variable); facts violating them never match the atom.
    pub equal_groups: Vec<Vec<usize>>,
    /// Set when the argument column is projected away: the new relation name
    /// and the columns that survive.
    pub projection: Option<Projection>,
}

impl CarrierRule {
    fn consistent(&self, fact: &[crate::consts::ConstId]) -> bool {
        self.equal_groups
            .iter()
            .all(|g| g.windows(2).all(|w| fact[w[0]] == fact[w[1]]))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Projection {
    pub new_relation: String,
    pub keep_cols: Vec<usize>,
}

/// Translates an aggregate query (exactly one aggregate entry) into a star
/// query plus the semiring and annotation rule realizing the aggregate.
pub fn translate_acq(
    q: &Query,
    set_domain: Option<&SetDomain>,
) -> Result<(Query, SemiringKind, AnnotationRule), TranslateError> {
    let aggs: Vec<(usize, AggFunc, Option<Var>)> = q
        .head
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match e {
            HeadEntry::Agg { func, arg } => Some((i, *func, arg.clone())),
            _ => None,
        })
        .collect();
    let (pos, func, arg) = match aggs.as_slice() {
        [] => return Err(TranslateError::NoAggregate),
        [one] => one.clone(),
        _ => return Err(TranslateError::MultipleAggregates),
    };

    let kind = match func {
        AggFunc::Count => SemiringKind::Counting,
        AggFunc::Sum => SemiringKind::Numeric,
        AggFunc::Min => SemiringKind::MinTropical,
        AggFunc::Max => SemiringKind::MaxTropical,
        AggFunc::Avg => SemiringKind::AvgPair,
        AggFunc::CountD => match set_domain {
            Some(dom) => SemiringKind::SetSemiring(dom.clone()),
            None => return Err(TranslateError::CountDWithoutDomain),
        },
    };

    let mut head = q.head.clone();
    head[pos] = HeadEntry::Star;
    let mut body = q.body.clone();

    let rule = match arg {
        None => AnnotationRule { func, carrier: None },
        Some(w) => {
            // Carrier: the atom containing w with the fewest distinct
            // variables, ties by body order.
            let mut best: Option<(usize, usize)> = None;
            for (i, atom) in body.iter().enumerate() {
                if atom.terms.contains(&w) {
                    let width = atom.var_set().len();
                    if best.map_or(true, |(bw, _)| width < bw) {
                        best = Some((width, i));
                    }
                }
            }
            let (_, carrier_idx) = best.ok_or_else(|| TranslateError::ArgumentInNoAtom(w.clone()))?;
            let carrier_atom = body[carrier_idx].clone();
            let agg_col = carrier_atom.terms.iter().position(|t| t == &w).unwrap();

            let private = body
                .iter()
                .enumerate()
                .all(|(i, a)| i == carrier_idx || !a.terms.contains(&w));
            // First position of each distinct non-argument variable, plus the
            // equality constraints repeated variables impose on facts.
            let mut keep_cols: Vec<usize> = Vec::new();
            let mut kept_vars: Vec<Var> = Vec::new();
            let mut groups: BTreeMap<&Var, Vec<usize>> = BTreeMap::new();
            for (c, t) in carrier_atom.terms.iter().enumerate() {
                groups.entry(t).or_default().push(c);
                if t != &w && !kept_vars.contains(t) {
                    kept_vars.push(t.clone());
                    keep_cols.push(c);
                }
            }
            let equal_groups: Vec<Vec<usize>> =
                groups.into_values().filter(|g| g.len() > 1).collect();

            let projection = if private && !keep_cols.is_empty() {
                let new_relation = fresh_relation_name(q, &carrier_atom.relation);
                body[carrier_idx] =
                    Atom { relation: new_relation.clone(), terms: kept_vars };
                Some(Projection { new_relation, keep_cols })
            } else {
                None
            };
            AnnotationRule {
                func,
                carrier: Some(CarrierRule {
                    relation: carrier_atom.relation.clone(),
                    agg_col,
                    equal_groups,
                    projection,
                }),
            }
        }
    };

    let star_query = Query::new(q.name.clone(), head, body).expect("translation preserves validity");
    Ok((star_query, kind, rule))
}

fn fresh_relation_name(q: &Query, base: &str) -> String {
    let mut cand = format!("{base}P");
    let mut i = 0;
    while q.body.iter().any(|a| a.relation == cand) {
        i += 1;
        cand = format!("{base}P{i}");
    }
    cand
}

/// Lifts one constant into the value the aggregate assigns to its fact.
fn lift_value(
    func: AggFunc,
    spec: &SemiringSpec,
    constant: &str,
    relation: &str,
    row: usize,
) -> Result<Value, TranslateError> {
    let non_numeric = || TranslateError::NonNumericValue {
        relation: relation.to_string(),
        row,
        value: constant.to_string(),
    };
    Ok(match func {
        AggFunc::Count => spec.one.clone(),
        AggFunc::Sum => Value::Num(semiring::parse_rational(constant).ok_or_else(non_numeric)?),
        AggFunc::Min => Value::MinTrop(crate::semiring::Trop::Finite(
            semiring::parse_rational(constant).ok_or_else(non_numeric)?,
        )),
        AggFunc::Max => Value::MaxTrop(crate::semiring::Trop::Finite(
            semiring::parse_rational(constant).ok_or_else(non_numeric)?,
        )),
        AggFunc::Avg => Value::Avg {
            sum: semiring::parse_rational(constant).ok_or_else(non_numeric)?,
            count: num::BigUint::from(1u32),
        },
        AggFunc::CountD => match &spec.kind {
            SemiringKind::SetSemiring(dom) => Value::Set(dom.singleton(constant)?),
            _ => unreachable!("CountD implies the set semiring"),
        },
    })
}

/// Builds the annotated database realizing an aggregate's annotation rule.
pub fn annotate_with_rule(
    relations: &BTreeMap<String, Relation>,
    rule: &AnnotationRule,
    spec: &SemiringSpec,
    consts: &ConstTable,
) -> Result<VDatabase, TranslateError> {
    let mut db = VDatabase::new(spec.clone());
    for (name, rel) in relations {
        let is_carrier = rule.carrier.as_ref().is_some_and(|c| &c.relation == name);
        if !is_carrier {
            let tau = vec![spec.one.clone(); rel.len()];
            db.relations.insert(name.clone(), VRelation::from_relation(rel, tau));
            continue;
        }
        let carrier = rule.carrier.as_ref().unwrap();
        match &carrier.projection {
            None => {
                let mut tau = Vec::with_capacity(rel.len());
                for (i, fact) in rel.facts.iter().enumerate() {
                    let c = consts.name(fact[carrier.agg_col]);
                    tau.push(lift_value(rule.func, spec, c, name, i + 1)?);
                }
                db.relations.insert(name.clone(), VRelation::from_relation(rel, tau));
            }
            Some(proj) => {
                // Project the argument column away, ⊕-combining annotations
                // of rows that collapse. Rows that bind a repeated variable
                // inconsistently never match the atom and are skipped.
                let mut groups: BTreeMap<Vec<crate::consts::ConstId>, Value> = BTreeMap::new();
                for (i, fact) in rel.facts.iter().enumerate() {
                    if !carrier.consistent(fact) {
                        continue;
                    }
                    let c = consts.name(fact[carrier.agg_col]);
                    let v = lift_value(rule.func, spec, c, name, i + 1)?;
                    let key: Vec<_> = proj.keep_cols.iter().map(|&c| fact[c]).collect();
                    groups
                        .entry(key)
                        .and_modify(|acc| *acc = semiring::plus(spec, acc, &v))
                        .or_insert(v);
                }
                let mut out = VRelation::empty(proj.keep_cols.len());
                for (key, v) in groups {
                    out.push(key.into_iter().map(crate::vdb::Cell::Const).collect(), v);
                }
                db.relations.insert(proj.new_relation.clone(), out);
            }
        }
    }
    db.refresh_annotation_profile();
    Ok(db)
}

/// Builds an annotated database from raw annotation columns: relations with a
/// column get their literals parsed against the semiring, the rest are
/// annotated 1̄.
pub fn annotate_raw(
    relations: &BTreeMap<String, Relation>,
    raw: &BTreeMap<String, Vec<String>>,
    spec: &SemiringSpec,
) -> Result<VDatabase, TranslateError> {
    let mut db = VDatabase::new(spec.clone());
    for (name, rel) in relations {
        let tau = match raw.get(name) {
            Some(literals) => {
                let mut tau = Vec::with_capacity(rel.len());
                for lit in literals {
                    tau.push(semiring::parse_literal(spec, lit)?);
                }
                tau
            }
            None => vec![spec.one.clone(); rel.len()],
        };
        db.relations.insert(name.clone(), VRelation::from_relation(rel, tau));
    }
    db.refresh_annotation_profile();
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::db::load_relation_str;
    use crate::parse::parse_query;
    use crate::semiring::instantiate;

    fn world_cup_relations(consts: &mut ConstTable) -> BTreeMap<String, Relation> {
        let teams = "1,5\n2,5\n3,6\n4,7\n5,8";
        let goals = "1,1,31\n1,3,50\n1,3,75\n2,4,90\n2,4,9";
        let replays = "1,1\n1,31\n1,50\n2,5\n1,90";
        let mut rels = BTreeMap::new();
        for (name, text, arity) in
            [("Teams", teams, 2), ("Goals", goals, 3), ("Replays", replays, 2)]
        {
            let (rel, _) = load_relation_str(text, name, arity, false, consts).unwrap();
            rels.insert(name.to_string(), rel);
        }
        rels
    }

    #[test]
    fn sum_picks_smallest_carrier_and_annotates_it() {
        let q = parse_query("Q(c, Sum(t)) :- Teams(p,c), Goals(g,p,t), Replays(g,t).").unwrap();
        let (qs, kind, rule) = translate_acq(&q, None).unwrap();
        assert_eq!(kind, SemiringKind::Numeric);
        assert_eq!(qs.head[1], HeadEntry::Star);
        // t occurs in Goals and Replays; Replays has fewer variables.
        let carrier = rule.carrier.unwrap();
        assert_eq!(carrier.relation, "Replays");
        assert_eq!(carrier.agg_col, 1);
        // t also occurs in Goals, so no projection happens.
        assert!(carrier.projection.is_none());

        let mut consts = ConstTable::new();
        let rels = world_cup_relations(&mut consts);
        let spec = instantiate(kind);
        let (_, _, rule) = translate_acq(&q, None).unwrap();
        let db = annotate_with_rule(&rels, &rule, &spec, &consts).unwrap();
        assert_eq!(db.annotated_relation.as_deref(), Some("Replays"));
        let expected: Vec<Value> =
            [1, 31, 50, 5, 90].iter().map(|&n| Value::num_int(n)).collect();
        assert_eq!(db.rel("Replays").tau, expected);
        assert!(db.rel("Teams").tau.iter().all(|v| spec.is_one(v)));
    }

    #[test]
    fn count_annotates_everything_one() {
        let q =
            parse_query("Q(p,c,o,Count()) :- Teams(p,c), Sponsors(o,c), Goals(g,p,t).").unwrap();
        let (_, kind, rule) = translate_acq(&q, None).unwrap();
        assert_eq!(kind, SemiringKind::Counting);
        assert!(rule.carrier.is_none());

        let mut consts = ConstTable::new();
        let mut rels = world_cup_relations(&mut consts);
        let (sponsors, _) =
            load_relation_str("9,5\n9,6", "Sponsors", 2, false, &mut consts).unwrap();
        rels.insert("Sponsors".into(), sponsors);
        let spec = instantiate(kind);
        let db = annotate_with_rule(&rels, &rule, &spec, &consts).unwrap();
        assert_eq!(db.annotated_relation, None);
        assert!(db.all_one());
    }

    #[test]
    fn countd_needs_domain_and_uses_singletons() {
        let q = parse_query("Q(x, CountD(g)) :- R(x,g).").unwrap();
        assert!(matches!(translate_acq(&q, None), Err(TranslateError::CountDWithoutDomain)));

        let dom = SetDomain::new(vec!["7".into(), "8".into()]).unwrap();
        let (_, kind, rule) = translate_acq(&q, Some(&dom)).unwrap();
        let spec = instantiate(kind.clone());
        let mut consts = ConstTable::new();
        let (rel, _) = load_relation_str("1,7\n1,8\n2,7", "R", 2, false, &mut consts).unwrap();
        let mut rels = BTreeMap::new();
        rels.insert("R".to_string(), rel);
        let db = annotate_with_rule(&rels, &rule, &spec, &consts).unwrap();
        // g is private to R, so the column is projected away and singletons
        // union per remaining key.
        let carrier = rule.carrier.unwrap();
        let proj = carrier.projection.unwrap();
        let r = db.rel(&proj.new_relation);
        assert_eq!(r.arity, 1);
        assert_eq!(r.len(), 2);
        let masks: Vec<u64> = r
            .tau
            .iter()
            .map(|v| match v {
                Value::Set(m) => *m,
                _ => panic!(),
            })
            .collect();
        assert_eq!(masks, vec![0b11, 0b01]);
    }

    #[test]
    fn private_argument_is_projected() {
        let q = parse_query("Q(x1,x2,x3,Sum(w)) :- R(x1,x3), S(x2,x3), T(x3,w).").unwrap();
        let (qs, _, rule) = translate_acq(&q, None).unwrap();
        let carrier = rule.carrier.unwrap();
        assert_eq!(carrier.relation, "T");
        assert!(carrier.projection.is_some());
        // The star query is full now.
        assert!(qs.is_full());
        assert_eq!(qs.body[2].terms, vec!["x3".to_string()]);
    }

    #[test]
    fn unary_carrier_is_not_projected_away() {
        let q = parse_query("Q(x, Sum(w)) :- R(w), S(x).").unwrap();
        let (qs, _, rule) = translate_acq(&q, None).unwrap();
        let carrier = rule.carrier.unwrap();
        assert!(carrier.projection.is_none(), "projection would leave a nullary atom");
        assert!(!qs.is_full());
    }

    #[test]
    fn raw_literals_parse_or_fail() {
        let mut consts = ConstTable::new();
        let (rel, ann) = load_relation_str("1,abc", "R", 1, true, &mut consts).unwrap();
        let mut rels = BTreeMap::new();
        rels.insert("R".to_string(), rel);
        let mut raw = BTreeMap::new();
        raw.insert("R".to_string(), ann.unwrap());
        let spec = instantiate(SemiringKind::Numeric);
        assert!(matches!(
            annotate_raw(&rels, &raw, &spec),
            Err(TranslateError::Semiring(SemiringError::Literal { .. }))
        ));
    }
}
